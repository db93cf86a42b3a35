"""Self-training bootstrap over raw text and distant supervision into
multi-instance multi-label bags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Sentence, Span
from .embeddings import EmbeddingTable
from .kb import KnowledgeBase
from .linker import (
    GazetteerRecognizer,
    TrainableSpanClassifier,
    generate_candidates,
    subgraph_link,
)


class DataGenError(Exception):
    pass


@dataclass(frozen=True)
class GenerationRound:
    round_index: int          # 1-based
    extracted_count: int
    recognizer: str


@dataclass(frozen=True)
class Bag:
    subject: str
    object: str
    labels: tuple[str, ...]       # sorted; empty = NA
    sentence_ids: tuple[str, ...]

    def is_na(self) -> bool:
        return not self.labels


@dataclass
class BootstrapConfig:
    max_rounds: int = 3
    knn_k: int = 10
    seed: int = 0
    count_multiplicity: bool = False
    classifier_feature_dim: int = 4096
    classifier_lr: float = 0.5
    classifier_epochs: int = 5
    classifier_negatives: int = 10


@dataclass
class DistantSupervisionConfig:
    max_bag_size: int = 32
    na_ratio: float = 1.0
    seed: int = 0


def _extract_once(raw_corpus: list[Sentence], kb: KnowledgeBase,
                  table: EmbeddingTable | None, recognizer, cfg: BootstrapConfig) -> list[Sentence]:
    """Tag, sub-graph link, and keep sentences with >=2 linked spans;
    unlinked spans are dropped and kept spans get the KB type of their
    entity."""
    kept: list[Sentence] = []
    for sentence in raw_corpus:
        spans = recognizer.recognize(sentence)
        cands = []
        for sp in spans:
            c = generate_candidates(sp, kb, table, cfg.knn_k)
            if c is not None:
                cands.append(c)
        decisions = subgraph_link(cands, kb, cfg.count_multiplicity)
        linked_spans: list[Span] = []
        for cand, decision in zip(cands, decisions):
            if decision is None:
                continue
            sp = cand.span
            linked_spans.append(Span(sp.start, sp.end, sp.surface,
                                     kb.entity_type(decision.entity),
                                     decision.entity, "subgraph"))
        if len(linked_spans) >= 2:
            kept.append(Sentence(sentence.id, sentence.tokens, linked_spans))
    return kept


def bootstrap_linked_corpus(raw_corpus: list[Sentence], kb: KnowledgeBase,
                            table: EmbeddingTable | None, cfg: BootstrapConfig
                            ) -> tuple[list[Sentence], list[GenerationRound]]:
    """Round 1 extracts with the alias gazetteer; later rounds retrain a span
    classifier on the previous round's labels and re-extract. Stops when the
    extracted-sentence count drops (previous corpus wins) or at the round
    cap; equal counts keep going."""
    if not raw_corpus:
        raise DataGenError("bootstrap needs a non-empty corpus")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    best = _extract_once(raw_corpus, kb, table, GazetteerRecognizer(kb), cfg)
    rounds = [GenerationRound(1, len(best), "gazetteer")]
    for round_index in range(2, cfg.max_rounds + 1):
        student = TrainableSpanClassifier(
            kb, cfg.classifier_feature_dim, cfg.classifier_lr,
            cfg.classifier_epochs, cfg.classifier_negatives)
        try:
            student.train(best, rng)
        except Exception as exc:
            raise DataGenError(f"round {round_index}: recognizer training failed: {exc}") from exc
        current = _extract_once(raw_corpus, kb, table, student, cfg)
        rounds.append(GenerationRound(round_index, len(current), f"classifier-round-{round_index}"))
        if len(current) < len(best):
            break
        best = current
    return best, rounds


def write_generation_report(rounds: list[GenerationRound], path) -> None:
    payload = {"rounds": [{"round": r.round_index, "extracted": r.extracted_count,
                           "recognizer": r.recognizer} for r in rounds]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def collect_pair_sentences(corpus: list[Sentence]) -> dict[tuple[str, str], list[str]]:
    """Every ordered pair of distinct linked entities -> ids of sentences
    where both occur, in corpus order, each sentence once per pair."""
    pairs: dict[tuple[str, str], list[str]] = {}
    for sentence in corpus:
        linked = sorted({sp.linked for sp in sentence.spans if sp.linked})
        for s in linked:
            for o in linked:
                if s == o:
                    continue
                pairs.setdefault((s, o), []).append(sentence.id)
    return pairs


def distant_supervision(corpus: list[Sentence], kb: KnowledgeBase,
                        cfg: DistantSupervisionConfig) -> list[Bag]:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    positives: list[Bag] = []
    negatives: list[Bag] = []
    pair_sentences = collect_pair_sentences(corpus)
    for (s, o) in sorted(pair_sentences):
        sids = pair_sentences[(s, o)]
        if len(sids) > cfg.max_bag_size:
            picks = rng.choice(len(sids), size=cfg.max_bag_size, replace=False)
            sids = [sids[i] for i in sorted(picks)]
        labels = tuple(sorted(kb.relations_between(s, o)))
        bag = Bag(s, o, labels, tuple(sids))
        (positives if labels else negatives).append(bag)
    keep_na = min(len(negatives), int(round(cfg.na_ratio * len(positives))))
    if keep_na < len(negatives):
        picks = rng.choice(len(negatives), size=keep_na, replace=False)
        negatives = [negatives[i] for i in sorted(picks)]
    return sorted(positives + negatives, key=lambda b: (b.subject, b.object))


def split_dataset(bags: list[Bag], ratios: tuple[float, float, float],
                  seed: int) -> tuple[list[Bag], list[Bag], list[Bag]]:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios sum to {sum(ratios)}, expected 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(bags))
    n = len(bags)
    cut1 = int(n * ratios[0])
    cut2 = int(n * (ratios[0] + ratios[1]))
    train = [bags[i] for i in order[:cut1]]
    valid = [bags[i] for i in order[cut1:cut2]]
    test = [bags[i] for i in order[cut2:]]
    return train, valid, test


def save_bags(bags: list[Bag], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for bag in bags:
            fh.write(json.dumps({"subject": bag.subject, "object": bag.object,
                                 "labels": list(bag.labels),
                                 "sentences": list(bag.sentence_ids)},
                                sort_keys=True) + "\n")


def load_bags(path) -> list[Bag]:
    bags = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                bags.append(Bag(rec["subject"], rec["object"],
                                tuple(rec["labels"]), tuple(rec["sentences"])))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataGenError(f"{path}:{lineno}: bad bag record ({exc})") from None
    return bags
