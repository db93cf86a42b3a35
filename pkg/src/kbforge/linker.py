"""Two-step entity linking: sub-graph disambiguation over KB connectivity,
then a neural context ranker for whatever the first step leaves open.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .corpus import Gazetteer, Sentence, Span, build_gazetteer, longest_ngram_match, make_span
from .embeddings import EmbeddingTable, entity_symbol, knn_candidates
from .kb import UNTYPED, KnowledgeBase


class LinkError(Exception):
    pass


@dataclass
class Candidate:
    span: Span
    entities: list[str]
    source: str  # dictionary | knn | both

    def __post_init__(self):
        if not self.entities:
            raise LinkError("candidate with no entities")
        if len(set(self.entities)) != len(self.entities):
            raise LinkError("duplicate candidate entities")


@dataclass
class LinkDecision:
    span: Span
    entity: str
    method: str  # subgraph | context
    score: float


def _span_type(kb: KnowledgeBase, surface: str) -> str:
    types = {kb.entity_type(e) for e in kb.entities_by_alias(surface)}
    return next(iter(types)) if len(types) == 1 else UNTYPED


class GazetteerRecognizer:
    def __init__(self, kb: KnowledgeBase):
        self.kb = kb
        self.gazetteer = build_gazetteer(kb)

    def recognize(self, sentence: Sentence) -> list[Span]:
        spans = longest_ngram_match(sentence, self.gazetteer)
        for sp in spans:
            sp.span_type = _span_type(self.kb, sp.surface)
        return spans


class TrainableSpanClassifier:
    """Logistic model over hashed span features (surface, length, gazetteer
    membership, context words within +-2). Student model of the self-training
    loop; proposes all n-grams up to the longest span seen in training and
    keeps non-overlapping ones scoring above 0.5."""

    def __init__(self, kb: KnowledgeBase, feature_dim: int = 4096, lr: float = 0.5,
                 epochs: int = 5, negatives_per_sentence: int = 10):
        self.kb = kb
        self.gazetteer = build_gazetteer(kb)
        self.feature_dim = feature_dim
        self.lr = lr
        self.epochs = epochs
        self.negatives_per_sentence = negatives_per_sentence
        self.weights = np.zeros(feature_dim, dtype=np.float64)
        self.bias = 0.0
        self.max_span_len = 1
        self.trained = False

    def _bucket(self, feat: str) -> int:
        return zlib.crc32(feat.encode("utf-8")) % self.feature_dim

    def _features(self, sentence: Sentence, start: int, end: int) -> list[int]:
        toks = sentence.tokens
        surface = sentence.surface(start, end)

        def ctx(i: int) -> str:
            return toks[i].surface if 0 <= i < len(toks) else "<s>"

        feats = [
            f"surf={surface}",
            f"len={end - start + 1}",
            f"gaz={surface in self.gazetteer}",
            f"l1={ctx(start - 1)}",
            f"l2={ctx(start - 2)}",
            f"r1={ctx(end + 1)}",
            f"r2={ctx(end + 2)}",
        ]
        return [self._bucket(f) for f in feats]

    def _ngrams(self, sentence: Sentence):
        n = len(sentence.tokens)
        for width in range(1, min(self.max_span_len, n) + 1):
            for start in range(n - width + 1):
                yield start, start + width - 1

    def _prob(self, idx: list[int]) -> float:
        z = self.weights[idx].sum() + self.bias
        return 1.0 / (1.0 + np.exp(-z))

    def train(self, corpus: list[Sentence], rng: np.random.Generator) -> None:
        gold_lens = [sp.end - sp.start + 1 for s in corpus for sp in s.spans]
        if not gold_lens:
            raise LinkError("no labeled spans to train the span classifier on")
        self.max_span_len = max(gold_lens)
        items: list[tuple[list[int], float]] = []
        for sentence in corpus:
            gold = {(sp.start, sp.end) for sp in sentence.spans}
            for se in sorted(gold):
                items.append((self._features(sentence, *se), 1.0))
            negs = [se for se in self._ngrams(sentence) if se not in gold]
            if len(negs) > self.negatives_per_sentence:
                picks = rng.choice(len(negs), size=self.negatives_per_sentence, replace=False)
                negs = [negs[i] for i in sorted(picks)]
            for se in negs:
                items.append((self._features(sentence, *se), 0.0))
        for _ in range(self.epochs):
            for i in rng.permutation(len(items)):
                idx, y = items[i]
                g = self._prob(idx) - y
                self.weights[idx] -= self.lr * g
                self.bias -= self.lr * g
        self.trained = True

    def recognize(self, sentence: Sentence) -> list[Span]:
        if not self.trained:
            raise LinkError("span classifier used before training")
        scored = []
        for start, end in self._ngrams(sentence):
            p = self._prob(self._features(sentence, start, end))
            if p > 0.5:
                scored.append((p, start, end))
        scored.sort(key=lambda t: (-t[0], t[1], t[1] - t[2]))
        taken: list[tuple[int, int]] = []
        for _, start, end in scored:
            if all(end < s or e < start for s, e in taken):
                taken.append((start, end))
        out = []
        for start, end in sorted(taken):
            sp = make_span(sentence, start, end)
            sp.span_type = _span_type(self.kb, sp.surface)
            out.append(sp)
        return out


def generate_candidates(span: Span, kb: KnowledgeBase, table: EmbeddingTable | None,
                        k: int) -> Candidate | None:
    """Dictionary hits (lexicographic) first, then embedding neighbors by
    distance; None when both sources come up empty."""
    dict_hits = sorted(kb.entities_by_alias(span.surface))
    knn_hits: list[str] = []
    if table is not None and k > 0:
        for eid, _dist in knn_candidates(table, span.surface, k):
            if eid in kb.entities and eid not in dict_hits and eid not in knn_hits:
                knn_hits.append(eid)
    if not dict_hits and not knn_hits:
        return None
    source = "both" if dict_hits and knn_hits else ("dictionary" if dict_hits else "knn")
    return Candidate(span, dict_hits + knn_hits, source)


def subgraph_link(sentence_candidates: list[Candidate], kb: KnowledgeBase,
                  count_multiplicity: bool = False) -> list[LinkDecision | None]:
    """Connection counting over cross-span candidate pairs; a span links to
    its strictly unique top-count candidate when that count is positive."""
    counts: list[dict[str, float]] = [dict.fromkeys(c.entities, 0.0)
                                      for c in sentence_candidates]

    def weight(a: str, b: str) -> float:
        if not kb.connected(a, b):
            return 0.0
        if not count_multiplicity:
            return 1.0
        return float(len(kb.relations_between(a, b)) + len(kb.relations_between(b, a)))

    for i in range(len(sentence_candidates)):
        for j in range(i + 1, len(sentence_candidates)):
            for a in sentence_candidates[i].entities:
                for b in sentence_candidates[j].entities:
                    w = weight(a, b)
                    if w:
                        counts[i][a] += w
                        counts[j][b] += w

    decisions: list[LinkDecision | None] = []
    for cand, count in zip(sentence_candidates, counts):
        best = max(count.values())
        top = [e for e in cand.entities if count[e] == best]
        if best > 0 and len(top) == 1:
            decisions.append(LinkDecision(cand.span, top[0], "subgraph", best))
        else:
            decisions.append(None)
    return decisions


@dataclass
class ELConfig:
    hidden: int = 16        # per direction; v_c is 2*hidden
    mlp_hidden: int = 32
    margin: float = 0.2
    learning_rate: float = 5e-3
    epochs: int = 3
    knn_k: int = 10
    seed: int = 0
    max_items: int | None = None


class ContextLinkerModel:
    """BiLSTM sentence encoder + sigmoid-bounded two-layer scorer over
    [sentence vector; span word vector; entity vector]."""

    def __init__(self, table: EmbeddingTable, cfg: ELConfig):
        self.table = table
        self.cfg = cfg
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        d = table.dim
        self.encoder = nn.BiLSTM(d, cfg.hidden, rng, "el.encoder")
        self.scorer = nn.TwoLayerScorer(2 * cfg.hidden + 2 * d, cfg.mlp_hidden, 1,
                                        rng, "el.scorer")
        self.trained = False
        self.oov_count = 0
        self.epoch_losses: list[float] = []

    def parameters(self):
        return self.encoder.parameters() + self.scorer.parameters()

    def _word_vec(self, surface: str) -> np.ndarray:
        if surface in self.table.index:
            return self.table.vector(surface)
        self.oov_count += 1
        return np.zeros(self.table.dim, dtype=np.float32)

    def _sentence_input(self, sentence: Sentence) -> nn.Tensor:
        cols = np.stack([self._word_vec(t.surface) for t in sentence.tokens], axis=1)
        return nn.Tensor(cols)

    def _span_vec(self, span: Span) -> nn.Tensor:
        vecs = [self._word_vec(w) for w in span.surface.split()]
        return nn.Tensor(np.mean(vecs, axis=0).reshape(-1, 1))

    def _entity_vec(self, entity: str) -> nn.Tensor:
        return nn.Tensor(self.table.vector(entity_symbol(entity)).reshape(-1, 1))

    def _context_vec(self, sentence: Sentence) -> nn.Tensor:
        self.encoder(self._sentence_input(sentence))
        return self.encoder.final_states()

    def _score(self, v_c, span: Span, entity: str):
        x = nn.concat([v_c, self._span_vec(span), self._entity_vec(entity)], axis=0)
        return self.scorer(x)

    def score_candidates(self, sentence: Sentence, span: Span,
                         entities: list[str]) -> list[float]:
        if not self.trained:
            raise LinkError("context linker used before training")
        with nn.no_grad():
            v_c = self._context_vec(sentence)
            return [self._score(v_c, span, e).item() for e in entities]

    def context_score(self, sentence: Sentence, span: Span, entity: str) -> float:
        return self.score_candidates(sentence, span, [entity])[0]


def train_context_linker(corpus: list[Sentence], kb: KnowledgeBase,
                         table: EmbeddingTable, cfg: ELConfig) -> ContextLinkerModel:
    model = ContextLinkerModel(table, cfg)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    items = []
    for sentence in corpus:
        for span in sentence.spans:
            if not span.linked:
                continue
            cand = generate_candidates(span, kb, table, cfg.knn_k)
            if cand is None or span.linked not in cand.entities:
                continue
            items.append((sentence, span, span.linked, cand.entities))
    if not items:
        raise LinkError("no linked spans to train the context linker on")
    if cfg.max_items is not None and len(items) > cfg.max_items:
        picks = rng.choice(len(items), size=cfg.max_items, replace=False)
        items = [items[i] for i in sorted(picks)]

    all_ids = sorted(kb.entities)
    if len(all_ids) < 2:
        raise LinkError("need at least two KB entities for negative sampling")
    opt = nn.Adam(model.parameters(), lr=cfg.learning_rate)
    margin = nn.Tensor(np.array([[cfg.margin]], dtype=np.float32))
    for _ in range(cfg.epochs):
        losses = []
        for i in rng.permutation(len(items)):
            sentence, span, gold, cand_ids = items[i]
            pool = [e for e in cand_ids if e != gold]
            if pool:
                neg = pool[int(rng.integers(len(pool)))]
            else:
                neg = gold
                while neg == gold:
                    neg = all_ids[int(rng.integers(len(all_ids)))]
            v_c = model._context_vec(sentence)
            s_gold = model._score(v_c, span, gold)
            s_neg = model._score(v_c, span, neg)
            loss = nn.relu(nn.add(nn.sub(s_neg, s_gold), margin))
            losses.append(loss.item())
            if losses[-1] > 0.0:
                opt.zero_grad()
                loss.backward()
                opt.step()
        model.epoch_losses.append(float(np.mean(losses)))
    model.trained = True
    return model


def hinge_loss(s: float, s_neg: float, margin: float) -> float:
    return max(0.0, s_neg - s + margin)


def link(sentence: Sentence, kb: KnowledgeBase, table: EmbeddingTable | None,
         model: ContextLinkerModel | None, recognizer, knn_k: int = 10) -> list[LinkDecision]:
    """recognize -> candidates -> subgraph step -> context step for leftovers.
    Spans with no candidates yield no decision; the context model is only
    touched when the sub-graph step leaves something open."""
    spans = recognizer.recognize(sentence)
    cands = []
    for sp in spans:
        c = generate_candidates(sp, kb, table, knn_k)
        if c is not None:
            cands.append(c)
    decisions = subgraph_link(cands, kb)
    out: list[LinkDecision] = []
    for cand, decision in zip(cands, decisions):
        if decision is None:
            if model is None:
                raise LinkError("context step needed but no trained model supplied")
            scores = model.score_candidates(sentence, cand.span, cand.entities)
            ranked = sorted(zip(cand.entities, scores), key=lambda p: (-p[1], p[0]))
            decision = LinkDecision(cand.span, ranked[0][0], "context", ranked[0][1])
        out.append(decision)
    return out
