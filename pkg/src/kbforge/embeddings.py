"""Skip-gram embeddings over KB neighbor pairs and linked text, in one
vector space, plus L2 nearest-neighbor candidate lookup.

Words and entities share the table but live in disjoint namespaces: entity
rows are keyed "ent:<id>". Training is plain SGD with negative sampling and
a linearly decaying rate, single-threaded, fully driven by one seeded
generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kb import KnowledgeBase

ENT_PREFIX = "ent:"


def entity_symbol(entity_id: str) -> str:
    return ENT_PREFIX + entity_id


def is_entity_symbol(symbol: str) -> bool:
    return symbol.startswith(ENT_PREFIX)


class EmbeddingError(Exception):
    pass


@dataclass
class SkipGramConfig:
    dim: int = 32
    epochs: int = 3
    learning_rate: float = 0.05
    negatives: int = 10
    window: int = 3
    seed: int = 0
    interleave_kb_objective: bool = True

    def __post_init__(self):
        if self.dim <= 0 or self.negatives < 1 or self.window < 1:
            raise ValueError("dim>0, negatives>=1, window>=1 required")


class EmbeddingTable:
    def __init__(self, symbols: list[str], vectors: np.ndarray, counts: dict[str, int]):
        if len(symbols) != len(set(symbols)):
            raise EmbeddingError("duplicate symbols")
        for s in symbols:
            if not s or any(ch.isspace() for ch in s):
                raise EmbeddingError(f"symbol {s!r} is empty or contains whitespace")
        self.symbols = list(symbols)
        self.index = {s: i for i, s in enumerate(self.symbols)}
        self.vectors = np.asarray(vectors, dtype=np.float32)
        if self.vectors.shape[0] != len(self.symbols):
            raise EmbeddingError("vector row count does not match vocabulary")
        if not np.all(np.isfinite(self.vectors)):
            raise EmbeddingError("non-finite vector entries")
        self.counts = dict(counts)
        self.epoch_losses: list[float] = []

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.index

    def __len__(self) -> int:
        return len(self.symbols)

    def vector(self, symbol: str) -> np.ndarray:
        try:
            return self.vectors[self.index[symbol]]
        except KeyError:
            raise EmbeddingError(f"unknown symbol {symbol!r}") from None

    def entity_rows(self) -> tuple[list[str], np.ndarray]:
        ids = [s[len(ENT_PREFIX):] for s in self.symbols if is_entity_symbol(s)]
        rows = np.array([self.index[entity_symbol(e)] for e in ids], dtype=np.int64)
        return ids, self.vectors[rows] if len(rows) else np.zeros((0, self.dim), np.float32)


def init_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=(count, dim)).astype(np.float32)


def save_table(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for i, sym in enumerate(table.symbols):
            vals = " ".join(repr(float(v)) for v in table.vectors[i])
            fh.write(f"{sym} {vals}\n")


def load_table(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 2:
            raise EmbeddingError(f"{path}: bad header")
        count, dim = int(head[0]), int(head[1])
        symbols, rows = [], np.zeros((count, dim), dtype=np.float32)
        for i in range(count):
            parts = fh.readline().split()
            if len(parts) != dim + 1:
                raise EmbeddingError(f"{path}: row {i} has wrong arity")
            symbols.append(parts[0])
            rows[i] = [float(x) for x in parts[1:]]
    return EmbeddingTable(symbols, rows, {s: 1 for s in symbols})


# -- negative sampling -------------------------------------------------------

class _NegativeSampler:
    """unigram^0.75 sampler over one namespace's row indices."""

    def __init__(self, row_indices: np.ndarray, counts: np.ndarray):
        self.rows = np.asarray(row_indices, dtype=np.int64)
        weights = np.asarray(counts, dtype=np.float64) ** 0.75
        total = weights.sum()
        if total <= 0:
            weights = np.ones_like(weights)
            total = weights.sum()
        self.cum = np.cumsum(weights / total)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        picks = np.searchsorted(self.cum, rng.random(n), side="right")
        return self.rows[np.minimum(picks, len(self.rows) - 1)]


def _sgd_pairs(vectors, ctx, centers, contexts, samplers_for, rng, k, lr_schedule, loss_out):
    """One pass of negative-sampling SGD over (center, context) pairs.
    ``samplers_for`` maps a context row to its namespace sampler. Updates
    vectors/ctx in place; appends per-pair losses to loss_out."""
    for center, context in zip(centers, contexts):
        lr = next(lr_schedule)
        negs = samplers_for(context).draw(rng, k)
        rows = np.concatenate(([context], negs))
        labels = np.zeros(len(rows))
        labels[0] = 1.0
        w = vectors[center].astype(np.float64)
        c = ctx[rows].astype(np.float64)
        scores = 1.0 / (1.0 + np.exp(-(c @ w)))
        # clamp keeps log finite when a score saturates
        p = np.clip(np.where(labels > 0, scores, 1.0 - scores), 1e-10, 1.0)
        loss_out.append(float(-np.log(p).sum()))
        g = scores - labels
        grad_w = g @ c
        np.add.at(ctx, rows, (-lr * np.outer(g, w)).astype(ctx.dtype))
        vectors[center] -= (lr * grad_w).astype(vectors.dtype)


class _LrSchedule:
    def __init__(self, lr0: float, total_steps: int):
        self.lr0 = lr0
        self.total = max(total_steps, 1)
        self.step = 0

    def __next__(self) -> float:
        frac = self.step / self.total
        self.step += 1
        return self.lr0 * max(1.0 - frac, 1e-4)


def _kb_pair_rows(kb: KnowledgeBase, index: dict[str, int]) -> np.ndarray:
    pairs = []
    for v in sorted(kb.entities):
        for u in sorted(kb.neighbors(v)):
            pairs.append((index[entity_symbol(v)], index[entity_symbol(u)]))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def train_node_embeddings(kb: KnowledgeBase, cfg: SkipGramConfig) -> EmbeddingTable:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    ids = sorted(kb.entities)
    symbols = [entity_symbol(e) for e in ids]
    counts = {entity_symbol(e): max(len(kb.neighbors(e)), 1) for e in ids}
    table = EmbeddingTable(symbols, init_vectors(rng, len(symbols), cfg.dim), counts)

    pairs = _kb_pair_rows(kb, table.index)
    if len(pairs) == 0 or cfg.epochs == 0:
        return table
    ctx = np.zeros_like(table.vectors)
    sampler = _NegativeSampler(np.arange(len(symbols)),
                               np.array([counts[s] for s in symbols]))
    schedule = _LrSchedule(cfg.learning_rate, cfg.epochs * len(pairs))
    for _ in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        losses: list[float] = []
        _sgd_pairs(table.vectors, ctx, pairs[order, 0], pairs[order, 1],
                   lambda _row: sampler, rng, cfg.negatives, schedule, losses)
        table.epoch_losses.append(float(np.mean(losses)))
    return table


def _linked_stream(sentence) -> list[tuple[bool, str]]:
    """(is_entity, symbol) pairs: token surfaces with each linked span's
    entity symbol inserted right after the span's last surface word. The
    flag carries provenance so surface words cannot masquerade as entity
    symbols."""
    insert_after = {sp.end: sp.linked for sp in sentence.spans if sp.linked}
    out = []
    for tok in sentence.tokens:
        out.append((False, tok.surface))
        eid = insert_after.get(tok.index)
        if eid is not None:
            out.append((True, entity_symbol(eid)))
    return out


def train_joint_embeddings(sentences, kb: KnowledgeBase, init: EmbeddingTable,
                           cfg: SkipGramConfig) -> EmbeddingTable:
    if not sentences:
        raise EmbeddingError("cannot train joint embeddings on an empty corpus")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    streams = [_linked_stream(s) for s in sentences]
    word_counts: dict[str, int] = {}
    ent_counts: dict[str, int] = {}
    for stream in streams:
        for is_ent, sym in stream:
            if not is_ent and is_entity_symbol(sym):
                raise EmbeddingError(
                    f"word token {sym!r} collides with the entity namespace")
            bucket = ent_counts if is_ent else word_counts
            bucket[sym] = bucket.get(sym, 0) + 1

    ent_symbols = [s for s in init.symbols if is_entity_symbol(s)]
    word_symbols = sorted(word_counts)
    symbols = word_symbols + ent_symbols
    vectors = np.zeros((len(symbols), cfg.dim), dtype=np.float32)
    vectors[:len(word_symbols)] = init_vectors(rng, len(word_symbols), cfg.dim)
    for j, s in enumerate(ent_symbols):
        vectors[len(word_symbols) + j] = init.vector(s)
    # +1 keeps never-linked entities reachable as negatives
    counts = dict(word_counts)
    counts.update({s: ent_counts.get(s, 0) + 1 for s in ent_symbols})
    table = EmbeddingTable(symbols, vectors, counts)

    idx = table.index
    word_rows = np.array([idx[s] for s in word_symbols], dtype=np.int64)
    ent_rows = np.array([idx[s] for s in ent_symbols], dtype=np.int64)
    word_sampler = _NegativeSampler(word_rows, np.array([counts[s] for s in word_symbols]))
    ent_sampler = _NegativeSampler(ent_rows, np.array([counts[s] for s in ent_symbols]))
    is_ent_row = np.zeros(len(symbols), dtype=bool)
    is_ent_row[ent_rows] = True

    def sampler_for(row: int) -> _NegativeSampler:
        return ent_sampler if is_ent_row[row] else word_sampler

    text_pairs = []
    for si, stream in enumerate(streams):
        rows = [idx[s] for _, s in stream]
        for t, center in enumerate(rows):
            lo = max(0, t - cfg.window)
            hi = min(len(rows) - 1, t + cfg.window)
            for j in range(lo, hi + 1):
                if j != t:
                    text_pairs.append((center, rows[j]))
    text_pairs = np.asarray(text_pairs, dtype=np.int64).reshape(-1, 2)

    kb_pairs = _kb_pair_rows(kb, idx) if cfg.interleave_kb_objective \
        else np.zeros((0, 2), dtype=np.int64)

    ctx = np.zeros_like(table.vectors)
    per_epoch = len(text_pairs) + len(kb_pairs)
    schedule = _LrSchedule(cfg.learning_rate, cfg.epochs * per_epoch)
    for _ in range(cfg.epochs):
        losses: list[float] = []
        order = rng.permutation(len(text_pairs))
        _sgd_pairs(table.vectors, ctx, text_pairs[order, 0], text_pairs[order, 1],
                   sampler_for, rng, cfg.negatives, schedule, losses)
        if len(kb_pairs):
            order = rng.permutation(len(kb_pairs))
            _sgd_pairs(table.vectors, ctx, kb_pairs[order, 0], kb_pairs[order, 1],
                       lambda _row: ent_sampler, rng, cfg.negatives, schedule, losses)
        table.epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
    return table


def knn_candidates(table: EmbeddingTable, phrase: str, k: int) -> list[tuple[str, float]]:
    """k entities nearest (L2) to the mean of the phrase's in-vocabulary
    word vectors, ascending, ties broken by entity id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rows = [table.index[w] for w in phrase.split() if w in table.index
            and not is_entity_symbol(w)]
    if not rows:
        return []
    query = table.vectors[rows].astype(np.float64).mean(axis=0)
    ids, mat = table.entity_rows()
    if not ids:
        return []
    dists = np.sqrt(((mat.astype(np.float64) - query) ** 2).sum(axis=1))
    ranked = sorted(zip(ids, dists), key=lambda p: (p[1], p[0]))
    return [(eid, float(d)) for eid, d in ranked[:k]]
