"""Random scoring batches for toy models."""

from __future__ import annotations

import numpy as np

from ckqti.scorer import CKModel, ScoringBatch


def random_batch(rng: np.random.Generator, vocab: int = 30, batch: int = 4, q: int = 3,
                 n: int = 20, min_len: int | None = None) -> ScoringBatch:
    """Documents always contain the first query term, so every row has a gated-on term."""
    q_ids = rng.integers(2, vocab, size=(batch, q))
    d_ids = np.zeros((batch, n), dtype=np.int64)
    lengths = rng.integers(min_len or max(1, n // 2), n + 1, size=batch)
    lengths[0] = n
    for b in range(batch):
        d_ids[b, :lengths[b]] = rng.integers(2, vocab, size=lengths[b])
        d_ids[b, rng.integers(lengths[b])] = q_ids[b, 0]
    tf = np.array([[np.sum(d_ids[b] == t) for t in q_ids[b]] for b in range(batch)], dtype=np.float64)
    idf = rng.uniform(0.5, 3.0, size=(batch, q))
    return ScoringBatch(q_ids, d_ids, tf, lengths.astype(np.float64), idf)


def row(batch: ScoringBatch, b: int, terms=None) -> ScoringBatch:
    """Row ``b`` of a batch, optionally restricted to a subset of query positions."""
    terms = list(range(batch.query_ids.shape[1])) if terms is None else list(terms)
    n = int(np.count_nonzero(batch.doc_ids[b]))
    return ScoringBatch(batch.query_ids[b:b + 1, terms], batch.doc_ids[b:b + 1, :n],
                        batch.tf[b:b + 1, terms], batch.doc_len[b:b + 1], batch.idf[b:b + 1, terms])


def warm(model: CKModel, rng: np.random.Generator, rounds: int = 3, **kw) -> CKModel:
    """Initialize and freeze normalization statistics with training-mode passes."""
    for _ in range(rounds):
        model.score(random_batch(rng, **kw), training=True)
    model.stats.frozen = True
    return model
