"""End-to-end glue: corpus files in, checkpoints, indexes and runs out."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from ckqti.checkpoint import Checkpoint
from ckqti.collection import (CollectionStats, DataError, DocumentStore, FeatureBuilder,
                              ingest_corpus, read_queries)
from ckqti.config import Config
from ckqti.index import ImpactIndex, exhaustive_score, encode_corpus, precompute_impacts, retrieve_topk
from ckqti.scorer import CKModel
from ckqti.text import Vocabulary, build_vocab, tokenize
from ckqti.training import calibrate, train
from ckqti.trec import Run, parse_run

log = logging.getLogger(__name__)


@dataclass
class Collection:
    store: DocumentStore
    stats: CollectionStats
    vocab: Vocabulary

    def builder(self, cfg: Config) -> FeatureBuilder:
        return FeatureBuilder(cfg, self.vocab, self.stats, self.store)


def load_collection(corpus: str | Path, cfg: Config, vocab: Vocabulary | None = None) -> Collection:
    stats, store, _ = ingest_corpus(corpus, cfg.max_field_len)
    if not len(store):
        raise DataError(f"corpus {corpus} has no usable documents")
    if vocab is None:
        vocab = build_vocab(store.tokens, cfg.min_df)
    return Collection(store, stats, vocab)


def read_pairs(path: str | Path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DataError(f"pairs line {lineno}: expected qid<TAB>docid")
            pairs.append((parts[0], parts[1]))
    return pairs


def read_candidates(path: str | Path, depth: int = 100) -> dict[str, list[str]]:
    with open(path, encoding="utf-8") as fh:
        run = parse_run(fh)
    return {qid: [d for d, _ in docs[:depth]] for qid, docs in run.items()}


def train_model(cfg: Config, coll: Collection, queries: Mapping[str, str],
                positives: Sequence[tuple[str, str]], candidates: Mapping[str, Sequence[str]],
                out_dir: str | Path | None = None, losses: list[float] | None = None) -> Checkpoint:
    """Train from scratch; returns the final (frozen) checkpoint.

    With ``out_dir``, every checkpoint is written as ``step{N}.ckpt`` and the
    final one also as ``final.ckpt``.
    """
    model = CKModel.init(cfg, len(coll.vocab))
    builder = coll.builder(cfg)
    final = None
    for ckpt in train(model, builder, queries, positives, candidates, coll.vocab.hash(), losses=losses):
        final = ckpt
        if out_dir is not None:
            ckpt.save(Path(out_dir) / f"step{ckpt.step}.ckpt")
    assert final is not None
    if out_dir is not None:
        final.save(Path(out_dir) / "final.ckpt")
    return final


def build_index(ckpt: Checkpoint, coll: Collection) -> ImpactIndex:
    if ckpt.vocab_hash != coll.vocab.hash():
        raise DataError("checkpoint was trained with a different vocabulary")
    model = ckpt.to_model()
    return precompute_impacts(model, coll.builder(model.cfg), ckpt.hash())


def search(index: ImpactIndex, vocab: Vocabulary, queries: Mapping[str, str], k: int = 100,
           max_query_len: int = 20) -> Run:
    run: Run = {}
    for qid in sorted(queries):
        ids = vocab.encode(tokenize(queries[qid])[:max_query_len])
        run[qid] = [(index.docids[d], s) for d, s in retrieve_topk(ids, index, k)]
    return run


def rank_exhaustively(model: CKModel, coll: Collection, queries: Mapping[str, str],
                      k: int = 100) -> Run:
    """Score every document for every query without an index."""
    builder = coll.builder(model.cfg)
    encodings = encode_corpus(model, builder) if model.cfg.latent_channel else None
    run: Run = {}
    for qid in sorted(queries):
        terms = tokenize(queries[qid])[:model.cfg.max_query_len]
        if not terms:
            run[qid] = []
            continue
        ranked = exhaustive_score(terms, model, builder, encodings)[:k]
        run[qid] = [(coll.store.docids[o], s) for o, s in ranked]
    return run


def untrained_checkpoint(cfg: Config, coll: Collection, queries: Mapping[str, str],
                         positives: Sequence[tuple[str, str]],
                         candidates: Mapping[str, Sequence[str]]) -> Checkpoint:
    """Freshly initialized weights with calibrated normalization statistics."""
    model = CKModel.init(cfg, len(coll.vocab))
    calibrate(model, coll.builder(cfg), queries, positives, candidates)
    return Checkpoint.from_model(model, coll.vocab.hash(), None, 0)


__all__ = ["Collection", "load_collection", "read_pairs", "read_candidates", "read_queries",
           "train_model", "untrained_checkpoint", "build_index", "search", "rank_exhaustively"]
