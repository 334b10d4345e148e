"""Corpus ingestion, collection statistics, and (query, document) feature batches."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ckqti.config import Config
from ckqti.scorer import ScoringBatch, idf
from ckqti.text import Vocabulary, tokenize

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Input data is unreadable or inconsistent."""


@dataclass
class SkipReport:
    malformed: int = 0
    empty: int = 0
    lines: list[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.malformed + self.empty


class DocumentStore:
    """Tokenized documents with random access by external id or ordinal."""

    def __init__(self) -> None:
        self.docids: list[str] = []
        self.tokens: list[list[str]] = []
        self.ordinals: dict[str, int] = {}

    def add(self, docid: str, tokens: list[str]) -> int:
        if docid in self.ordinals:
            raise DataError(f"duplicate docid {docid!r}")
        self.ordinals[docid] = len(self.docids)
        self.docids.append(docid)
        self.tokens.append(tokens)
        return self.ordinals[docid]

    def __len__(self) -> int:
        return len(self.docids)

    def __contains__(self, docid: str) -> bool:
        return docid in self.ordinals

    def __getitem__(self, docid: str) -> list[str]:
        return self.tokens[self.ordinals[docid]]


@dataclass
class CollectionStats:
    num_docs: int
    doc_freq: Counter
    doc_len: np.ndarray
    term_freq: list[Counter]

    @classmethod
    def from_store(cls, store: DocumentStore) -> "CollectionStats":
        df: Counter = Counter()
        tfs = []
        for tokens in store.tokens:
            tf = Counter(tokens)
            tfs.append(tf)
            df.update(tf.keys())
        lengths = np.array([len(t) for t in store.tokens], dtype=np.int64)
        return cls(len(store), df, lengths, tfs)

    def tf(self, term: str, ordinal: int) -> int:
        return self.term_freq[ordinal].get(term, 0)

    def idf(self, term: str) -> float:
        return float(idf(self.num_docs, self.doc_freq.get(term, 0)))


def document_tokens(title: str, body: str, extra: str | None, max_field_len: int) -> list[str]:
    tokens = tokenize(title) + tokenize(body)
    if extra:
        tokens += tokenize(extra)[:max_field_len]
    return tokens


def ingest_corpus(path: str | Path, max_field_len: int = 2000
                  ) -> tuple[CollectionStats, DocumentStore, SkipReport]:
    """Read ``docid<TAB>url<TAB>title<TAB>body[<TAB>extra]`` lines in one pass."""
    store = DocumentStore()
    report = SkipReport()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read corpus {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, 1):
            cols = line.rstrip("\n").rstrip("\r").split("\t")
            if len(cols) < 4 or not cols[0]:
                report.malformed += 1
                report.lines.append(lineno)
                log.warning("corpus line %d: expected >= 4 tab-separated columns, skipped", lineno)
                continue
            extra = cols[4] if len(cols) > 4 else None
            tokens = document_tokens(cols[2], cols[3], extra, max_field_len)
            if not tokens:
                report.empty += 1
                report.lines.append(lineno)
                log.warning("corpus line %d: document %s has no tokens, skipped", lineno, cols[0])
                continue
            store.add(cols[0], tokens)
    if report.total:
        log.info("skipped %d corpus lines (%d malformed, %d empty)",
                 report.total, report.malformed, report.empty)
    return CollectionStats.from_store(store), store, report


def read_queries(path: str | Path) -> dict[str, str]:
    queries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise DataError(f"queries line {lineno}: expected qid<TAB>text")
            queries[parts[0]] = parts[1]
    return queries


class FeatureBuilder:
    """Turns token lists into padded :class:`ScoringBatch` arrays."""

    def __init__(self, cfg: Config, vocab: Vocabulary, stats: CollectionStats, store: DocumentStore):
        self.cfg = cfg
        self.vocab = vocab
        self.stats = stats
        self.store = store
        self._doc_ids: dict[int, np.ndarray] = {}

    def query_ids(self, terms: Sequence[str]) -> list[int]:
        return self.vocab.encode(terms[:self.cfg.max_query_len])

    def doc_ids(self, ordinal: int) -> np.ndarray:
        ids = self._doc_ids.get(ordinal)
        if ids is None:
            tokens = self.store.tokens[ordinal][:self.cfg.max_doc_len]
            ids = np.asarray(self.vocab.encode(tokens), dtype=np.int64)
            self._doc_ids[ordinal] = ids
        return ids

    def batch(self, queries: Sequence[Sequence[str]], ordinals: Sequence[int],
              truncate: bool = True) -> ScoringBatch:
        """One row per (query terms, document ordinal) pair.

        ``truncate=False`` keeps every term; index building uses it to score a
        document's whole term list at once.
        """
        if len(queries) != len(ordinals):
            raise ValueError("queries and documents must align")
        limit = self.cfg.max_query_len if truncate else None
        qterms = [list(q[:limit]) for q in queries]
        if any(not q for q in qterms):
            raise ValueError("empty query")
        docs = [self.doc_ids(o) for o in ordinals]
        b, qmax, nmax = len(qterms), max(map(len, qterms)), max(map(len, docs))
        q_ids = np.zeros((b, qmax), dtype=np.int64)
        d_ids = np.zeros((b, nmax), dtype=np.int64)
        tf = np.zeros((b, qmax))
        idfs = np.zeros((b, qmax))
        for i, (terms, ordinal) in enumerate(zip(qterms, ordinals)):
            q_ids[i, :len(terms)] = self.vocab.encode(terms)
            d_ids[i, :len(docs[i])] = docs[i]
            counts = self.stats.term_freq[ordinal]
            for j, t in enumerate(terms):
                tf[i, j] = counts.get(t, 0)
                idfs[i, j] = self.stats.idf(t)
        doc_len = self.stats.doc_len[list(ordinals)].astype(np.float64)
        return ScoringBatch(q_ids, d_ids, tf, doc_len, idfs)
