"""Impact-ordered inverted index of precomputed term-document scores.

Binary layout (little-endian)::

    magic "CKIDX1"
    u32 num_docs | 32B vocab hash | 32B checkpoint hash | u32 term count
    per term: u32 term id | u32 posting count | count x (u32 doc, f32 impact)
    u32 docid count | per doc: u16 length | utf-8 external docid
"""

from __future__ import annotations

import heapq
import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ckqti.collection import FeatureBuilder
from ckqti.scorer import CKModel, ScoringBatch, UninitializedStatistics
from ckqti.tensor import Tensor, no_grad
from ckqti.text import OOV_ID

log = logging.getLogger(__name__)

MAGIC = b"CKIDX1"
POSTING = np.dtype([("doc", "<u4"), ("impact", "<f4")])


class IndexFormatError(ValueError):
    """Index file is corrupt or incompatible."""


@dataclass
class PostingList:
    term_id: int
    docs: np.ndarray      # uint32, impact-descending
    impacts: np.ndarray   # float32

    def __len__(self) -> int:
        return len(self.docs)

    def by_doc(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.docs, kind="stable")
        return self.docs[order], self.impacts[order]


@dataclass
class ImpactIndex:
    num_docs: int
    vocab_hash: bytes
    checkpoint_hash: bytes
    postings: dict[int, PostingList]
    docids: list[str]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._by_doc: dict[int, tuple[list[int], list[float]]] = {}

    def doc_sorted(self, term_id: int) -> tuple[list[int], list[float]]:
        cached = self._by_doc.get(term_id)
        if cached is None:
            docs, impacts = self.postings[term_id].by_doc()
            cached = (docs.tolist(), impacts.astype(np.float64).tolist())
            self._by_doc[term_id] = cached
        return cached

    # -- io -----------------------------------------------------------------
    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", self.num_docs))
        out.write(self.vocab_hash)
        out.write(self.checkpoint_hash)
        out.write(struct.pack("<I", len(self.postings)))
        for term_id in sorted(self.postings):
            pl = self.postings[term_id]
            out.write(struct.pack("<II", term_id, len(pl)))
            rec = np.empty(len(pl), dtype=POSTING)
            rec["doc"], rec["impact"] = pl.docs, pl.impacts
            out.write(rec.tobytes())
        out.write(struct.pack("<I", len(self.docids)))
        for d in self.docids:
            raw = d.encode("utf-8")
            out.write(struct.pack("<H", len(raw)))
            out.write(raw)
        return out.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes, checkpoint_hash: bytes | None = None,
                   vocab_hash: bytes | None = None) -> "ImpactIndex":
        if not blob.startswith(MAGIC):
            raise IndexFormatError("not an impact index (bad magic)")
        buf = io.BytesIO(blob[len(MAGIC):])

        def read(n: int) -> bytes:
            raw = buf.read(n)
            if len(raw) != n:
                raise IndexFormatError("truncated index file")
            return raw

        (num_docs,) = struct.unpack("<I", read(4))
        vhash, chash = read(32), read(32)
        if checkpoint_hash is not None and chash != checkpoint_hash:
            raise IndexFormatError("index was built from a different checkpoint; scores are not compatible")
        if vocab_hash is not None and vhash != vocab_hash:
            raise IndexFormatError("index was built with a different vocabulary")
        (terms,) = struct.unpack("<I", read(4))
        postings = {}
        for _ in range(terms):
            term_id, count = struct.unpack("<II", read(8))
            rec = np.frombuffer(read(count * POSTING.itemsize), dtype=POSTING)
            postings[term_id] = PostingList(term_id, rec["doc"].astype(np.uint32),
                                            rec["impact"].astype(np.float32))
        (ndocs,) = struct.unpack("<I", read(4))
        docids = []
        for _ in range(ndocs):
            (n,) = struct.unpack("<H", read(2))
            docids.append(read(n).decode("utf-8"))
        if buf.read(1):
            raise IndexFormatError("trailing bytes after index")
        return cls(num_docs, vhash, chash, postings, docids)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path, checkpoint_hash: bytes | None = None,
             vocab_hash: bytes | None = None) -> "ImpactIndex":
        return cls.from_bytes(Path(path).read_bytes(), checkpoint_hash, vocab_hash)


def _require_inference_stats(model: CKModel) -> None:
    for name, st in model.stats.channels().items():
        if name == "latent" and not model.cfg.latent_channel:
            continue
        if name != "latent" and not model.cfg.explicit_channel:
            continue
        if not st.initialized:
            raise UninitializedStatistics(name)


def encode_corpus(model: CKModel, builder: FeatureBuilder, ordinals: Sequence[int] | None = None,
                  batch_size: int = 16) -> dict[int, np.ndarray]:
    """Contextualized encodings per document, computed once each."""
    ordinals = range(len(builder.store)) if ordinals is None else ordinals
    out = {}
    ordinals = list(ordinals)
    with no_grad():
        for i in range(0, len(ordinals), batch_size):
            chunk = ordinals[i:i + batch_size]
            docs = [builder.doc_ids(o) for o in chunk]
            ids = np.zeros((len(chunk), max(map(len, docs))), dtype=np.int64)
            for j, d in enumerate(docs):
                ids[j, :len(d)] = d
            enc = model.encode(ids).data
            for j, o in enumerate(chunk):
                out[o] = enc[j, :len(docs[j])].copy()
    return out


def _doc_terms(builder: FeatureBuilder, ordinal: int) -> list[str]:
    """Distinct in-vocabulary terms of the untruncated document, by term id."""
    vocab = builder.vocab
    terms = {t for t in builder.stats.term_freq[ordinal] if t in vocab}
    return sorted(terms, key=vocab.id)


def precompute_impacts(model: CKModel, builder: FeatureBuilder, checkpoint_hash: bytes,
                       term_chunk: int = 256) -> ImpactIndex:
    """Score every (term, document) pair where the term occurs in the document."""
    _require_inference_stats(model)
    if not model.stats.frozen:
        raise UninitializedStatistics("checkpoint statistics are not frozen")
    docs_acc: dict[int, list[int]] = {}
    imp_acc: dict[int, list[float]] = {}
    store = builder.store
    with no_grad():
        for ordinal in range(len(store)):
            terms = _doc_terms(builder, ordinal)
            if not terms:
                continue
            enc = None
            if model.cfg.latent_channel:
                enc = Tensor(encode_corpus(model, builder, [ordinal])[ordinal][None])
            for i in range(0, len(terms), term_chunk):
                part = terms[i:i + term_chunk]
                batch = builder.batch([part], [ordinal], truncate=False)
                s = model.term_scores(batch, doc_enc=enc).combined.data[0]
                for t, v in zip(batch.query_ids[0], s):
                    docs_acc.setdefault(int(t), []).append(ordinal)
                    imp_acc.setdefault(int(t), []).append(float(v))
    postings = {}
    for t in sorted(docs_acc):
        docs = np.asarray(docs_acc[t], dtype=np.uint32)
        imps = np.asarray(imp_acc[t], dtype=np.float32)
        order = np.lexsort((docs, -imps.astype(np.float64)))
        postings[t] = PostingList(t, docs[order], imps[order])
    return ImpactIndex(len(store), builder.vocab.hash(), checkpoint_hash, postings,
                       list(store.docids), {"config": model.cfg.dumps()})


def retrieve_topk(query_ids: Sequence[int], index: ImpactIndex, k: int) -> list[tuple[int, float]]:
    """Document-at-a-time accumulation over the query's posting lists.

    Each query term occurrence contributes its impact; documents missing from
    a list get 0 for that term.  Ties go to the smaller document ordinal.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    lists = [index.doc_sorted(t) for t in query_ids if t > OOV_ID and t in index.postings]
    if not lists:
        return []
    cursors = [(docs[0], i, 0) for i, (docs, _) in enumerate(lists)]
    heapq.heapify(cursors)
    top: list[tuple[float, int]] = []   # min-heap of (score, -doc)
    while cursors:
        doc = cursors[0][0]
        score = 0.0
        while cursors and cursors[0][0] == doc:
            _, i, pos = heapq.heappop(cursors)
            docs, impacts = lists[i]
            score += impacts[pos]
            if pos + 1 < len(docs):
                heapq.heappush(cursors, (docs[pos + 1], i, pos + 1))
        entry = (score, -doc)
        if len(top) < k:
            heapq.heappush(top, entry)
        elif entry > top[0]:
            heapq.heapreplace(top, entry)
    return [(-neg, s) for s, neg in sorted(top, key=lambda e: (-e[0], -e[1]))]


def exhaustive_score(query_terms: Sequence[str], model: CKModel, builder: FeatureBuilder,
                     encodings: dict[int, np.ndarray] | None = None,
                     batch_size: int = 64) -> list[tuple[int, float]]:
    """Score the query against every document; the oracle the index must match.

    Documents where no query term is gated on (none occurs, or all are out of
    vocabulary) score exactly 0 and are left out, as in retrieval.
    """
    _require_inference_stats(model)
    n = len(builder.store)
    results = []
    with no_grad():
        for i in range(0, n, batch_size):
            ordinals = list(range(i, min(n, i + batch_size)))
            batch = builder.batch([query_terms] * len(ordinals), ordinals)
            enc = _stack_encodings(model, builder, batch, ordinals, encodings)
            ts = model.term_scores(batch, doc_enc=enc)
            scores = ts.combined.data
            for j, o in enumerate(ordinals):
                if ts.gate[j].any():
                    results.append((o, float(sum(scores[j][ts.gate[j]].tolist()))))
    results.sort(key=lambda e: (-e[1], e[0]))
    return results


def _stack_encodings(model: CKModel, builder: FeatureBuilder, batch: ScoringBatch,
                     ordinals: Sequence[int], encodings: dict[int, np.ndarray] | None) -> Tensor | None:
    if not model.cfg.latent_channel:
        return None
    if encodings is None:
        return model.encode(batch.doc_ids)
    n = batch.doc_ids.shape[1]
    out = np.zeros((len(ordinals), n, model.cfg.model_dim))
    for j, o in enumerate(ordinals):
        e = encodings[o]
        out[j, :len(e)] = e
    return Tensor(out)
