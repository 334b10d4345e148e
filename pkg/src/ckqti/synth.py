"""Deterministic topical corpus with lexical distractors, for tests and demos.

Each document belongs to one topic and draws most of its words from that
topic's vocabulary.  Some documents also carry a short burst of repeated words
from a different topic; those bursts fool purely lexical scoring but not a
model that looks at the surrounding context.  A query is a few words from one
topic and every document of that topic is relevant (grade 2 if it contains
all query words, else 1).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ckqti.trec import format_qrels, format_run


@dataclass
class SynthParams:
    topics: int = 10
    background_share: float = 0.25   # fraction of the vocabulary that is topic-neutral
    topic_rate: float = 0.45         # fraction of a document's words from its topic
    min_len: int = 30
    max_len: int = 150
    burst_prob: float = 0.15
    burst_repeat: tuple[int, int] = (3, 6)
    query_terms: int = 2
    key_queries: int = 8             # distinct word tuples per topic that queries and bursts use
    train_queries: int = 200
    test_queries: int = 50
    candidates: int = 100


@dataclass
class SyntheticCorpus:
    corpus: str
    train_queries: str
    train_pairs: str
    candidates: str
    test_queries: str
    test_qrels: str

    FILES = {
        "corpus": "corpus.tsv",
        "train_queries": "queries.train.tsv",
        "train_pairs": "train_pairs.tsv",
        "candidates": "candidates.train.trec",
        "test_queries": "queries.test.tsv",
        "test_qrels": "qrels.test.txt",
    }

    def write(self, directory: str | Path) -> dict[str, Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for attr, name in self.FILES.items():
            p = out / name
            p.write_bytes(getattr(self, attr).encode("utf-8"))
            paths[attr] = p
        return paths


def _bm25_rank(docs: list[list[str]], query: list[str], k1: float = 0.9, b: float = 0.4):
    n = len(docs)
    avgdl = sum(map(len, docs)) / n
    df = Counter()
    tfs = [Counter(d) for d in docs]
    for tf in tfs:
        df.update(tf.keys())
    scores = []
    for i, tf in enumerate(tfs):
        s = 0.0
        for t in query:
            f = tf.get(t, 0)
            if f:
                w = math.log(1 + (n - df[t] + 0.5) / (df[t] + 0.5))
                s += w * f * (k1 + 1) / (f + k1 * (1 - b + b * len(docs[i]) / avgdl))
        if s > 0:
            scores.append((i, s))
    scores.sort(key=lambda e: (-e[1], e[0]))
    return scores


def make_synthetic_corpus(seed: int = 0, docs: int = 500, vocab: int = 800,
                          params: SynthParams | None = None) -> SyntheticCorpus:
    p = params or SynthParams()
    if docs < 1 or vocab < 1:
        raise ValueError("docs and vocab must be >= 1")
    rng = np.random.default_rng(seed)
    n_bg = max(1, int(vocab * p.background_share))
    per_topic = max(p.query_terms, (vocab - n_bg) // p.topics)
    background = [f"w{i}" for i in range(n_bg)]
    topic_words = [[f"t{c}x{i}" for i in range(per_topic)] for c in range(p.topics)]
    # Zipf-ish word weights inside each pool
    bg_w = 1.0 / np.arange(1, n_bg + 1)
    bg_w /= bg_w.sum()
    tp_w = 1.0 / np.sqrt(np.arange(1, per_topic + 1))
    tp_w /= tp_w.sum()

    keys = [
        [tuple(sorted(rng.choice(per_topic, size=min(p.query_terms, per_topic), replace=False)))
         for _ in range(p.key_queries)]
        for _ in range(p.topics)
    ]
    doc_topic = [int(c) for c in rng.integers(p.topics, size=docs)]
    doc_tokens: list[list[str]] = []
    for i in range(docs):
        length = int(rng.integers(p.min_len, p.max_len + 1))
        from_topic = rng.random(length) < p.topic_rate
        words = []
        for use_topic in from_topic:
            if use_topic:
                words.append(topic_words[doc_topic[i]][rng.choice(per_topic, p=tp_w)])
            else:
                words.append(background[rng.choice(n_bg, p=bg_w)])
        if p.topics > 1 and rng.random() < p.burst_prob:
            other = int((doc_topic[i] + rng.integers(1, p.topics)) % p.topics)
            burst = []
            for w in keys[other][int(rng.integers(p.key_queries))]:
                burst += [topic_words[other][w]] * int(rng.integers(*p.burst_repeat, endpoint=True))
            rng.shuffle(burst)
            at = int(rng.integers(len(words) + 1))
            words[at:at] = burst
        doc_tokens.append(words)

    docids = [f"D{i:05d}" for i in range(docs)]
    corpus_lines = [
        f"{docids[i]}\thttp://synthetic/{docids[i]}\ttopic document {docids[i]}\t{' '.join(doc_tokens[i])}"
        for i in range(docs)
    ]

    by_topic = [[i for i in range(docs) if doc_topic[i] == c] for c in range(p.topics)]
    present = [set(t) for t in doc_tokens]

    def make_query(c: int) -> list[str]:
        return [topic_words[c][w] for w in keys[c][int(rng.integers(p.key_queries))]]

    def queries(n: int, prefix: str):
        out = []
        for j in range(n):
            c = j % p.topics
            if not by_topic[c]:
                c = doc_topic[0]
            out.append((f"{prefix}{j:04d}", c, make_query(c)))
        return out

    train_q = queries(p.train_queries, "tr")
    test_q = queries(p.test_queries, "te")

    pair_lines, run = [], {}
    for qid, c, terms in train_q:
        ranked = _bm25_rank(doc_tokens, terms)[:p.candidates]
        run[qid] = [(docids[i], s) for i, s in ranked]
        for i in by_topic[c]:
            if present[i] & set(terms):
                pair_lines.append(f"{qid}\t{docids[i]}")

    qrels = {}
    for qid, c, terms in test_q:
        qrels[qid] = {docids[i]: 2 if set(terms) <= present[i] else 1 for i in by_topic[c]}

    def qtext(qs):
        return "".join(f"{qid}\t{' '.join(terms)}\n" for qid, _, terms in qs)

    return SyntheticCorpus(
        corpus="\n".join(corpus_lines) + "\n",
        train_queries=qtext(train_q),
        train_pairs="\n".join(pair_lines) + "\n",
        candidates=format_run(run, tag="bm25"),
        test_queries=qtext(test_q),
        test_qrels=format_qrels(qrels),
    )
