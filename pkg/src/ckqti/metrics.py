"""Ranking metrics over TREC-style runs and graded qrels."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ckqti.trec import Qrels

log = logging.getLogger(__name__)

Ranking = Sequence[tuple[str, float]]


def reciprocal_rank(ranking: Ranking, rels: Mapping[str, int], cutoff: int = 100) -> float:
    for rank, (docid, _) in enumerate(ranking[:cutoff], 1):
        if rels.get(docid, 0) >= 1:
            return 1.0 / rank
    return 0.0


def dcg(gains: Sequence[int]) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(i + 2) for i, g in enumerate(gains))


def ndcg(ranking: Ranking, rels: Mapping[str, int], k: int = 10) -> float | None:
    """Exponential-gain NDCG@k; ``None`` when the query has no relevant documents."""
    ideal = dcg(sorted(rels.values(), reverse=True)[:k])
    if ideal <= 0:
        return None
    return dcg([rels.get(d, 0) for d, _ in ranking[:k]]) / ideal


def ncg(ranking: Ranking, rels: Mapping[str, int], k: int = 100) -> float | None:
    """Gain retrieved in the top k over the best achievable gain in k slots."""
    ideal = sum(sorted(rels.values(), reverse=True)[:k])
    if ideal <= 0:
        return None
    return sum(rels.get(d, 0) for d, _ in ranking[:k]) / ideal


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def mrr(run: Mapping[str, Ranking], qrels: Qrels, cutoff: int = 100) -> float:
    """Mean over queries in the run or the qrels; unjudged or unanswered ones count as 0."""
    values = []
    for qid in sorted(set(run) | set(qrels)):
        if qid not in qrels:
            log.warning("query %s has no qrels; contributes 0 to MRR", qid)
        values.append(reciprocal_rank(run.get(qid, []), qrels.get(qid, {}), cutoff))
    return _mean(values)


def _graded_mean(run, qrels, k, fn, what) -> float:
    values = []
    for qid, rels in qrels.items():
        v = fn(run.get(qid, []), rels, k)
        if v is None:
            log.info("query %s has no positive judgments; excluded from %s", qid, what)
            continue
        values.append(v)
    return _mean(values)


def ndcg_at_k(run: Mapping[str, Ranking], qrels: Qrels, k: int = 10) -> float:
    return _graded_mean(run, qrels, k, ndcg, "NDCG")


def ncg_at_k(run: Mapping[str, Ranking], qrels: Qrels, k: int = 100) -> float:
    return _graded_mean(run, qrels, k, ncg, "NCG")


@dataclass
class MetricReport:
    mrr: float
    ndcg: float
    ncg: float
    num_queries: int
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)
    ndcg_k: int = 10
    ncg_k: int = 100
    mrr_cutoff: int = 100

    def table(self) -> str:
        rows = [("metric", "value"),
                (f"MRR@{self.mrr_cutoff}", f"{self.mrr:.4f}"),
                (f"NDCG@{self.ndcg_k}", f"{self.ndcg:.4f}"),
                (f"NCG@{self.ncg_k}", f"{self.ncg:.4f}"),
                ("queries", str(self.num_queries))]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{width}}  {b:>8}" for a, b in rows)

    def key_values(self) -> str:
        return "\n".join([
            f"mrr={self.mrr:.6f}",
            f"ndcg_cut_{self.ndcg_k}={self.ndcg:.6f}",
            f"ncg_cut_{self.ncg_k}={self.ncg:.6f}",
            f"num_q={self.num_queries}",
        ])


def evaluate(run: Mapping[str, Ranking], qrels: Qrels, ndcg_k: int = 10, ncg_k: int = 100,
             mrr_cutoff: int = 100) -> MetricReport:
    per_query = {}
    for qid in sorted(set(run) | set(qrels)):
        ranking, rels = run.get(qid, []), qrels.get(qid, {})
        row = {"rr": reciprocal_rank(ranking, rels, mrr_cutoff)}
        for name, v in (("ndcg", ndcg(ranking, rels, ndcg_k)), ("ncg", ncg(ranking, rels, ncg_k))):
            if v is not None:
                row[name] = v
        per_query[qid] = row
    return MetricReport(
        mrr=mrr(run, qrels, mrr_cutoff),
        ndcg=ndcg_at_k(run, qrels, ndcg_k),
        ncg=ncg_at_k(run, qrels, ncg_k),
        num_queries=len(per_query),
        per_query=per_query,
        ndcg_k=ndcg_k,
        ncg_k=ncg_k,
        mrr_cutoff=mrr_cutoff,
    )
