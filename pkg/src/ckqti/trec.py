"""TREC run and qrels files."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

Run = dict[str, list[tuple[str, float]]]
Qrels = dict[str, dict[str, int]]


class RunFormatError(ValueError):
    pass


def format_run(run: Mapping[str, Sequence[tuple[str, float]]], tag: str = "ckqti") -> str:
    """``qid Q0 docid rank score tag`` lines, queries in sorted qid order."""
    lines = []
    for qid in sorted(run):
        for rank, (docid, score) in enumerate(run[qid], 1):
            lines.append(f"{qid} Q0 {docid} {rank} {score:.6f} {tag}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_run(path: str | Path, run, tag: str = "ckqti") -> None:
    Path(path).write_text(format_run(run, tag), encoding="utf-8")


def parse_run(lines: Iterable[str]) -> Run:
    """Parse and validate; each query's entries come back in rank order."""
    ranked: dict[str, list[tuple[int, str, float]]] = defaultdict(list)
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise RunFormatError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        qid, q0, docid, rank, score, _tag = parts
        if q0 != "Q0":
            raise RunFormatError(f"line {lineno}: second field must be Q0")
        try:
            r, s = int(rank), float(score)
        except ValueError:
            raise RunFormatError(f"line {lineno}: bad rank or score") from None
        if r < 1:
            raise RunFormatError(f"line {lineno}: ranks start at 1")
        ranked[qid].append((r, docid, s))
    run: Run = {}
    for qid, entries in ranked.items():
        entries.sort()
        ranks = [e[0] for e in entries]
        if len(set(ranks)) != len(ranks):
            raise RunFormatError(f"query {qid}: duplicate ranks")
        docs = [e[1] for e in entries]
        if len(set(docs)) != len(docs):
            raise RunFormatError(f"query {qid}: duplicate docids")
        run[qid] = [(d, s) for _, d, s in entries]
    return run


def read_run(path: str | Path) -> Run:
    with open(path, encoding="utf-8") as fh:
        return parse_run(fh)


def parse_qrels(lines: Iterable[str]) -> Qrels:
    qrels: Qrels = defaultdict(dict)
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise RunFormatError(f"qrels line {lineno}: expected 'qid 0 docid rel'")
        qrels[parts[0]][parts[2]] = int(parts[3])
    return dict(qrels)


def read_qrels(path: str | Path) -> Qrels:
    with open(path, encoding="utf-8") as fh:
        return parse_qrels(fh)


def format_qrels(qrels: Qrels) -> str:
    lines = [f"{q} 0 {d} {r}" for q in sorted(qrels) for d, r in sorted(qrels[q].items())]
    return "\n".join(lines) + "\n"
