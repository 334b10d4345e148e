"""Command-line interface: synth, train, index, search, eval, bench-memory.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from ckqti.bench import DEFAULT_LENGTHS, bench_memory, summary, write_csv
from ckqti.checkpoint import Checkpoint, CheckpointError
from ckqti.collection import DataError, read_queries
from ckqti.config import Config, ConfigError
from ckqti.index import ImpactIndex, IndexFormatError
from ckqti.metrics import evaluate
from ckqti.pipeline import build_index, load_collection, read_candidates, read_pairs, search, train_model
from ckqti.scorer import UninitializedStatistics
from ckqti.synth import make_synthetic_corpus
from ckqti.text import Vocabulary
from ckqti.trec import RunFormatError, read_qrels, read_run, write_run

log = logging.getLogger("ckqti")

EXIT_USAGE = 1
EXIT_DATA = 2

DATA_ERRORS = (DataError, CheckpointError, IndexFormatError, RunFormatError, ConfigError,
               UninitializedStatistics, OSError, UnicodeDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path: str | None, overrides: list[str]) -> Config:
    cfg = Config.load(path) if path else Config()
    if overrides:
        text = cfg.dumps() + "\n" + "\n".join(overrides) + "\n"
        cfg = Config.loads(text)
    return cfg


def cmd_synth(args) -> int:
    sc = make_synthetic_corpus(args.seed, args.docs, args.vocab)
    for name, p in sc.write(args.out).items():
        print(f"{name}\t{p}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coll = load_collection(args.corpus, cfg)
    coll.vocab.save(out / "vocab.tsv")
    queries = read_queries(args.queries)
    pairs = read_pairs(args.pairs)
    candidates = read_candidates(args.candidates)
    start = time.perf_counter()
    losses: list[float] = []
    final = train_model(cfg, coll, queries, pairs, candidates, out, losses)
    log.info("trained %d steps in %.1fs", cfg.steps, time.perf_counter() - start)
    tail = losses[-min(len(losses), 50):]
    print(f"checkpoint\t{out / 'final.ckpt'}")
    print(f"vocab\t{out / 'vocab.tsv'}")
    if tail:
        print(f"final_loss\t{sum(tail) / len(tail):.6f}")
    print(f"checkpoint_hash\t{final.hash().hex()}")
    return 0


def cmd_index(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    coll = load_collection(args.corpus, ckpt.config, vocab)
    index = build_index(ckpt, coll)
    index.save(args.out)
    terms = len(index.postings)
    postings = sum(len(p) for p in index.postings.values())
    print(f"index\t{args.out}\tdocs={index.num_docs}\tterms={terms}\tpostings={postings}")
    return 0


def cmd_search(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    expect = None
    if args.checkpoint:
        expect = Checkpoint.load(args.checkpoint).hash()
    index = ImpactIndex.load(args.index, checkpoint_hash=expect, vocab_hash=vocab.hash())
    queries = read_queries(args.queries)
    run = search(index, vocab, queries, args.k)
    write_run(args.out, run, args.tag)
    print(f"run\t{args.out}\tqueries={len(run)}")
    return 0


def cmd_eval(args) -> int:
    report = evaluate(read_run(args.run), read_qrels(args.qrels), ndcg_k=args.ndcg_k,
                      ncg_k=args.ncg_k, mrr_cutoff=args.mrr_cutoff)
    print(report.table())
    print()
    print(report.key_values())
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args.config, args.set) if (args.config or args.set) else Config(head_batch=1)
    lengths = sorted(set(args.lengths))
    if len(lengths) < 2:
        raise UsageError("bench-memory needs at least two lengths")
    curves = bench_memory(lengths, cfg, budget=args.budget)
    if args.unit == "mb":
        for c in curves.values():
            c.peaks = [p if p < 0 else p * args.float_width / 2 ** 20 for p in c.peaks]
    write_csv(curves, args.out, "peak_mb" if args.unit == "mb" else "peak_elements")
    print(summary(curves))
    print(f"csv\t{args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ckqti", description="Conformer-Kernel ranking with query term independence.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic corpus, queries, pairs and qrels")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--docs", type=int, default=500)
    s.add_argument("--vocab", type=int, default=800)
    s.set_defaults(func=cmd_synth)

    def config_flags(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    s = sub.add_parser("train", help="train a model, writing vocab.tsv and checkpoints")
    config_flags(s)
    s.add_argument("--corpus", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--pairs", required=True, help="qid<TAB>docid positive pairs")
    s.add_argument("--candidates", required=True, help="first-stage TREC run")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("index", help="precompute term-document impacts")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("search", help="retrieve from an index into a TREC run")
    s.add_argument("--index", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--checkpoint", help="refuse the index unless it was built from this checkpoint")
    s.add_argument("--k", type=int, default=100)
    s.add_argument("--tag", default="ckqti")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("eval", help="MRR, NDCG and NCG of a run")
    s.add_argument("--run", required=True)
    s.add_argument("--qrels", required=True)
    s.add_argument("--ndcg-k", type=int, default=10)
    s.add_argument("--ncg-k", type=int, default=100)
    s.add_argument("--mrr-cutoff", type=int, default=100)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench-memory", help="peak attention memory vs. document length")
    config_flags(s)
    s.add_argument("--lengths", type=int, nargs="+", default=list(DEFAULT_LENGTHS))
    s.add_argument("--budget", type=int, help="cap on live elements; larger runs are recorded as -1")
    s.add_argument("--unit", choices=("elements", "mb"), default="elements")
    s.add_argument("--float-width", type=int, default=8, help="bytes per element for --unit mb")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"ckqti: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"ckqti: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"ckqti: data error: {e}", file=sys.stderr)
        return EXIT_DATA
