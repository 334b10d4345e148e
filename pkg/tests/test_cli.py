import math
import subprocess
import sys

import pytest

from ckqti.cli import main
from ckqti.trec import parse_run

TOY = ["model_dim=8", "ff_dim=8", "heads=2", "conv_groups=2", "conv_window=3", "layers=1",
       "kernels=4", "pool_window=30", "pool_stride=10", "batch_size=4", "steps=6",
       "checkpoint_every=3", "dropout=0"]


def run_cli(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run_cli("synth", "--out", d / "data", "--docs", 80, "--vocab", 300, "--seed", 1) == 0
    data = d / "data"
    sets = [x for kv in TOY for x in ("--set", kv)]
    assert run_cli("train", *sets, "--corpus", data / "corpus.tsv", "--queries", data / "queries.train.tsv",
                   "--pairs", data / "train_pairs.tsv", "--candidates", data / "candidates.train.trec",
                   "--out", d / "model") == 0
    assert run_cli("index", "--checkpoint", d / "model" / "final.ckpt", "--vocab", d / "model" / "vocab.tsv",
                   "--corpus", data / "corpus.tsv", "--out", d / "index.bin") == 0
    assert run_cli("search", "--index", d / "index.bin", "--vocab", d / "model" / "vocab.tsv",
                   "--queries", data / "queries.test.tsv", "--checkpoint", d / "model" / "final.ckpt",
                   "--k", 50, "--tag", "toy", "--out", d / "run.trec") == 0
    return d


def test_pipeline_artifacts(pipeline):
    names = {p.name for p in (pipeline / "model").iterdir()}
    assert {"vocab.tsv", "final.ckpt", "step3.ckpt", "step6.ckpt"} <= names


def test_search_output_is_valid_trec(pipeline):
    lines = (pipeline / "run.trec").read_text().splitlines()
    assert lines
    for line in lines:
        qid, q0, docid, rank, score, tag = line.split(" ")
        assert q0 == "Q0" and tag == "toy" and int(rank) >= 1 and math.isfinite(float(score))
    run = parse_run(lines)
    assert all(len(docs) <= 50 for docs in run.values())


def test_eval_prints_metrics(pipeline, capsys):
    data = pipeline / "data"
    assert run_cli("eval", "--run", pipeline / "run.trec", "--qrels", data / "qrels.test.txt") == 0
    out = capsys.readouterr().out
    assert "MRR@100" in out and "num_q=" in out


def test_eval_hand_computed(tmp_path, capsys):
    (tmp_path / "run").write_text("q1 Q0 a 1 3 t\nq1 Q0 b 2 2 t\nq2 Q0 c 1 5 t\nq2 Q0 d 2 4 t\n")
    (tmp_path / "qrels").write_text("q1 0 b 1\nq2 0 c 2\nq2 0 e 2\n")
    assert run_cli("eval", "--run", tmp_path / "run", "--qrels", tmp_path / "qrels") == 0
    kv = dict(line.split("=") for line in capsys.readouterr().out.splitlines() if "=" in line)
    # q1: relevant at rank 2; q2: one of two grade-2 documents at rank 1
    assert float(kv["mrr"]) == pytest.approx((0.5 + 1.0) / 2, abs=1e-6)
    ndcg_q1 = 1 / math.log2(3)
    ndcg_q2 = 3 / (3 + 3 / math.log2(3))
    assert float(kv["ndcg_cut_10"]) == pytest.approx((ndcg_q1 + ndcg_q2) / 2, abs=1e-6)
    assert float(kv["ncg_cut_100"]) == pytest.approx((1.0 + 0.5) / 2, abs=1e-6)
    assert kv["num_q"] == "2"


def test_bench_memory_command(tmp_path, capsys):
    out = tmp_path / "mem.csv"
    assert run_cli("bench-memory", "--set", "model_dim=16", "--set", "ff_dim=16", "--set", "heads=2",
                   "--set", "conv_groups=2", "--set", "head_batch=1",
                   "--lengths", 16, 32, 64, "--out", out) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "length,label,peak_elements"
    assert "64,standard.attn_matrix,4096" in rows
    assert run_cli("bench-memory", "--lengths", 16, 32, "--unit", "mb", "--out", out) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "length,label,peak_mb"
    assert f"32,standard.attn_matrix,{32 * 32 * 8 / 2 ** 20}" in rows


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        run_cli("eval", "--bogus")
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run_cli("frobnicate")
    assert e.value.code == 1


def test_bench_needs_two_lengths(tmp_path):
    assert run_cli("bench-memory", "--lengths", 64, "--out", tmp_path / "m.csv") == 1


def test_data_errors_exit_two(tmp_path, pipeline):
    (tmp_path / "bad.trec").write_text("q1 Q0 d1 1 2.0\n")
    (tmp_path / "qrels").write_text("q1 0 d1 1\n")
    assert run_cli("eval", "--run", tmp_path / "bad.trec", "--qrels", tmp_path / "qrels") == 2
    assert run_cli("eval", "--run", tmp_path / "missing", "--qrels", tmp_path / "qrels") == 2
    (tmp_path / "bad.ckpt").write_bytes(b"garbage")
    assert run_cli("index", "--checkpoint", tmp_path / "bad.ckpt", "--vocab", pipeline / "model" / "vocab.tsv",
                   "--corpus", pipeline / "data" / "corpus.tsv", "--out", tmp_path / "i.bin") == 2
    assert run_cli("train", "--set", "heads=3", "--corpus", "x", "--queries", "x", "--pairs", "x",
                   "--candidates", "x", "--out", tmp_path / "m") == 2


def test_index_refuses_other_checkpoint(pipeline, tmp_path):
    other = pipeline / "model" / "step3.ckpt"
    assert run_cli("search", "--index", pipeline / "index.bin", "--vocab", pipeline / "model" / "vocab.tsv",
                   "--queries", pipeline / "data" / "queries.test.tsv", "--checkpoint", other,
                   "--out", tmp_path / "r.trec") == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ckqti", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "bench-memory" in proc.stdout
