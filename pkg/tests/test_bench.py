import csv

import numpy as np
import pytest

from ckqti.bench import FAILED, MemoryCurve, bench_memory, polyfit, summary, write_csv
from ckqti.config import Config

LENGTHS = [32, 64, 128, 256]


@pytest.fixture(scope="module")
def curves():
    return bench_memory(LENGTHS, Config(model_dim=32, ff_dim=32, heads=4, conv_groups=4, head_batch=1))


def test_attention_matrix_is_n_squared_per_head_batch(curves):
    assert curves["standard.attn_matrix"].peaks == [n * n for n in LENGTHS]
    two = bench_memory([16, 32], Config(model_dim=32, ff_dim=32, heads=4, conv_groups=4, head_batch=2))
    assert two["standard.attn_matrix"].peaks == [2 * 16 * 16, 2 * 32 * 32]


def test_standard_matrix_ratio_is_four(curves):
    assert curves["standard.attn_matrix"].doubling_ratios() == [4.0, 4.0, 4.0]


def test_separable_attention_is_linear(curves):
    c = curves["separable.attn"]
    for r in c.doubling_ratios():
        assert abs(r - 2.0) < 0.1
    assert c.linear.r2 > 0.9999
    # quadratic term is negligible across the measured range
    assert abs(c.quadratic.coef[0]) * max(LENGTHS) ** 2 < 0.01 * max(c.peaks)


def test_separable_smaller_than_standard(curves):
    assert all(s < t for s, t in zip(curves["separable.attn"].peaks, curves["standard.attn"].peaks))


def test_budget_records_sentinel_and_continues(curves):
    cap = curves["separable.layer"].peaks[-1] + 1
    fits = [p < cap for p in curves["standard.layer"].peaks]
    assert fits[0] and not fits[-1]
    capped = bench_memory(LENGTHS, Config(model_dim=32, ff_dim=32, heads=4, conv_groups=4, head_batch=1),
                          budget=cap)
    want = [n * n if ok else FAILED for n, ok in zip(LENGTHS, fits)]
    assert capped["standard.attn_matrix"].peaks == want
    assert capped["separable.attn"].peaks == curves["separable.attn"].peaks


def test_polyfit_exact():
    x = [1, 2, 3, 4]
    f = polyfit(x, [3 * v * v + 1 for v in x], 2)
    np.testing.assert_allclose(f.coef, [3, 0, 1], atol=1e-9)
    assert f.r2 == pytest.approx(1.0)
    assert polyfit(x, [5, 5, 5, 5], 1).r2 == 1.0


def test_fit_needs_three_points():
    c = MemoryCurve("x", [1, 2], [3, 4]).fit()
    assert c.linear is None and c.quadratic is None


def test_csv_layout(curves, tmp_path):
    path = tmp_path / "mem.csv"
    write_csv(curves, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["length", "label", "peak_elements"]
    assert len(rows) == 1 + len(curves) * len(LENGTHS)
    got = {(int(n), lab): int(p) for n, lab, p in rows[1:]}
    assert got[(256, "standard.attn_matrix")] == 256 * 256
    assert "separable.attn" in summary(curves)
