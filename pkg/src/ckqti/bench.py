"""Peak-memory scaling of separable vs. standard self-attention.

One encoder layer per variant runs under an :class:`AllocationProbe` at each
document length.  Element counts, not bytes, so results do not depend on the
float width or the allocator.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ckqti.config import Config
from ckqti.encoder import (ATTENTION_GROUP, ConformerLayer, TransformerLayer, bind,
                           conformer_forward, transformer_forward)
from ckqti.probe import AllocationProbe, BudgetExceeded
from ckqti.tensor import Tensor, no_grad

log = logging.getLogger(__name__)

DEFAULT_LENGTHS = (128, 256, 512, 1024, 2048, 4096)
FAILED = -1   # recorded when a run exhausts memory or the probe budget


@dataclass
class Fit:
    coef: np.ndarray   # highest power first
    r2: float


def polyfit(x: Sequence[float], y: Sequence[float], degree: int) -> Fit:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    coef = np.polyfit(x, y, degree)
    resid = y - np.polyval(coef, x)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / total if total > 0 else 1.0
    return Fit(coef, float(r2))


@dataclass
class MemoryCurve:
    label: str
    lengths: list[int]
    peaks: list[int]
    linear: Fit | None = field(default=None)
    quadratic: Fit | None = field(default=None)

    def ok(self) -> tuple[list[int], list[int]]:
        pairs = [(n, p) for n, p in zip(self.lengths, self.peaks) if p != FAILED]
        return [n for n, _ in pairs], [p for _, p in pairs]

    def doubling_ratios(self) -> list[float]:
        """peak(2n) / peak(n) for every successive pair of lengths that doubles."""
        by_len = dict(zip(self.lengths, self.peaks))
        out = []
        for n in self.lengths:
            a, b = by_len.get(n), by_len.get(2 * n)
            if a and b and a != FAILED and b != FAILED:
                out.append(b / a)
        return out

    def fit(self) -> "MemoryCurve":
        xs, ys = self.ok()
        if len(xs) >= 3:
            self.linear = polyfit(xs, ys, 1)
            self.quadratic = polyfit(xs, ys, 2)
        return self


def bench_config() -> Config:
    """Encoder dimensions of the full model; standard attention one head at a time."""
    return Config(head_batch=1)


def _run_layer(kind: str, n: int, cfg: Config, params: dict[str, Tensor],
               rng: np.random.Generator, budget: int | None) -> AllocationProbe:
    probe = AllocationProbe(groups={ATTENTION_GROUP: ATTENTION_GROUP}, budget=budget)
    with no_grad(), probe:
        x = Tensor(rng.standard_normal((1, n, cfg.model_dim)))
        if kind == "separable":
            out = conformer_forward(x, bind(ConformerLayer, params, ""), cfg)
        else:
            out = transformer_forward(x, bind(TransformerLayer, params, ""), cfg)
        del out, x
    return probe


def bench_memory(lengths: Sequence[int] = DEFAULT_LENGTHS, config: Config | None = None,
                 budget: int | None = None, seed: int = 0) -> dict[str, MemoryCurve]:
    """Peak live elements per length for both attention variants.

    Curves: ``separable.attn`` and ``standard.attn`` (everything allocated by
    the attention function), ``standard.attn_matrix`` (the n x n softmax
    output alone) and ``<variant>.layer`` (the whole layer).
    """
    cfg = config or bench_config()
    rng = np.random.default_rng(seed)
    params = {k: Tensor(v) for k, v in ConformerLayer.init_params(cfg, rng).items()}
    names = ["separable.attn", "separable.layer", "standard.attn", "standard.attn_matrix",
             "standard.layer"]
    peaks: dict[str, list[int]] = {k: [] for k in names}
    for n in lengths:
        for kind in ("separable", "standard"):
            try:
                probe = _run_layer(kind, n, cfg, params, rng, budget)
            except (MemoryError, BudgetExceeded) as e:
                log.warning("%s attention at n=%d ran out of memory: %s", kind, n, e)
                for k in names:
                    if k.startswith(kind):
                        peaks[k].append(FAILED)
                continue
            peaks[f"{kind}.attn"].append(probe.group_peak(ATTENTION_GROUP))
            peaks[f"{kind}.layer"].append(probe.peak_live_elements)
            if kind == "standard":
                peaks["standard.attn_matrix"].append(probe.peak("attn_matrix"))
            log.info("n=%d %s attention peak %d", n, kind, probe.group_peak(ATTENTION_GROUP))
    return {k: MemoryCurve(k, list(lengths), v).fit() for k, v in peaks.items()}


def write_csv(curves: dict[str, MemoryCurve], path: str | Path, column: str = "peak_elements") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["length", "label", column])
        for label, curve in curves.items():
            for n, p in zip(curve.lengths, curve.peaks):
                w.writerow([n, label, p])


def summary(curves: dict[str, MemoryCurve]) -> str:
    lines = []
    for label, c in curves.items():
        ratios = ", ".join(f"{r:.3f}" for r in c.doubling_ratios())
        lin = f"{c.linear.r2:.6f}" if c.linear else "n/a"
        quad = f"{c.quadratic.r2:.6f}" if c.quadratic else "n/a"
        lines.append(f"{label:<22} linear R2 {lin}  quadratic R2 {quad}  doubling ratios [{ratios}]")
    return "\n".join(lines)
