"""Central finite-difference gradients, the oracle for every backward rule."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ckqti.tensor import Tape, Tensor


def numeric_grad(f: Callable[[], float], arr: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Perturb ``arr`` in place, one element at a time."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-relative error; below ``floor`` the comparison is absolute."""
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(num / den)


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                    step: float = 1e-3) -> dict[str, float]:
    """Relative error of tape gradients vs. central differences, per parameter."""
    with Tape() as tape:
        loss = loss_fn()
    analytic = tape.backward(loss, params)

    def scalar() -> float:
        return float(loss_fn().data.sum())

    report = {}
    for i, (p, a) in enumerate(zip(params, analytic)):
        assert p.data.dtype == np.float64, "gradient checks run in 64-bit"
        n = numeric_grad(scalar, p.data, step)
        report[p.name or f"param{i}"] = rel_error(a, n)
    return report
