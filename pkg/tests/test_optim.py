import numpy as np
import pytest

from ckqti.optim import Adam, NonFiniteGradient
from ckqti.tensor import Tensor


def test_zero_gradient_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    opt = Adam(p, lr=0.1)
    for _ in range(5):
        opt.step({"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_first_step_moves_by_lr():
    p = {"x": Tensor(np.array([3.0]))}
    Adam(p, lr=1e-3).step({"x": np.array([42.0])})
    np.testing.assert_allclose(p["x"].data, [3.0 - 1e-3], rtol=0, atol=1e-9)


def test_defaults():
    opt = Adam({})
    assert (opt.lr, opt.beta1, opt.beta2, opt.eps) == (1e-4, 0.9, 0.999, 1e-8)


def test_quadratic_bowl_converges():
    target = np.array([1.5, -0.5, 3.0])
    p = {"x": Tensor(np.zeros(3))}
    opt = Adam(p, lr=0.05)
    for _ in range(2000):
        opt.step({"x": 2.0 * (p["x"].data - target)})
    assert np.max(np.abs(p["x"].data - target)) < 1e-3


def test_nan_gradient_names_parameter():
    p = {"good": Tensor(np.zeros(1)), "bad": Tensor(np.zeros(2))}
    opt = Adam(p)
    with pytest.raises(NonFiniteGradient, match="bad"):
        opt.step({"good": np.zeros(1), "bad": np.array([0.0, np.nan])})
    assert opt.state.step == 0
