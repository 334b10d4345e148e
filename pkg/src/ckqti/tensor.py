"""Dense tensors with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` are recorded in execution
order; :meth:`Tape.backward` replays them in reverse.  Outside a tape nothing
is recorded, which is the inference path used for index building and the
memory benchmark.
"""

from __future__ import annotations

import contextvars
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ckqti import probe as _probe

DEFAULT_DTYPE = np.float64

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "ckqti_active_tape", default=None
)


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class Tensor:
    """An immutable n-d array of floats plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if dtype is None:
            keep = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if keep else DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        _probe.register(arr)

    # -- metadata ---------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- tape ------------------------------------------------------------------

_seq = itertools.count()


@dataclass
class Node:
    seq: int
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; every op executed inside the block whose inputs
    require gradients is appended.  Tapes nest (the innermost one records).
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
        """Reverse pass from a scalar ``loss``.

        Gradients are accumulated into ``.grad`` of every leaf that requires
        them.  When ``params`` is given, their gradients are also returned in
        the same order, with zeros for parameters the loss does not reach.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(n.output) for n in self.nodes}
        leaves: dict[int, Tensor] = {}
        if loss.requires_grad and id(loss) not in produced:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        if params is None:
            return None
        out = []
        for p in params:
            g = grads.get(id(p))
            out.append(np.zeros_like(p.data) if g is None else g)
        return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None):
    return tape.backward(loss, params)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


class no_grad:
    """Suspend recording for the enclosed block."""

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(None)

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)


def _record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], bw) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.nodes.append(Node(next(_seq), op, inputs, out, bw))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _record("div", out, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _record("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive input")
    return _record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative input")
    out = np.sqrt(a.data)
    return _record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    keep = a.data > floor
    return _record("clamp_min", np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), stable for large |a|."""
    out = np.logaddexp(0.0, a.data)
    sig = np.exp(a.data - out)
    return _record("softplus", out, (a,), lambda g: (g * sig,))


# -- reductions and shape ----------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum_(a, axis, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _record("swapaxes", np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a: Tensor, index) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _record("getitem", np.array(a.data[index]), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _record("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, cuts, axis=axis)))


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", a.data @ b.data, (a, b), bw)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax along ``axis``.

    ``mask`` (broadcastable boolean) removes positions; they get probability 0.
    A row with every position masked comes out all-zero.
    """
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record("softmax", out, (x,), bw)


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise row cosine similarity, ``(..., p, h) x (..., q, h) -> (..., p, q)``.

    Zero rows have similarity 0 with everything.
    """
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"cosine_rows inner dimension mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(np.einsum("...i,...i->...", a.data, a.data))[..., None]
    nb = np.sqrt(np.einsum("...i,...i->...", b.data, b.data))[..., None]
    inv_a = np.divide(1.0, na, out=np.zeros_like(na), where=na > 0)
    inv_b = np.divide(1.0, nb, out=np.zeros_like(nb), where=nb > 0)
    an, bn = a.data * inv_a, b.data * inv_b
    out = np.clip(np.einsum("...ph,...qh->...pq", an, bn), -1.0, 1.0)

    def bw(g):
        g_an = np.einsum("...pq,...qh->...ph", g, bn)
        g_bn = np.einsum("...pq,...ph->...qh", g, an)
        ga = (g_an - an * np.einsum("...h,...h->...", g_an, an)[..., None]) * inv_a
        gb = (g_bn - bn * np.einsum("...h,...h->...", g_bn, bn)[..., None]) * inv_b
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("cosine_rows", out, (a, b), bw)


def grouped_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, groups: int) -> Tensor:
    """Same-length grouped 1-d convolution along the sequence axis.

    x: ``(..., n, h)``; weight: ``(h, h // groups, window)`` with odd window;
    channels are split into ``groups`` contiguous blocks convolved independently.
    """
    h = x.shape[-1]
    h_out, ci, window = weight.shape
    if h % groups or h_out % groups or ci != h // groups:
        raise ValueError(f"channels {h} not divisible into {groups} groups for weight {weight.shape}")
    if window % 2 != 1:
        raise ValueError(f"convolution window must be odd, got {window}")
    co = h_out // groups
    n = x.shape[-2]
    pad = (window - 1) // 2
    lead = x.shape[:-2]
    widths = [(0, 0)] * len(lead) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    # (..., G, n + 2p, ci)
    xg = np.moveaxis(xp.reshape(*lead, n + 2 * pad, groups, ci), -2, -3)
    # per-tap (G, ci, co)
    wg = weight.data.reshape(groups, co, ci, window)
    taps = [np.ascontiguousarray(np.swapaxes(wg[..., j], -1, -2)) for j in range(window)]
    acc = np.zeros((*lead, groups, n, co))
    for j in range(window):
        acc += xg[..., j:j + n, :] @ taps[j]
    out = np.moveaxis(acc, -3, -2).reshape(*lead, n, h_out)
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gg = np.moveaxis(g.reshape(*lead, n, groups, co), -2, -3)
        gxg = np.zeros_like(xg)
        gw = np.zeros((groups, co, ci, window))
        flat_g = gg.reshape(-1, groups, n, co)
        flat_x = xg.reshape(-1, groups, n + 2 * pad, ci)
        for j in range(window):
            gxg[..., j:j + n, :] += gg @ np.swapaxes(taps[j], -1, -2)
            gw[..., j] = np.einsum("bgnc,bgni->gci", flat_g, flat_x[:, :, j:j + n, :])
        gx = np.moveaxis(gxg, -3, -2).reshape(*lead, n + 2 * pad, h)[..., pad:pad + n, :]
        grads = [gx, gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.reshape(-1, h_out).sum(axis=0))
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("grouped_conv1d", out, inputs, bw)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + shift.data

    def bw(g):
        gx_hat = g * gain.data
        h = x.shape[-1]
        gx = inv / h * (h * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, shift.shape))

    return _record("layer_norm", out, (x, gain, shift), bw)


def embedding(table: Tensor, ids: np.ndarray, padding_id: int = 0) -> Tensor:
    """Row lookup; the padding row reads as zeros and never receives gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of bounds for table with {table.shape[0]} rows")
    out = table.data[ids]
    out[ids == padding_id] = 0.0

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        gt[padding_id] = 0.0
        return (gt,)

    return _record("embedding", out, (table,), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))
