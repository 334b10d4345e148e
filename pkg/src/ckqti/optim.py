from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over a name -> Tensor parameter mapping, updated in place."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 state: AdamState | None = None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = state or AdamState()

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for parameter '{name}'")
        st = self.state
        st.step += 1
        c1 = 1.0 - self.beta1 ** st.step
        c2 = 1.0 - self.beta2 ** st.step
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            m = st.m.get(name)
            v = st.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            st.m[name], st.v[name] = m, v
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - update
