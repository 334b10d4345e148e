"""Live-buffer accounting for tensors, in element counts.

Every :class:`~ckqti.tensor.Tensor` created while a probe is active charges
its underlying buffer to the current label; the charge is released when the
buffer is garbage collected.  Views share their base buffer and are charged
once.  Counts are float-width independent.
"""

from __future__ import annotations

import contextlib
import contextvars
import weakref
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

_ACTIVE: contextvars.ContextVar["AllocationProbe | None"] = contextvars.ContextVar(
    "ckqti_active_probe", default=None
)
_LABEL: contextvars.ContextVar[str] = contextvars.ContextVar("ckqti_alloc_label", default="other")


class BudgetExceeded(MemoryError):
    """An allocation would push live elements past the probe's budget."""


@dataclass
class AllocationProbe:
    """Tracks current and peak live elements, overall and per label.

    ``groups`` maps a group name to a label prefix; each group gets its own
    aggregated current/peak counter (e.g. every label starting with ``attn``).
    ``budget`` optionally caps live elements, raising :class:`BudgetExceeded`.
    """

    groups: dict[str, str] = field(default_factory=dict)
    budget: int | None = None
    current_live_elements: int = 0
    peak_live_elements: int = 0
    current_by_label: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    peak_by_label: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    current_by_group: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    peak_by_group: dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def __post_init__(self) -> None:
        self._live: dict[int, tuple[str, int]] = {}
        self._token = None

    def __enter__(self) -> "AllocationProbe":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def reset(self) -> None:
        """Zero the peaks (live buffers stay tracked)."""
        self.peak_live_elements = self.current_live_elements
        self.peak_by_label = defaultdict(int, self.current_by_label)
        self.peak_by_group = defaultdict(int, self.current_by_group)

    def _groups_of(self, label: str):
        return [g for g, prefix in self.groups.items() if label.startswith(prefix)]

    def _charge(self, key: int, label: str, n: int) -> None:
        if self.budget is not None and self.current_live_elements + n > self.budget:
            raise BudgetExceeded(
                f"allocating {n} elements under '{label}' exceeds budget of {self.budget}"
            )
        self._live[key] = (label, n)
        self.current_live_elements += n
        self.peak_live_elements = max(self.peak_live_elements, self.current_live_elements)
        self.current_by_label[label] += n
        self.peak_by_label[label] = max(self.peak_by_label[label], self.current_by_label[label])
        for g in self._groups_of(label):
            self.current_by_group[g] += n
            self.peak_by_group[g] = max(self.peak_by_group[g], self.current_by_group[g])

    def _release(self, key: int) -> None:
        entry = self._live.pop(key, None)
        if entry is None:
            return
        label, n = entry
        self.current_live_elements -= n
        self.current_by_label[label] -= n
        for g in self._groups_of(label):
            self.current_by_group[g] -= n

    def peak(self, label: str) -> int:
        return self.peak_by_label.get(label, 0)

    def group_peak(self, group: str) -> int:
        return self.peak_by_group.get(group, 0)


def register(arr: np.ndarray) -> None:
    probe = _ACTIVE.get()
    if probe is None:
        return
    root = arr
    while isinstance(root.base, np.ndarray):
        root = root.base
    key = id(root)
    if key in probe._live or root.size == 0:
        return
    probe._charge(key, _LABEL.get(), int(root.size))
    weakref.finalize(root, probe._release, key)


@contextlib.contextmanager
def label(name: str):
    """Charge allocations made inside the block to ``name``."""
    token = _LABEL.set(name)
    try:
        yield
    finally:
        _LABEL.reset(token)


def active_probe() -> AllocationProbe | None:
    return _ACTIVE.get()
