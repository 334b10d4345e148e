from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from ckqti.config import Config  # noqa: E402
from ckqti.scorer import CKModel  # noqa: E402
from ckqti.synth import make_synthetic_corpus  # noqa: E402

settings.register_profile("ckqti", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ckqti")


def toy_config(**overrides) -> Config:
    """Tiny dimensions for gradient checks and fast tests."""
    base = dict(model_dim=8, ff_dim=8, heads=2, conv_window=3, conv_groups=2, layers=1,
                dropout=0.0, kernels=4, pool_window=8, pool_stride=4, top_windows=2,
                batch_size=4, steps=10)
    base.update(overrides)
    return Config(**base)


def small_config(**overrides) -> Config:
    """Dimensions that train in well under a minute on the synthetic corpus."""
    base = dict(model_dim=32, ff_dim=32, heads=4, conv_groups=4, conv_window=7, layers=1,
                dropout=0.1, learning_rate=1e-3, batch_size=8, steps=600)
    base.update(overrides)
    return Config(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    make_synthetic_corpus(seed=0, docs=200, vocab=600).write(d)
    return d


@pytest.fixture
def toy_model():
    return CKModel.init(toy_config(), vocab_size=30, seed=7)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
