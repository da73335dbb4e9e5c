import sys

import numpy as np
import pytest

from dgvqa.agent import SemEquivModel
from dgvqa.dataset import SyntheticSpec, generate_synthetic
from dgvqa.environment import EnvConfig, train_discriminator
from dgvqa.kernel import Rng

SMALL = SyntheticSpec(n_items=300, K=40, d_img=12, d_txt=8, min_freq=5, n_rare=5)


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(SMALL, 3)


@pytest.fixture(scope="session")
def small_sem(small_ds):
    return SemEquivModel(small_ds.pool)


@pytest.fixture(scope="session")
def small_disc(small_ds):
    return train_discriminator(small_ds, EnvConfig(epochs=40, hidden=64, lr=0.1), Rng(4))


def rng_np(seed=0):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    # the acceptance module collects one line per criterion as it runs
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
