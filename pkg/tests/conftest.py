import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import ExperimentConfig, ModalityConfig, SynthConfig, TrainConfig  # noqa: E402
from src.data import generate_synthetic  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_synth():
    return SynthConfig(
        num_classes=3,
        samples_per_class=12,
        seed=3,
        modalities=[ModalityConfig(dim=4, informative=3, noise=0.3), ModalityConfig(dim=3, informative=1, noise=1.5)],
    )


@pytest.fixture
def small_dataset(small_synth):
    return generate_synthetic(small_synth)


@pytest.fixture
def small_config(small_synth):
    """Tiny experiment that trains in well under a second."""
    return ExperimentConfig(
        synth=small_synth,
        train=TrainConfig(epochs=3, warmup=1, batch_size=8, hidden_dim=4, lr=0.05, seed=0),
    )


@pytest.fixture
def posteriors(rng):
    """Factory for random n x C posterior matrices."""
    def make(n, c, alpha=1.0):
        return rng.dirichlet(np.full(c, alpha), size=n)
    return make
