import numpy as np
import pytest

from lifetest.data_io import SynthConfig, generate_synthetic, split


@pytest.fixture(scope="session")
def small_collection():
    """Eight noiseless devices with three stages, for fast pipeline tests."""
    cfg = SynthConfig(n_devices=8, n_test=2, stages=(0, 1000, 30000), noise=0.0, seed=11)
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def small_split(small_collection):
    lifetests, spec = small_collection
    return split(lifetests, spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
