import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from spectralab.disorder import DisorderSpec, SeedPolicy, sample_weights  # noqa: E402


@pytest.fixture
def uniform_spec():
    return DisorderSpec.uniform(0.5, 1.5)


@pytest.fixture
def heavy_spec():
    return DisorderSpec.heavy(beta0=1.0, eta=1.0)


@pytest.fixture
def triangle_spec():
    return DisorderSpec.tabulated([(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)])


@pytest.fixture
def seeds():
    return SeedPolicy(12345)


@pytest.fixture
def small_field(uniform_spec, seeds):
    return sample_weights(uniform_spec, 12, seeds, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
