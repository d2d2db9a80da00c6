import numpy as np
import pytest

from rebelhad.rng import SplitMix64


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sm():
    return SplitMix64(99)
