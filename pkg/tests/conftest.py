import numpy as np
import pytest

from bnn_spde.numerics import Rng


@pytest.fixture
def rng():
    return Rng(12345)


@pytest.fixture
def np_rng():
    return np.random.default_rng(2024)
