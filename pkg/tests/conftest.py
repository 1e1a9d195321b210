import numpy as np
import pytest

from cglsim import make_grid


@pytest.fixture(scope="session")
def grid16():
    return make_grid(1, 16)


@pytest.fixture(scope="session")
def grid8_2d():
    return make_grid(2, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
