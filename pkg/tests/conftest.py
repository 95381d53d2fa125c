import numpy as np
import pytest

from wasep_kpz import Mollifier, SimParams, TestFunction


@pytest.fixture
def small_params():
    return SimParams(0.1, 1.0, 20.0, 0.05)


@pytest.fixture
def bump():
    return Mollifier("bump")


@pytest.fixture
def h2():
    return TestFunction.hermite(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
