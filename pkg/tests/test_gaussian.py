import math

import numpy as np
import pytest
from scipy import stats

from wasep_kpz import TestFunction
from wasep_kpz.gaussian import (GridSpec, WhiteNoiseMarginal, limit_covariance, sample_sheet,
                                sample_white_pairing, sheet_pairing, sheet_pairing_variance)


def test_white_pairing():
    rng = np.random.default_rng(0)
    assert np.all(sample_white_pairing(TestFunction.zero(), rng, 10) == 0)
    x = sample_white_pairing(TestFunction.hermite(1), rng, 100_000)
    assert x.var() == pytest.approx(1.0, rel=0.02)


def test_white_noise_joint_draws():
    G1, G2 = TestFunction.hermite(1), TestFunction.hermite(2)
    W = WhiteNoiseMarginal([G1, G2, G1 + G2], rng=1)
    assert np.allclose(W.gram, [[1, 0, 1], [0, 1, 1], [1, 1, 2]], atol=1e-8)
    x = W.sample(40_000)
    c = np.mean(x[:, 0] * x[:, 1])
    assert abs(c) < 4 / math.sqrt(40_000)


def test_sheet_boundary_values():
    s = sample_sheet(GridSpec(1.0, 2.0, 16, 32), 3, size=5)
    assert np.all(s.values[:, 0, :] == 0)
    assert np.all(s.values[:, :, 32] == 0)


def test_sheet_covariance():
    R = 10_000
    s = sample_sheet(GridSpec(1.0, 2.0, 16, 32), 4, size=R)
    B = s.at(1.0)
    u = s.u
    i = {v: int(np.argmin(np.abs(u - v))) for v in (1.0, -1.0, 0.5)}
    var = np.mean(B[:, i[1.0]] ** 2)
    assert abs(var - 1.0) <= 4 * math.sqrt(2 / R)
    cross = B[:, i[1.0]] * B[:, i[-1.0]]
    assert abs(cross.mean()) <= 4 * cross.std() / math.sqrt(R)
    same = B[:, i[1.0]] * B[:, i[0.5]]
    assert abs(same.mean() - 0.5) <= 4 * same.std() / math.sqrt(R)
    half = s.at(0.5)[:, i[1.0]] * B[:, i[1.0]]
    assert abs(half.mean() - 0.5) <= 4 * half.std() / math.sqrt(R)


def test_sheet_pairing_examples():
    G1, G2 = TestFunction.hermite(1), TestFunction.hermite(2)
    grid = GridSpec(1.0, 12.0, 8, 1024)
    s = sample_sheet(grid, 5, size=3)
    assert np.all(sheet_pairing(s, G1, 0.0) == 0)
    combo = 2.0 * G1 + G2 * -0.5
    assert np.allclose(sheet_pairing(s, combo, 1.0),
                       2 * sheet_pairing(s, G1, 1.0) - 0.5 * sheet_pairing(s, G2, 1.0), atol=1e-12)
    with pytest.raises(ValueError):
        s.at(0.3)


def test_sheet_pairing_resolution_errors():
    coarse = sample_sheet(GridSpec(1.0, 12.0, 4, 16), 0, size=1)
    with pytest.raises(ValueError):
        sheet_pairing(coarse, TestFunction.hermite(3), 1.0)
    narrow = sample_sheet(GridSpec(1.0, 2.0, 4, 256), 0, size=1)
    with pytest.raises(ValueError):
        sheet_pairing(narrow, TestFunction.hermite(3), 1.0)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_pairing_variance_two_ways(n):
    G = TestFunction.hermite(n)
    grid = GridSpec(1.0, 12.0, 8, 1024)
    assert sheet_pairing_variance(grid, G, 0.7) == pytest.approx(limit_covariance(G, G, 0.7, 0.7), rel=0.01)


def test_limit_covariance_examples():
    G1, G2 = TestFunction.hermite(1), TestFunction.hermite(2)
    assert limit_covariance(G2, G2, 1.0, 1.0) == pytest.approx(3.0)
    assert abs(limit_covariance(G1, G2, 1.0, 1.0)) < 1e-12
    assert limit_covariance(G1, G1, 0.0, 1.0) == 0
    assert limit_covariance(G1, G1, 0.3, 0.9) == pytest.approx(0.3)


def test_sheet_pairing_law():
    G = TestFunction.hermite(2)
    grid = GridSpec(1.0, 12.0, 2, 512)
    s = sample_sheet(grid, 9, size=10_000)
    x = sheet_pairing(s, G, 1.0)
    sd = math.sqrt(limit_covariance(G, G, 1.0, 1.0))
    assert stats.kstest(x / sd, "norm").pvalue >= 0.01
