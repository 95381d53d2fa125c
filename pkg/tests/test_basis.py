import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wasep_kpz import (DirichletBasis, HermiteBasis, SobolevWeights, TestFunction, hermite_eval,
                       neg_sobolev_norm, project, sup_by_l2_rhs, weighted_sup_norm)
from wasep_kpz.basis import NonDecayingError, ResolutionError


def gauss_hermite_gram(n_max, deg=120):
    x, w = np.polynomial.hermite.hermgauss(deg)
    H = HermiteBasis(n_max).table(x, n_max) * np.exp(x**2 / 2)
    return (H * w) @ H.T


def test_lowest_hermite_value():
    assert hermite_eval(1, 0.0) == pytest.approx(math.pi**-0.25)
    assert hermite_eval(1, 0.0) == pytest.approx(0.751126, abs=1e-6)


def test_orthonormality_to_40():
    assert np.abs(gauss_hermite_gram(40) - np.eye(40)).max() < 1e-8


@pytest.mark.parametrize("n", [1, 2, 7, 20, 40])
def test_derivative_norms(n):
    u = np.linspace(-16, 16, 32001)
    d = hermite_eval(n, u, 1)
    assert np.trapezoid(d * d, u) == pytest.approx(n - 0.5, abs=1e-8)
    assert HermiteBasis.derivative_norm_sq(n) == n - 0.5


@pytest.mark.parametrize("n", [1, 4, 12])
@pytest.mark.parametrize("order", [1, 2, 3])
def test_derivatives_match_finite_differences(n, order):
    u = np.random.default_rng(n).uniform(-5, 5, 100)
    h = 1e-4
    fd = (hermite_eval(n, u + h, order - 1) - hermite_eval(n, u - h, order - 1)) / (2 * h)
    exact = hermite_eval(n, u, order)
    scale = np.abs(exact).max()
    assert np.abs(fd - exact).max() <= 1e-6 * scale


def test_hermite_rejects_bad_index():
    with pytest.raises(ValueError):
        hermite_eval(0, 0.0)
    with pytest.raises(ValueError):
        hermite_eval(2, 0.0, 4)


def test_dirichlet_basis():
    T = 0.25
    D = DirichletBasis(T)
    t = np.linspace(0, T, 20001)
    G = np.array([D(m, t) for m in range(1, 6)])
    assert np.abs(G[:, [0, -1]]).max() < 1e-12
    assert np.abs(np.trapezoid(G[:, None] * G[None], t) - np.eye(5)).max() < 1e-10
    for m in range(1, 6):
        assert np.allclose(-D(m, t, 2), D.eigenvalue(m) * D(m, t), rtol=1e-8, atol=1e-8 * D.eigenvalue(m))


def test_weights_positive_and_decreasing():
    w = SobolevWeights().grid(6, 6)
    assert np.all(w > 0)
    assert np.all(np.diff(w, axis=0) < 0) and np.all(np.diff(w, axis=1) < 0)


def test_norm_of_single_mode():
    assert neg_sobolev_norm({(1, 1): 1.0}) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    for m in range(1, 5):
        for n in range(1, 5):
            exact = ((m**3 + n**3) * m**2 * n**6) ** -0.5
            assert abs(neg_sobolev_norm({(m, n): 1.0}) - exact) < 1e-12
    assert neg_sobolev_norm({}) == 0.0


@given(st.lists(st.floats(-10, 10), min_size=12, max_size=12),
       st.lists(st.floats(-10, 10), min_size=12, max_size=12))
def test_norm_triangle_inequality(a, b):
    a, b = np.reshape(a, (3, 4)), np.reshape(b, (3, 4))
    assert neg_sobolev_norm(a + b) <= neg_sobolev_norm(a) + neg_sobolev_norm(b) + 1e-12


def test_weighted_sup_examples():
    G = TestFunction.gaussian(1.0)
    assert weighted_sup_norm(G, 0) == pytest.approx(2 * math.exp(-0.5), rel=1e-9)
    assert weighted_sup_norm(TestFunction.zero(), 0) == 0.0
    with pytest.raises(NonDecayingError):
        weighted_sup_norm(lambda u: np.ones_like(u), 0, radius=10)


@settings(deadline=None, max_examples=100)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=10))
def test_sup_by_l2(coeffs):
    c = np.asarray(coeffs)
    if not np.any(np.abs(c) > 1e-6):
        return
    H = TestFunction.hermite_series(c)
    lhs = H.sup_norms[0] ** 2
    rhs = sup_by_l2_rhs(H, lambda u: H.derivative(u, 1), H.radius)
    assert lhs <= rhs * (1 + 1e-9)


def _grid(T=1.0):
    return np.linspace(0, T, 801), np.linspace(-14, 14, 2801)


def test_project_single_mode():
    t, u = _grid()
    D = DirichletBasis(1.0)
    phi = D(2, t)[:, None] * hermite_eval(3, u)[None, :]
    c = project(phi, t, u, 4, 5)
    expect = np.zeros((4, 5))
    expect[1, 2] = 1.0
    assert np.abs(c - expect).max() < 1e-6


def test_project_linear_and_parseval():
    t, u = _grid()
    D = DirichletBasis(1.0)
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    modes = np.array([[D(m, t)[:, None] * hermite_eval(n, u)[None, :] for n in range(1, 5)]
                      for m in range(1, 4)])
    phiA = np.einsum("mn,mntu->tu", A, modes)
    phiB = np.einsum("mn,mntu->tu", B, modes)
    cA, cB = project(phiA, t, u, 3, 4), project(phiB, t, u, 3, 4)
    assert np.allclose(project(phiA + 2 * phiB, t, u, 3, 4), cA + 2 * cB, atol=1e-12)
    norm2 = np.trapezoid(np.trapezoid(phiA**2, u, axis=1), t)
    assert abs(np.sum(cA**2) - norm2) < 1e-6 * norm2


def test_project_resolution_errors():
    t, u = _grid()
    with pytest.raises(ResolutionError):
        project(np.zeros((9, u.size)), t[:9], u, 4, 3)
    with pytest.raises(ResolutionError):
        project(np.zeros((t.size, 11)), t, np.linspace(-3, 3, 11), 2, 3)
