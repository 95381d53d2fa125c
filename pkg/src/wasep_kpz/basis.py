"""Hermite and Dirichlet-sine bases and the weighted negative-order norm.

Hermite functions are indexed from 1: ``G_n = psi_{n-1}`` where
``psi_k`` is the k-th orthonormal Hermite function. Derivatives come
from the ladder relation, never from differentiating polynomials.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "HermiteBasis",
    "hermite_eval",
    "DirichletBasis",
    "SobolevWeights",
    "weighted_sup_norm",
    "sup_by_l2_rhs",
    "neg_sobolev_norm",
    "project",
    "ResolutionError",
    "NonDecayingError",
]


class ResolutionError(ValueError):
    pass


class NonDecayingError(ValueError):
    pass


def _psi_table(kmax, u):
    """``psi_0..psi_kmax`` at ``u``; shape ``(kmax + 1,) + u.shape``."""
    u = np.asarray(u, dtype=float)
    out = np.empty((kmax + 1,) + u.shape)
    out[0] = math.pi**-0.25 * np.exp(-0.5 * u * u)
    if kmax >= 1:
        out[1] = math.sqrt(2.0) * u * out[0]
    for k in range(1, kmax):
        out[k + 1] = (math.sqrt(2.0 / (k + 1)) * u * out[k]
                      - math.sqrt(k / (k + 1)) * out[k - 1])
    return out


def _ladder(coeffs):
    """Coefficients of the derivative of ``sum_k c_k psi_k`` (length grows by one)."""
    c = np.asarray(coeffs, dtype=float)
    out = np.zeros(c.shape[0] + 1)
    for k, ck in enumerate(c):
        if ck == 0.0:
            continue
        if k >= 1:
            out[k - 1] += math.sqrt(k / 2.0) * ck
        out[k + 1] -= math.sqrt((k + 1) / 2.0) * ck
    return out


def series_derivative(coeffs, order):
    """Hermite-function coefficients of the ``order``-th derivative of a series."""
    c = np.asarray(coeffs, dtype=float)
    for _ in range(order):
        c = _ladder(c)
    return c


def series_eval(coeffs, u, order=0):
    """Evaluate ``d^order/du^order sum_k c_k psi_k`` (0-based coefficients)."""
    c = series_derivative(coeffs, order)
    table = _psi_table(c.shape[0] - 1, u)
    return np.tensordot(c, table, axes=1)


class HermiteBasis:
    """Hermite functions ``G_1..G_max_order`` with derivatives up to order 3."""

    max_derivative = 3

    def __init__(self, max_order=64):
        self.max_order = int(max_order)

    def _check(self, n, derivative):
        if not 1 <= n <= self.max_order:
            raise ValueError(f"Hermite index {n} outside 1..{self.max_order}")
        if not 0 <= derivative <= self.max_derivative:
            raise ValueError(f"derivative order {derivative} outside 0..3")

    def coefficients(self, n):
        c = np.zeros(n)
        c[n - 1] = 1.0
        return c

    def __call__(self, n, u, derivative=0):
        self._check(n, derivative)
        return series_eval(self.coefficients(n), u, derivative)

    def table(self, u, n_max=None):
        """Values of ``G_1..G_n_max`` at ``u``, shape ``(n_max,) + u.shape``."""
        n_max = self.max_order if n_max is None else n_max
        return _psi_table(n_max - 1, u)

    @staticmethod
    def derivative_norm_sq(n):
        """``||G_n'||_2^2 = n - 1/2``."""
        return n - 0.5

    @staticmethod
    def turning_point(n):
        return math.sqrt(2 * n - 1)


_DEFAULT_BASIS = HermiteBasis()


def hermite_eval(n, u, derivative_order=0, basis=_DEFAULT_BASIS):
    return basis(n, u, derivative_order)


class DirichletBasis:
    """Sine eigenbasis of ``-d^2/dt^2`` on ``[0, T]`` with Dirichlet conditions."""

    def __init__(self, horizon):
        self.horizon = float(horizon)

    def eigenvalue(self, m):
        return (m * math.pi / self.horizon) ** 2

    def __call__(self, m, t, derivative=0):
        T = self.horizon
        w = m * math.pi / T
        amp = math.sqrt(2.0 / T)
        t = np.asarray(t, dtype=float)
        # sin, cos, -sin, -cos cycle
        phase = [np.sin, np.cos][derivative % 2](w * t)
        sign = -1.0 if derivative % 4 in (2, 3) else 1.0
        return sign * amp * w**derivative * phase


class SobolevWeights:
    """``weight(m, n) = [(m^3 + n^3) m^2 n^6]^{-1}`` for ``m, n >= 1``."""

    def __call__(self, m, n):
        m = np.asarray(m, dtype=float)
        n = np.asarray(n, dtype=float)
        if np.any(m < 1) or np.any(n < 1):
            raise ValueError("indices start at 1")
        return 1.0 / ((m**3 + n**3) * m**2 * n**6)

    def grid(self, m_max, n_max):
        m = np.arange(1, m_max + 1)[:, None]
        n = np.arange(1, n_max + 1)[None, :]
        return self(m, n)


def neg_sobolev_norm(coefficients, weights=SobolevWeights()):
    """Weighted l2 norm of basis coefficients.

    ``coefficients`` is either a mapping ``(m, n) -> value`` or a 2-d array
    with ``coefficients[m - 1, n - 1]``.
    """
    if isinstance(coefficients, dict):
        if not coefficients:
            return 0.0
        mn = np.array(list(coefficients.keys()), dtype=float)
        vals = np.array(list(coefficients.values()), dtype=float)
        return float(math.sqrt(np.sum(weights(mn[:, 0], mn[:, 1]) * vals**2)))
    c = np.asarray(coefficients, dtype=float)
    w = weights.grid(*c.shape)
    return float(math.sqrt(np.sum(w * c**2)))


def weighted_sup_norm(G, m, radius=None, points=4001):
    """``sup_u |(1 + u^2) G^{(m)}(u)|`` for a test function or callable.

    Scans a dense grid on ``[-R, R]``, polishes the largest local maxima
    with a bounded scalar search and checks that the weighted function
    has decayed by the grid edge.
    """
    if not 0 <= m <= 3:
        raise ValueError("derivative order must be in 0..3")
    f = _derivative_callable(G, m)
    R = float(radius if radius is not None else getattr(G, "radius", 12.0))

    def weighted(u):
        return np.abs((1 + u * u) * f(u))

    u = np.linspace(-R, R, points)
    w = weighted(u)
    best = float(w.max())
    if best == 0.0:
        return 0.0
    outer = np.linspace(R, 3 * R, 401)
    edge = max(float(weighted(outer).max()), float(weighted(-outer).max()))
    if edge > 1e-3 * best:
        raise NonDecayingError(
            f"(1+u^2)|G^({m})| is {edge:.3g} beyond |u| = {R}; input does not decay")
    h = u[1] - u[0]
    interior = np.flatnonzero((w[1:-1] >= w[:-2]) & (w[1:-1] >= w[2:])) + 1
    cand = interior[np.argsort(w[interior])[::-1][:8]]
    for i in cand:
        res = minimize_scalar(lambda s: -weighted(np.array(s)), bounds=(u[i] - h, u[i] + h),
                              method="bounded", options={"xatol": 1e-10})
        best = max(best, float(-res.fun))
    return best


def _derivative_callable(G, m):
    if hasattr(G, "derivative"):
        return lambda u: G.derivative(u, m)
    if m == 0 and callable(G):
        return G
    raise TypeError("need a TestFunction (or a plain callable for m = 0)")


def sup_by_l2_rhs(H, dH, radius, points=20001):
    """``4 ||(1+u^2)H||^2 + 2 ||(1+u^2)H|| ||(1+u^2)H'||`` by trapezoid quadrature."""
    u = np.linspace(-radius, radius, points)
    w = 1 + u * u
    a = math.sqrt(np.trapezoid((w * H(u)) ** 2, u))
    b = math.sqrt(np.trapezoid((w * dH(u)) ** 2, u))
    return 4 * a * a + 2 * a * b


def project(phi, t, u, m_max, n_max, horizon=None):
    """Coefficients ``<g_m (x) G_n, phi>`` of a field sampled on ``t x u``.

    ``phi`` has shape ``(len(t), len(u))``; ``t`` must span ``[0, T]``.
    Returns an ``(m_max, n_max)`` array indexed ``[m - 1, n - 1]``.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (t.size, u.size):
        raise ValueError("phi must have shape (len(t), len(u))")
    T = float(horizon if horizon is not None else t[-1])
    if t.size < 4 * m_max + 1:
        raise ResolutionError(f"{t.size} time points cannot resolve g_{m_max}")
    turn = HermiteBasis.turning_point(n_max)
    du = np.max(np.diff(u))
    if du > 0.25 * math.pi / math.sqrt(2 * n_max + 1) or min(-u[0], u[-1]) < turn + 6:
        raise ResolutionError(f"u grid does not resolve G_{n_max}")
    D = DirichletBasis(T)
    gt = np.array([D(m, t) for m in range(1, m_max + 1)])
    Gu = HermiteBasis(n_max).table(u, n_max)
    inner = np.trapezoid(phi[None, :, :] * Gu[:, None, :], u, axis=2)  # (n, t)
    return np.trapezoid(gt[:, None, :] * inner[None, :, :], t, axis=2)
