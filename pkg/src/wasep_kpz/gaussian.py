"""Reference Gaussian objects: white-noise pairings and the Brownian sheet."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridSpec",
    "SheetSample",
    "WhiteNoiseMarginal",
    "sample_white_pairing",
    "sample_sheet",
    "sheet_pairing",
    "sheet_pairing_variance",
    "limit_covariance",
    "l2_inner",
]


def l2_inner(f, g, radius=None, step=2e-3):
    """``int f g du`` by trapezoid over ``[-R, R]``."""
    R = radius or max(getattr(f, "radius", 12.0), getattr(g, "radius", 12.0))
    u = np.linspace(-R, R, int(2 * R / step) + 1)
    return float(np.trapezoid(f(u) * g(u), u))


class WhiteNoiseMarginal:
    """Pairings of a white-noise sample with a fixed list of test functions."""

    def __init__(self, functions, rng=None):
        self.functions = list(functions)
        self.rng = np.random.default_rng(rng)
        n = len(self.functions)
        self.gram = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                self.gram[i, j] = self.gram[j, i] = l2_inner(self.functions[i], self.functions[j])

    def sample(self, size=None):
        """Joint draws, shape ``size + (n_functions,)``."""
        return self.rng.multivariate_normal(np.zeros(len(self.functions)), self.gram,
                                            size=size, method="eigh")


def sample_white_pairing(G, rng, size=None):
    """Draw(s) of ``W(G) ~ N(0, ||G||_2^2)``."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return G.l2_norm * rng.standard_normal(size)


@dataclass(frozen=True)
class GridSpec:
    horizon: float
    half_width: float
    time_steps: int = 512
    space_steps: int = 1024  # per side

    @property
    def dt(self):
        return self.horizon / self.time_steps

    @property
    def du(self):
        return self.half_width / self.space_steps

    def times(self):
        return np.linspace(0.0, self.horizon, self.time_steps + 1)

    def space(self):
        return np.linspace(-self.half_width, self.half_width, 2 * self.space_steps + 1)


@dataclass
class SheetSample:
    grid: GridSpec
    values: np.ndarray  # (..., nt + 1, 2 nu + 1)

    @property
    def t(self):
        return self.grid.times()

    @property
    def u(self):
        return self.grid.space()

    def at(self, t):
        """``B(t, .)`` at a grid time."""
        j = int(round(t / self.grid.dt))
        if abs(j * self.grid.dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t = {t} is not on the time grid")
        return self.values[..., j, :]


def sample_sheet(grid, rng, size=None):
    """Brownian sheet on ``[0, T] x [-U, U]`` from i.i.d. ``N(0, dt du)`` cells.

    The two spatial branches are built outward from ``u = 0`` so that
    ``B(t, 0) = B(0, u) = 0``.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    nt, nu = grid.time_steps, grid.space_steps
    sd = math.sqrt(grid.dt * grid.du)
    cells = rng.standard_normal(shape + (2, nt, nu)) * sd
    branch = np.cumsum(np.cumsum(cells, axis=-2), axis=-1)  # (..., 2, nt, nu)
    out = np.zeros(shape + (nt + 1, 2 * nu + 1))
    out[..., 1:, nu + 1:] = branch[..., 0, :, :]
    out[..., 1:, :nu] = branch[..., 1, :, ::-1]
    return SheetSample(grid, out)


def _pairing_weights(grid, G):
    u = grid.space()
    w = np.full(u.shape, grid.du)
    w[0] = w[-1] = 0.5 * grid.du
    return w * G.derivative(u, 2)


def _check_resolution(grid, G):
    u = grid.space()
    outside = np.linspace(grid.half_width, grid.half_width + 30, 6001)
    tail = np.trapezoid((1 + outside**2) * (np.abs(G.derivative(outside, 2))
                                            + np.abs(G.derivative(-outside, 2))), outside)
    if tail > 1e-8:
        raise ValueError(f"sheet half-width {grid.half_width} truncates G'' (tail {tail:.2e})")
    coarse = np.trapezoid(G.derivative(u, 2) ** 2, u)
    fine_u = np.linspace(u[0], u[-1], 4 * (u.size - 1) + 1)
    fine = np.trapezoid(G.derivative(fine_u, 2) ** 2, fine_u)
    if abs(coarse - fine) > 1e-6 * fine:
        raise ValueError("sheet u-grid does not resolve G''")


def sheet_pairing(sheet, G, t, check=True):
    """``sqrt(2) int B(t, u) G''(u) du`` by the trapezoid rule."""
    if check:
        _check_resolution(sheet.grid, G)
    return math.sqrt(2.0) * sheet.at(t) @ _pairing_weights(sheet.grid, G)


def sheet_pairing_variance(grid, G, t):
    """Exact variance of the discretized pairing: double quadrature of the sheet kernel.

    On a branch ``sum_jk a_j a_k min(j, k) du = du sum_i (sum_{j>=i} a_j)^2``.
    """
    a = _pairing_weights(grid, G)
    nu = grid.space_steps
    pos = a[nu + 1:]
    neg = a[:nu][::-1]
    acc = sum(np.sum(np.cumsum(b[::-1]) ** 2) for b in (pos, neg))
    return 2.0 * t * grid.du * acc


def limit_covariance(G1, G2, t1, t2):
    """``2 (t1 ^ t2) int G1' G2' du``."""
    tm = min(t1, t2)
    if tm <= 0:
        return 0.0
    R = max(G1.radius, G2.radius)
    u = np.linspace(-R, R, int(2 * R / 2e-3) + 1)
    return 2.0 * tm * float(np.trapezoid(G1.derivative(u, 1) * G2.derivative(u, 1), u))
