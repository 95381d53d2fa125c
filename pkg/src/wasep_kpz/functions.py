"""Test functions, mollifiers and the refining Simpson rule."""

from __future__ import annotations

import math
from functools import cached_property, lru_cache

import numpy as np
from scipy.integrate import quad

from .basis import HermiteBasis, series_eval, weighted_sup_norm

__all__ = [
    "QuadratureError",
    "simpson",
    "refine_simpson",
    "TestFunction",
    "Mollifier",
    "MOLLIFIERS",
]


class QuadratureError(RuntimeError):
    """Raised when a refining quadrature fails to meet its tolerance."""


def simpson(values, h, axis=-1):
    """Composite Simpson on an odd number of equispaced samples."""
    values = np.moveaxis(np.asarray(values), axis, -1)
    n = values.shape[-1] - 1
    if n < 2 or n % 2:
        raise ValueError("Simpson needs an even number of intervals")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return values @ w * (h / 3.0)


def refine_simpson(sampler, a, b, h0, rtol=1e-8, atol=0.0, max_levels=14):
    """Halve the step until successive Simpson values agree.

    ``sampler(u)`` returns samples with the grid on the last axis. The
    test is ``|I_h - I_{h/2}| <= rtol * max(|I_{h/2}|, scale) + atol``
    elementwise, where ``scale`` is the Simpson integral of ``|f|``.
    """
    n = max(2, int(math.ceil((b - a) / h0)))
    n += n % 2
    prev = None
    for _ in range(max_levels):
        u = np.linspace(a, b, n + 1)
        vals = sampler(u)
        h = (b - a) / n
        cur = simpson(vals, h)
        if prev is not None:
            scale = np.maximum(np.abs(cur), simpson(np.abs(vals), h))
            if np.all(np.abs(cur - prev) <= rtol * scale + atol):
                return cur
        prev = cur
        n *= 2
    raise QuadratureError(f"Simpson refinement on [{a}, {b}] did not converge")


class TestFunction:
    """A rapidly decaying function with derivatives up to order 3.

    Build with :meth:`hermite`, :meth:`hermite_series` or
    :meth:`gaussian`; linear combinations are closed under ``+`` and
    scalar ``*``.
    """

    __test__ = False  # not a pytest class

    def __init__(self, derivatives, radius, name="G", hermite_coeffs=None):
        if len(derivatives) != 4:
            raise ValueError("need callables for G, G', G'', G'''")
        self._d = tuple(derivatives)
        self.radius = float(radius)
        self.name = name
        self.hermite_coeffs = None if hermite_coeffs is None else np.asarray(hermite_coeffs, float)

    @classmethod
    def hermite(cls, n):
        """The 1-based Hermite function ``G_n``."""
        c = np.zeros(n)
        c[n - 1] = 1.0
        return cls.hermite_series(c, name=f"hermite{n}")

    @classmethod
    def hermite_series(cls, coeffs, name=None):
        """``sum_n coeffs[n-1] G_n``."""
        c = np.asarray(coeffs, dtype=float)
        n = int(np.max(np.flatnonzero(c)) + 1) if np.any(c) else 1
        radius = HermiteBasis.turning_point(n + 3) + 9.0
        ds = [lambda u, k=k: series_eval(c, u, k) for k in range(4)]
        return cls(ds, radius, name or "hermite_series", hermite_coeffs=c)

    @classmethod
    def gaussian(cls, width=1.0, center=0.0, order=0):
        """``d^order/du^order exp(-(u - center)^2 / (2 width^2))``."""
        s = float(width)

        def make(k):
            p = np.polynomial.hermite_e.HermiteE.basis(order + k)

            def f(u):
                z = (np.asarray(u, dtype=float) - center) / s
                return (-1) ** (order + k) * p(z) * np.exp(-0.5 * z * z) / s ** (order + k)
            return f

        return cls([make(k) for k in range(4)], abs(center) + s * (10 + math.sqrt(order + 3)),
                   name=f"gauss_w{width:g}_c{center:g}_d{order}")

    @classmethod
    def zero(cls):
        z = lambda u: np.zeros_like(np.asarray(u, dtype=float))
        return cls([z] * 4, 1.0, name="zero", hermite_coeffs=np.zeros(1))

    def __call__(self, u):
        return self._d[0](u)

    def derivative(self, u, m=1):
        if not 0 <= m <= 3:
            raise ValueError("derivative order must be in 0..3")
        return self._d[m](u)

    def __add__(self, other):
        ds = [lambda u, f=f, g=g: f(u) + g(u) for f, g in zip(self._d, other._d)]
        coeffs = None
        if self.hermite_coeffs is not None and other.hermite_coeffs is not None:
            n = max(self.hermite_coeffs.size, other.hermite_coeffs.size)
            coeffs = np.zeros(n)
            coeffs[:self.hermite_coeffs.size] += self.hermite_coeffs
            coeffs[:other.hermite_coeffs.size] += other.hermite_coeffs
        return TestFunction(ds, max(self.radius, other.radius),
                            f"({self.name}+{other.name})", coeffs)

    def __mul__(self, a):
        a = float(a)
        ds = [lambda u, f=f: a * f(u) for f in self._d]
        coeffs = None if self.hermite_coeffs is None else a * self.hermite_coeffs
        return TestFunction(ds, self.radius, f"{a:g}*{self.name}", coeffs)

    __rmul__ = __mul__

    def __repr__(self):
        return f"TestFunction({self.name})"

    def _grid(self, step=2e-3):
        n = int(2 * self.radius / step) + 1
        return np.linspace(-self.radius, self.radius, n)

    @cached_property
    def sup_norms(self):
        """``sup |(1+u^2) G^{(m)}|`` for ``m = 0..3``."""
        return tuple(weighted_sup_norm(self, m) for m in range(4))

    @cached_property
    def l2_norm(self):
        u = self._grid()
        return math.sqrt(np.trapezoid(self(u) ** 2, u))

    @cached_property
    def derivative_l2_norm(self):
        u = self._grid()
        return math.sqrt(np.trapezoid(self.derivative(u, 1) ** 2, u))

    @cached_property
    def derivative_l1_norm(self):
        u = self._grid()
        return float(np.trapezoid(np.abs(self.derivative(u, 1)), u))

    def tail_mass(self, half_width):
        """``int_{|u| > half_width} (1+u^2) |G|``."""
        if half_width >= self.radius + 30:
            return 0.0
        u = np.linspace(half_width, max(self.radius, half_width) + 30, 20001)
        w = 1 + u * u
        return float(np.trapezoid(w * (np.abs(self(u)) + np.abs(self(-u))), u))


def _bump(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def _polybump(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1, (1.0 - u * u) ** 4, 0.0)


class Mollifier:
    """Even kernel supported in ``[-1, 1]`` with unit mass.

    ``kind="bump"`` is ``c exp(-1/(1-u^2))``; ``kind="polybump"`` is
    ``c (1-u^2)^4``. Normalizing constants come from adaptive quadrature.
    """

    def __init__(self, kind="bump"):
        shapes = {"bump": _bump, "polybump": _polybump}
        if kind not in shapes:
            raise ValueError(f"unknown mollifier {kind!r}; choose from {sorted(shapes)}")
        self.kind = kind
        self._shape = shapes[kind]
        mass, _ = quad(lambda v: float(self._shape(np.array(v))), -1, 1,
                       epsabs=0.0, epsrel=1e-13, limit=200)
        self.norm = 1.0 / mass

    def __call__(self, u):
        return self.norm * self._shape(u)

    def scaled(self, N, u):
        """``J_N(u) = N J(N u)``."""
        return N * self(N * np.asarray(u, dtype=float))

    def __eq__(self, other):
        return isinstance(other, Mollifier) and other.kind == self.kind

    def __hash__(self):
        return hash(("Mollifier", self.kind))

    def __repr__(self):
        return f"Mollifier({self.kind!r})"

    def autocorrelation(self, s):
        """``int J(v) J(v - s) dv`` by adaptive quadrature."""
        return _autocorrelation(self.kind, float(abs(s)))

    def overlaps(self, N, epsilon, kmax):
        """``O_k = eps int J_N(u) J_N(u - eps k) du`` for ``k = 0..kmax``."""
        return np.array([epsilon * N * self.autocorrelation(N * epsilon * k)
                         for k in range(kmax + 1)])

    def riemann_mass(self, N, epsilon):
        """``S = sum_k O_k`` over all integers ``k``."""
        kmax = int(math.ceil(2.0 / (N * epsilon)))
        O = self.overlaps(N, epsilon, kmax)
        return O[0] + 2.0 * O[1:].sum()


@lru_cache(maxsize=None)
def _instance(kind):
    return Mollifier(kind)


@lru_cache(maxsize=4096)
def _autocorrelation(kind, s):
    if s >= 2.0:
        return 0.0
    J = _instance(kind)
    f = lambda v: float(J(np.array(v)) * J(np.array(v - s)))
    val, _ = quad(f, s - 1.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=400)
    return val


MOLLIFIERS = ("bump", "polybump")
