"""Density fluctuation field, mollified squares and the pathwise decomposition.

Every functional used here is at most quadratic in the spins, so it is
stored as a :class:`QuadraticForm`

    F(xi) = const + sum_x lin[x] xi(x) + sum_{x, k>=1} quad[x, k] xi(x) xi(x+k)

and its time integral along a trajectory is read off exactly from the
running integrals kept by the event engine (the integrand is constant
between jumps).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exclusion import SpinState, Trajectory, apply_generator_local
from .functions import QuadratureError, refine_simpson

__all__ = [
    "QuadraticForm",
    "spins_of",
    "eval_field",
    "mollified_field",
    "nonlinear_integral",
    "discrete_pair_sum",
    "drift_term",
    "remainder_terms",
    "field_form",
    "pair_form",
    "drift_form",
    "heat_form",
    "v0_form",
    "taylor_form",
    "quadratic_variation_form",
    "nonlinear_form",
    "remainder_forms",
    "mollifier_band",
    "martingale_path",
    "predictable_variance_path",
    "taylor_residual",
    "taylor_bound",
    "mollified_functional_path",
    "DecompositionLedger",
    "decompose",
]

QUAD_RTOL = 1e-8


def spins_of(state):
    if isinstance(state, SpinState):
        return state.spins
    xi = np.asarray(state, dtype=float)
    if not np.all(np.abs(xi) == 1):
        raise ValueError("expected centered spins in {-1, +1}")
    return xi


@dataclass
class QuadraticForm:
    """``const + lin . xi + sum_k quad[:, k] . (xi * roll(xi, -k))``; column 0 unused."""

    const: float
    linear: np.ndarray
    quad: np.ndarray

    @classmethod
    def zeros(cls, sites, band=1):
        return cls(0.0, np.zeros(sites), np.zeros((sites, band + 1)))

    @property
    def band(self):
        nz = np.flatnonzero(np.any(self.quad[:, 1:] != 0, axis=0))
        return int(nz[-1] + 1) if nz.size else 0

    def _padded(self, band):
        if self.quad.shape[1] - 1 >= band:
            return self.quad
        q = np.zeros((self.quad.shape[0], band + 1))
        q[:, :self.quad.shape[1]] = self.quad
        return q

    def __add__(self, other):
        b = max(self.quad.shape[1], other.quad.shape[1]) - 1
        return QuadraticForm(self.const + other.const, self.linear + other.linear,
                             self._padded(b) + other._padded(b))

    def __mul__(self, a):
        return QuadraticForm(a * self.const, a * self.linear, a * self.quad)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def value(self, state):
        """Evaluate on a single configuration."""
        xi = spins_of(state)
        out = self.const + self.linear @ xi
        for k in range(1, self.band + 1):
            out += self.quad[:, k] @ (xi * np.roll(xi, -k))
        return float(out)

    def at_samples(self, traj):
        """Instantaneous values on every snapshot of ``traj``."""
        xi = 2.0 * traj.snapshots - 1.0
        out = self.const + xi @ self.linear
        for k in range(1, self.band + 1):
            out = out + (xi * np.roll(xi, -k, axis=1)) @ self.quad[:, k]
        return out

    def integrate(self, traj):
        """``int_0^t F(xi_s) ds`` at every sample time of ``traj``."""
        b = self.band
        if b > traj.band:
            raise ValueError(f"trajectory band {traj.band} too small for form band {b}")
        out = self.const * traj.sample_times + traj.occupation_integrals @ self.linear
        if b:
            out = out + np.einsum("txk,xk->t", traj.pair_integrals[:, :, 1:b + 1],
                                  self.quad[:, 1:b + 1])
        return out


def _check_window(G, params):
    tail = G.tail_mass(params.window / 2)
    if tail > 1e-8:
        warnings.warn(f"{G!r} has weighted mass {tail:.2e} outside the window; "
                      "ring wrap-around is not negligible", RuntimeWarning, stacklevel=3)


# -- instantaneous operations ---------------------------------------------

def eval_field(state, G, params):
    """``Y(G) = sqrt(eps) sum_x G(eps x) xi(x)``."""
    _check_window(G, params)
    return float(math.sqrt(params.epsilon) * G(params.positions()) @ spins_of(state))


def _ring_displacement(u, params):
    """``u - eps x`` wrapped into ``[-W/2, W/2)``, shape ``u.shape + (L,)``."""
    W = params.sites * params.epsilon
    d = np.asarray(u, dtype=float)[..., None] - params.positions()
    return (d + W / 2) % W - W / 2


def mollified_field(state, J, N, u, params):
    """``(Y * J_N)(u) = sqrt(eps) sum_x J_N(u - eps x) xi(x)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    xi = spins_of(state)
    d = _ring_displacement(u, params)
    return math.sqrt(params.epsilon) * (J.scaled(N, d) @ xi)


def _field_on_grid(xi, params, J, N, m):
    """Mollified field on the grid ``eps q + r eps/m``; returns ``(L, m)``."""
    eps = params.epsilon
    h = eps / m
    D = int(math.ceil(1.0 / (N * eps))) + 1
    d = np.arange(-D, D + 1)
    W = J.scaled(N, eps * d[None, :] + h * np.arange(m)[:, None])  # (m, 2D+1)
    rolled = np.stack([np.roll(xi, int(dj)) for dj in d])         # (2D+1, L)
    return math.sqrt(eps) * (W @ rolled).T


def nonlinear_integral(state, G, J, N, params, quad_step=None, rtol=QUAD_RTOL):
    """``int G'(u) (Y * J_N)^2(u) du`` by periodic composite Simpson, refined.

    The grid is aligned with the lattice (step ``eps/m``) and ``m`` is
    doubled until successive values agree to ``rtol``.
    """
    xi = spins_of(state)
    eps = params.epsilon
    h0 = min(eps, 1.0 / (4 * N)) if quad_step is None else quad_step
    if h0 > min(eps, 1.0 / (4 * N)) + 1e-15:
        raise ValueError("quad_step must be <= min(eps, 1/(4N))")
    m = 2
    while eps / m > h0 * (1 + 1e-12):
        m *= 2
    pos = params.positions()
    prev = None
    for _ in range(10):
        u = pos[:, None] + (eps / m) * np.arange(m)[None, :]
        f = G.derivative(u, 1) * _field_on_grid(xi, params, J, N, m) ** 2
        flat = f.reshape(-1)
        w = np.where(np.arange(flat.size) % 2, 4.0, 2.0)
        h = eps / m
        cur = float(flat @ w) * h / 3.0
        scale = float(np.abs(flat) @ w) * h / 3.0
        if prev is not None and abs(cur - prev) <= rtol * max(abs(cur), scale):
            return cur
        prev = cur
        m *= 2
    raise QuadratureError("nonlinear_integral: Simpson refinement did not converge")


def discrete_pair_sum(state, G, params):
    """``sum_x G'(eps x) xi(x) xi(x+1)``."""
    xi = spins_of(state)
    return float(G.derivative(params.positions(), 1) @ (xi * np.roll(xi, -1)))


def drift_term(state, G, params):
    """``eps^{-3/2} sum_x G(eps x) (L_eps xi)(x)``, evaluated site by site."""
    xi = spins_of(state)
    Gx = G(params.positions())
    gen = np.array([apply_generator_local(xi, x, params) for x in range(xi.shape[0])])
    return float(params.epsilon**-1.5 * Gx @ gen)


def remainder_terms(state, G, J, N, params):
    """``(V0, V1, V2, V3, V4)`` on a single configuration."""
    return np.array([f.value(state) for f in remainder_forms(params, G, J, N)])


# -- quadratic forms ------------------------------------------------------

def _form(params, lin=None, pair1=None, const=0.0):
    L = params.sites
    q = np.zeros((L, 2))
    if pair1 is not None:
        q[:, 1] = pair1
    return QuadraticForm(const, np.zeros(L) if lin is None else np.asarray(lin, float), q)


@lru_cache(maxsize=512)
def field_form(params, G, order=0):
    return _form(params, lin=math.sqrt(params.epsilon) * G.derivative(params.positions(), order))


def heat_form(params, G):
    return field_form(params, G, 2)


@lru_cache(maxsize=512)
def pair_form(params, G):
    return _form(params, pair1=G.derivative(params.positions(), 1))


@lru_cache(maxsize=512)
def drift_form(params, G):
    """Summation-by-parts form of :func:`drift_term`."""
    g = G(params.positions())
    nxt, prv = np.roll(g, -1), np.roll(g, 1)
    c = params.epsilon**-1.5
    return _form(params, lin=c * (nxt - 2 * g + prv), pair1=c * params.drift * (g - nxt))


@lru_cache(maxsize=512)
def v0_form(params, G):
    return _form(params, pair1=0.5 * params.epsilon * G.derivative(params.positions(), 2))


@lru_cache(maxsize=512)
def taylor_form(params, G):
    """Integrand of the Taylor residual: drift - heat + gamma (pair - V0)."""
    gam = params.gamma
    return drift_form(params, G) - heat_form(params, G) + gam * (pair_form(params, G) - v0_form(params, G))


@lru_cache(maxsize=512)
def quadratic_variation_form(params, G):
    """Rate of the predictable quadratic variation of ``M^{G,eps}`` (macroscopic time).

    A jump across bond ``(x, x+1)`` changes ``Y(G)`` by
    ``+-2 sqrt(eps) (G_{x+1} - G_x)``; summing rate times square gives
    ``2/eps sum_x (grad G)^2 (1 - xi_x xi_{x+1} + a (xi_x - xi_{x+1}))``.
    """
    g = G(params.positions())
    grad2 = (np.roll(g, -1) - g) ** 2
    c = 2.0 / params.epsilon
    a = params.drift
    return _form(params, lin=c * a * (grad2 - np.roll(grad2, 1)), pair1=-c * grad2,
                 const=c * grad2.sum())


def mollifier_band(params, N):
    """Largest lattice distance at which two rescaled kernels overlap."""
    band = int(math.ceil(2.0 / (N * params.epsilon)))
    if 2 * band >= params.sites:
        raise ValueError(f"window too small: J_{N} overlaps across the ring "
                         f"(band {band}, {params.sites} sites)")
    return band


def _kernel_table(params, G, J, N, ks, centered):
    """``eps int w(u) J_N(u - eps x) J_N(u - eps x - eps k) du`` for each site and ``k``.

    ``w = G'`` or, when ``centered``, ``G'(u) - G'(eps x)``. Returns an
    ``(L, len(ks))`` array.
    """
    eps = params.epsilon
    pos = params.positions()
    g_at_site = G.derivative(pos, 1)
    h0 = min(eps, 1.0 / (4 * N))
    out = np.zeros((pos.size, len(ks)))
    lo, hi = -1.0 / N, 1.0 / N
    for j, k in enumerate(ks):
        shift = eps * k
        a, b = max(lo, shift + lo), min(hi, shift + hi)
        if a >= b:
            continue

        def sampler(s, shift=shift):
            w = G.derivative(pos[:, None] + s[None, :], 1)
            if centered:
                w = w - g_at_site[:, None]
            return w * (J.scaled(N, s) * J.scaled(N, s - shift))[None, :]

        out[:, j] = eps * refine_simpson(sampler, a, b, h0, rtol=QUAD_RTOL, atol=1e-300)
    return out


@lru_cache(maxsize=256)
def nonlinear_form(params, G, J, N):
    """``int G'(u) (Y * J_N)^2(u) du`` as a quadratic form in the spins."""
    band = mollifier_band(params, N)
    K = _kernel_table(params, G, J, N, range(band + 1), centered=False)
    quad = np.zeros((params.sites, band + 1))
    quad[:, 1:] = 2.0 * K[:, 1:]
    return QuadraticForm(float(K[:, 0].sum()), np.zeros(params.sites), quad)


@lru_cache(maxsize=256)
def remainder_forms(params, G, J, N):
    """Forms of ``V0..V4``; ``V1..V4`` sum to nonlinear minus pair sum.

    ``V1`` uses its own kernel quadrature and the kernel overlaps come
    from adaptive quadrature of ``J * J``, so the identity with
    :func:`nonlinear_form` is a genuine cross-check of both.
    """
    L = params.sites
    band = mollifier_band(params, N)
    g1 = G.derivative(params.positions(), 1)
    O = J.overlaps(N, params.epsilon, band)
    S = O[0] + 2.0 * O[1:].sum()

    ks = list(range(-band, band + 1))
    K1 = _kernel_table(params, G, J, N, ks, centered=True)
    v1 = np.zeros((L, band + 1))
    for k in range(1, band + 1):
        # pair (x, x+k): K1(x, x+k) + K1(x+k, x)
        v1[:, k] = K1[:, band + k] + np.roll(K1[:, band - k], -k)
    V1 = QuadraticForm(float(K1[:, band].sum()), np.zeros(L), v1)

    v2 = np.zeros((L, 2))
    v2[:, 1] = -O[0] * g1
    V2 = QuadraticForm(float(O[0] * g1.sum()), np.zeros(L), v2)

    v3 = np.zeros((L, band + 1))
    for k in range(1, band + 1):
        v3[:, k] = O[k] * (g1 + np.roll(g1, -k))
    v3[:, 1] -= g1 * (S - O[0])
    V3 = QuadraticForm(0.0, np.zeros(L), v3)

    V4 = _form(params, pair1=(S - 1.0) * g1)
    return (v0_form(params, G), V1, V2, V3, V4)


# -- trajectory functionals -----------------------------------------------

def martingale_path(traj, G):
    """``M_t = Y_t(G) - Y_0(G) - int_0^t eps^{-2} L Y_s(G) ds`` at the sample times."""
    p = traj.params
    Y = field_form(p, G).at_samples(traj)
    return Y - Y[0] - drift_form(p, G).integrate(traj)


def predictable_variance_path(traj, G):
    """Predictable quadratic variation ``<M^{G,eps}>_t`` at the sample times."""
    return quadratic_variation_form(traj.params, G).integrate(traj)


def taylor_residual(traj, G):
    """Closing term of the decomposition: drift integral minus its expansion."""
    return taylor_form(traj.params, G).integrate(traj)


def taylor_bound(params, G, t):
    """``sqrt(eps)/6 (2 + sqrt(eps)|gamma|)(pi + 2 eps) sup|(1+u^2)G'''| t``."""
    eps = params.epsilon
    return (math.sqrt(eps) / 6.0 * (2 + params.asymmetry) * (math.pi + 2 * eps)
            * G.sup_norms[3] * np.asarray(t, dtype=float))


def mollified_functional_path(traj, G, J, N):
    """``Y_t(G) - Y_0(G) - int Y_s(G'') ds + gamma int int G' (Y_s * J_N)^2 du ds``."""
    p = traj.params
    Y = field_form(p, G).at_samples(traj)
    return (Y - Y[0] - heat_form(p, G).integrate(traj)
            + p.gamma * nonlinear_form(p, G, J, N).integrate(traj))


@dataclass
class DecompositionLedger:
    """All terms of the decomposition of ``Y_t(G) - Y_0(G)`` along one trajectory."""

    times: np.ndarray
    gamma: float
    field: np.ndarray
    drift: np.ndarray
    heat: np.ndarray
    pair: np.ndarray
    martingale: np.ndarray
    taylor: np.ndarray
    remainders: dict = field(default_factory=dict)   # N -> (5, n_t)
    nonlinear: dict = field(default_factory=dict)    # N -> (n_t,)
    mollified: dict = field(default_factory=dict)    # N -> (n_t,)

    @property
    def increment(self):
        return self.field - self.field[0]

    def approxi_error(self):
        """Relative mismatch of ``M + R + gamma R0 = dY - int Y(G'') + gamma int pair``."""
        g = self.gamma
        r0 = next(iter(self.remainders.values()))[0] if self.remainders else None
        if r0 is None:
            raise ValueError("ledger has no remainder terms")
        lhs = self.martingale + self.taylor + g * r0
        rhs = self.increment - self.heat + g * self.pair
        scale = (np.abs(self.field) + abs(self.field[0]) + np.abs(self.heat)
                 + np.abs(g * self.pair) + np.abs(self.drift) + 1e-300)
        return np.abs(lhs - rhs) / scale

    def rewrite_error(self, N):
        """Absolute mismatch of ``int NL - int pair = R1 + R2 + R3 + R4`` and its scale."""
        lhs = self.nonlinear[N] - self.pair
        rhs = self.remainders[N][1:].sum(axis=0)
        scale = np.abs(self.nonlinear[N]) + np.abs(self.pair) + np.abs(self.remainders[N][1:]).sum(axis=0)
        return np.abs(lhs - rhs), scale

    def mollified_error(self, N):
        """Mismatch of ``M_N = M + R + gamma sum_i R^i``."""
        g = self.gamma
        rhs = self.martingale + self.taylor + g * self.remainders[N].sum(axis=0)
        return np.abs(self.mollified[N] - rhs)


def decompose(traj, G, J=None, N_list=()):
    p = traj.params
    Y = field_form(p, G).at_samples(traj)
    drift = drift_form(p, G).integrate(traj)
    led = DecompositionLedger(
        times=traj.sample_times, gamma=p.gamma, field=Y, drift=drift,
        heat=heat_form(p, G).integrate(traj), pair=pair_form(p, G).integrate(traj),
        martingale=Y - Y[0] - drift, taylor=taylor_form(p, G).integrate(traj))
    if not N_list:
        led.remainders[None] = np.vstack([v0_form(p, G).integrate(traj)] + [np.zeros_like(Y)] * 4)
    for N in N_list:
        led.remainders[N] = np.vstack([f.integrate(traj) for f in remainder_forms(p, G, J, N)])
        led.nonlinear[N] = nonlinear_form(p, G, J, N).integrate(traj)
        led.mollified[N] = Y - Y[0] - led.heat + p.gamma * led.nonlinear[N]
    return led
