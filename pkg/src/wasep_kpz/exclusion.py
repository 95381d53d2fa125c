"""Weakly asymmetric simple exclusion on a periodic ring.

Sites are stored by ring index ``i = 0..L-1``. Index ``i`` carries the
signed lattice coordinate ``x = i`` for ``i < L/2`` and ``x = i - L``
otherwise, so the ring covers the macroscopic window ``[-W/2, W/2)``
with site 0 at the origin. Time inside the engine is microscopic;
macroscopic time is ``t = eps**2 * tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import _engine

__all__ = [
    "SimParams",
    "SpinState",
    "JumpEvent",
    "EventLog",
    "Integrals",
    "Trajectory",
    "replica_rng",
    "sample_initial",
    "enabled_jumps",
    "total_rate",
    "advance",
    "simulate",
    "replay_states",
    "apply_generator_local",
    "exact_generator_matrix",
    "stationary_sector_check",
]

MAX_ORACLE_SITES = 12


@dataclass(frozen=True)
class SimParams:
    """Lattice scale, asymmetry and macroscopic window/horizon."""

    epsilon: float
    gamma: float
    window: float
    horizon: float
    sites: int | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.window <= 0 or self.horizon <= 0:
            raise ValueError("window and horizon must be positive")
        if self.sites is None:
            object.__setattr__(self, "sites", int(round(self.window / self.epsilon)))
        if self.sites < 4:
            raise ValueError(f"need at least 4 sites, got {self.sites}")
        if abs(self.sites * self.epsilon - self.window) > self.epsilon:
            raise ValueError(
                f"sites*epsilon = {self.sites * self.epsilon} is not within one "
                f"lattice spacing of window = {self.window}"
            )
        if self.asymmetry > 1.0 + 1e-12:
            raise ValueError(
                f"sqrt(epsilon)*|gamma| = {self.asymmetry:.6g} exceeds 1; "
                "jump rates would be negative"
            )

    @classmethod
    def from_sites(cls, sites, epsilon, gamma, horizon=1.0):
        return cls(epsilon=epsilon, gamma=gamma, window=sites * epsilon,
                   horizon=horizon, sites=sites)

    @property
    def asymmetry(self):
        """``sqrt(eps) * |gamma|``."""
        return math.sqrt(self.epsilon) * abs(self.gamma)

    @property
    def drift(self):
        """Signed ``sqrt(eps) * gamma``; right jumps have rate ``1 + drift``."""
        return math.sqrt(self.epsilon) * self.gamma

    @property
    def micro_horizon(self):
        return self.horizon / self.epsilon**2

    def coordinates(self):
        x = np.arange(self.sites)
        x[x >= self.sites / 2] -= self.sites
        return x

    def positions(self):
        return self.epsilon * self.coordinates()


@dataclass
class SpinState:
    """Occupation numbers on the ring plus the microscopic clock."""

    occupation: np.ndarray
    micro_time: float = 0.0

    def __post_init__(self):
        occ = np.asarray(self.occupation)
        if occ.ndim != 1 or not np.isin(occ, (0, 1)).all():
            raise ValueError("occupation must be a 1-d array of zeros and ones")
        self.occupation = occ.astype(np.int8, copy=True)

    @property
    def spins(self):
        """Centered spins ``xi = 2 eta - 1``."""
        return 2.0 * self.occupation - 1.0

    @property
    def particle_count(self):
        return int(self.occupation.sum())

    @property
    def sites(self):
        return self.occupation.shape[0]

    def copy(self):
        return SpinState(self.occupation.copy(), self.micro_time)


@dataclass(frozen=True)
class JumpEvent:
    source: int
    direction: str  # "right" or "left"
    rate: float
    micro_time: float = 0.0


@dataclass
class EventLog:
    """Columnar record of jumps: source site, direction (0 right, 1 left), time."""

    source: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    direction: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    micro_time: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return self.source.shape[0]

    def extend(self, other):
        self.source = np.concatenate([self.source, other.source])
        self.direction = np.concatenate([self.direction, other.direction])
        self.micro_time = np.concatenate([self.micro_time, other.micro_time])

    def events(self, params):
        """Materialize as :class:`JumpEvent` objects (slow, for inspection)."""
        a = params.drift
        out = []
        for s, d, t in zip(self.source, self.direction, self.micro_time):
            right = d == _engine.RIGHT
            out.append(JumpEvent(int(s), "right" if right else "left",
                                 1 + a if right else 1 - a, float(t)))
        return out


class Integrals:
    """Running time integrals of ``xi(x)`` and ``xi(x) xi(x+k)``, ``k <= band``.

    Values are kept in microscopic time; :meth:`snapshot` flushes every
    entry and returns them in macroscopic units.
    """

    def __init__(self, sites, band, start=0.0):
        self.band = int(band)
        self.occ = np.zeros(sites)
        self.occ_t = np.full(sites, float(start))
        self.pair = np.zeros((sites, self.band + 1))
        self.pair_t = np.full((sites, self.band + 1), float(start))
        self.start = float(start)

    def snapshot(self, state, epsilon):
        _engine.flush_all(state.occupation, state.micro_time, self.occ, self.occ_t,
                          self.pair, self.pair_t, self.band)
        scale = epsilon**2
        pair = self.pair * scale
        pair[:, 0] = (state.micro_time - self.start) * scale
        return self.occ * scale, pair


def replica_rng(master_seed, replica, *stream):
    """Independent generator for replica ``replica`` under ``master_seed``.

    Extra ``stream`` integers select disjoint families (one per epsilon, say).
    """
    key = tuple(int(s) for s in stream) + (int(replica),)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_initial(params, seed):
    """Draw from the Bernoulli(1/2) product measure on the ring."""
    rng = _as_rng(seed)
    return SpinState(rng.integers(0, 2, size=params.sites, dtype=np.int8))


def enabled_jumps(state, params):
    eta = state.occupation
    L = eta.shape[0]
    nxt = np.roll(eta, -1)
    prv = np.roll(eta, 1)
    a = params.drift
    out = []
    for x in range(L):
        if not eta[x]:
            continue
        if not nxt[x]:
            out.append(JumpEvent(x, "right", 1 + a, state.micro_time))
        if not prv[x]:
            out.append(JumpEvent(x, "left", 1 - a, state.micro_time))
    return out


def total_rate(state, params):
    eta = state.occupation
    nxt = np.roll(eta, -1)
    n_right = int(np.sum((eta == 1) & (nxt == 0)))
    n_left = int(np.sum((eta == 0) & (nxt == 1)))
    return (1 + params.drift) * n_right + (1 - params.drift) * n_left


class _Runner:
    """Holds the enabled-jump index sets between successive advances."""

    def __init__(self, state):
        L = state.sites
        self.rset = np.empty(L, dtype=np.int64)
        self.rpos = np.empty(L, dtype=np.int64)
        self.lset = np.empty(L, dtype=np.int64)
        self.lpos = np.empty(L, dtype=np.int64)
        self.nr, self.nl = _engine.build_sets(
            state.occupation, self.rset, self.rpos, self.lset, self.lpos)


_DUMMY_2D = np.zeros((1, 1))
_DUMMY_1D = np.zeros(1)


def advance(state, params, rng, micro_duration, integrals=None, record=True,
            _runner=None):
    """Exact Gillespie evolution of ``state`` (in place) for ``micro_duration``.

    Returns the :class:`EventLog` of the segment (empty when
    ``record=False``). When ``integrals`` is given its running time
    integrals are kept current.
    """
    if micro_duration < 0:
        raise ValueError("micro_duration must be nonnegative")
    rng = _as_rng(rng)
    runner = _runner or _Runner(state)
    t_end = state.micro_time + micro_duration
    a = params.drift
    track = integrals is not None
    if track:
        occ, occ_t, pair, pair_t, band = (integrals.occ, integrals.occ_t,
                                          integrals.pair, integrals.pair_t,
                                          integrals.band)
    else:
        occ, occ_t, pair, pair_t, band = _DUMMY_1D, _DUMMY_1D, _DUMMY_2D, _DUMMY_2D, 0
    chunks = []
    while state.micro_time < t_end:
        rate = (1 + a) * runner.nr + (1 - a) * runner.nl
        expected = rate * (t_end - state.micro_time)
        n = int(expected + 4 * math.sqrt(expected) + 64)
        uniforms = rng.random(2 * n)
        cap = n if record else 1
        src = np.empty(cap, dtype=np.int64)
        dirs = np.empty(cap, dtype=np.int8)
        times = np.empty(cap)
        clock, runner.nr, runner.nl, n_ev, _, _ = _engine.run(
            state.occupation, state.micro_time, t_end, a,
            runner.rset, runner.rpos, runner.lset, runner.lpos,
            runner.nr, runner.nl, uniforms, track, occ, occ_t, pair, pair_t,
            band, record, src, dirs, times, 0)
        state.micro_time = clock
        if record:
            chunks.append(EventLog(src[:n_ev], dirs[:n_ev], times[:n_ev]))
    log = EventLog()
    for c in chunks:
        log.extend(c)
    return log


@dataclass
class Trajectory:
    """Snapshots and running integrals of one replica at ``sample_times``.

    ``occupation_integrals[j, x]`` is the macroscopic time integral of
    ``xi(x)`` over ``[0, sample_times[j]]`` and ``pair_integrals[j, x, k]``
    that of ``xi(x) xi(x+k)`` (ring neighbour, ``k = 0`` holds ``t``).
    """

    params: SimParams
    initial: SpinState
    sample_times: np.ndarray
    snapshots: np.ndarray
    occupation_integrals: np.ndarray
    pair_integrals: np.ndarray
    events: EventLog | None = None

    @property
    def band(self):
        return self.pair_integrals.shape[2] - 1

    def spins(self, j):
        return 2.0 * self.snapshots[j] - 1.0


def simulate(params, sample_times=None, rng=0, band=1, record_events=False,
             initial=None):
    """Run one replica from ``nu_{1/2}`` (or ``initial``) over ``[0, T]``."""
    rng = _as_rng(rng)
    if sample_times is None:
        sample_times = np.linspace(0.0, params.horizon, 33)
    sample_times = np.asarray(sample_times, dtype=float)
    if sample_times[0] != 0.0 or np.any(np.diff(sample_times) <= 0):
        raise ValueError("sample_times must start at 0 and strictly increase")
    state = sample_initial(params, rng) if initial is None else initial.copy()
    state.micro_time = 0.0
    init = state.copy()
    L = params.sites
    band = int(min(band, L - 1))
    integrals = Integrals(L, band)
    runner = _Runner(state)
    n_t = sample_times.shape[0]
    snaps = np.empty((n_t, L), dtype=np.int8)
    occ = np.empty((n_t, L))
    pair = np.empty((n_t, L, band + 1))
    log = EventLog() if record_events else None
    for j, t in enumerate(sample_times):
        target = t / params.epsilon**2
        if target > state.micro_time:
            seg = advance(state, params, rng, target - state.micro_time,
                          integrals=integrals, record=record_events, _runner=runner)
            if record_events:
                log.extend(seg)
        state.micro_time = target
        snaps[j] = state.occupation
        occ[j], pair[j] = integrals.snapshot(state, params.epsilon)
    return Trajectory(params, init, sample_times, snaps, occ, pair, log)


def replay_states(initial, log, upto=None):
    """States after each event of ``log``, by replaying jumps from ``initial``.

    Returns an ``(n_events + 1, L)`` int8 array; row 0 is ``initial``.
    """
    n = len(log) if upto is None else min(upto, len(log))
    L = initial.sites
    out = np.empty((n + 1, L), dtype=np.int8)
    eta = initial.occupation.copy()
    out[0] = eta
    for e in range(n):
        s = int(log.source[e])
        t = (s + 1) % L if log.direction[e] == _engine.RIGHT else (s - 1) % L
        if eta[s] != 1 or eta[t] != 0:
            raise RuntimeError(f"event {e} is not admissible in the replayed state")
        eta[s], eta[t] = 0, 1
        out[e + 1] = eta
    return out


def apply_generator_local(state, x, params):
    """Generator applied to ``xi(x)``: discrete Laplacian plus the asymmetric part."""
    xi = state.spins if isinstance(state, SpinState) else np.asarray(state, dtype=float)
    L = xi.shape[0]
    left, mid, right = xi[(x - 1) % L], xi[x % L], xi[(x + 1) % L]
    return (left - 2 * mid + right) + params.drift * (mid * right - left * mid)


def _decode(code, L):
    return np.array([(code >> i) & 1 for i in range(L)], dtype=np.int8)


def exact_generator_matrix(params, sites=None):
    """Dense rate matrix on all ``2**L`` configurations (state code ``sum eta_i 2**i``)."""
    L = params.sites if sites is None else sites
    if L > MAX_ORACLE_SITES:
        raise ValueError(f"dense oracle limited to L <= {MAX_ORACLE_SITES}, got {L}")
    a = params.drift
    n = 2**L
    Q = np.zeros((n, n))
    for code in range(n):
        for x in range(L):
            if not (code >> x) & 1:
                continue
            for y, rate in (((x + 1) % L, 1 + a), ((x - 1) % L, 1 - a)):
                if (code >> y) & 1:
                    continue
                target = code & ~(1 << x) | (1 << y)
                Q[code, target] += rate
    Q[np.diag_indices(n)] = -Q.sum(axis=1)
    return Q


def transition_matrix(params, micro_duration, sites=None):
    return expm(micro_duration * exact_generator_matrix(params, sites))


def stationary_sector_check(Q):
    """Max |pi Q| over the uniform measures on each fixed-particle-number sector."""
    n = Q.shape[0]
    counts = np.array([bin(c).count("1") for c in range(n)])
    worst = 0.0
    for k in np.unique(counts):
        pi = (counts == k).astype(float)
        pi /= pi.sum()
        worst = max(worst, float(np.abs(pi @ Q).max()))
    return worst


def empirical_transitions(params, micro_duration, runs, rng, sites=None):
    """Empirical transition frequencies of the event engine from every state."""
    L = params.sites if sites is None else sites
    rng = _as_rng(rng)
    n = 2**L
    freq = np.zeros((n, n))
    # generous bound on uniforms per run: events are Poisson with mean <= 2L*duration
    lam = 2 * L * micro_duration
    per_run = 2 * int(lam + 8 * math.sqrt(lam) + 16)
    for code in range(n):
        counts, done = _engine.transition_counts(
            _decode(code, L), params.drift, micro_duration,
            rng.random(per_run * runs), runs)
        if done < runs:
            # retrying would bias towards short paths
            raise RuntimeError("uniform budget per run exhausted; raise per_run")
        freq[code] = counts / runs
    return freq
