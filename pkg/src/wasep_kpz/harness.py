"""Experiment configuration, seeded replica execution and the scaling scans.

Every scan follows the same pattern: build the quadratic forms it needs
once in the parent process, run ``R`` seeded replicas (optionally in a
process pool), collect per-replica arrays in replica order, and reduce
them to an :class:`EstimateTable` plus a summary of pass/fail checks.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .basis import DirichletBasis, SobolevWeights
from .exclusion import (SimParams, empirical_transitions, replica_rng, simulate,
                        transition_matrix)
from .field import (drift_form, field_form, heat_form, mollifier_band,
                    nonlinear_form, pair_form, remainder_forms, taylor_form, v0_form)
from .functions import Mollifier, QuadratureError, TestFunction
from .gaussian import limit_covariance

__all__ = [
    "ExperimentConfig",
    "EstimateTable",
    "FormBank",
    "ReplicaData",
    "ScanResult",
    "TruncationError",
    "collect",
    "run_replicas",
    "cauchy_scan",
    "remainder_scan",
    "martingale_test",
    "sobolev_report",
    "oracle_check",
    "write_manifest",
    "selftest",
]

Z95 = 1.959963984540054
MIN_SCAN_REPLICAS = 20
MIN_DISTRIBUTIONAL_REPLICAS = 200


class TruncationError(ValueError):
    """The outermost shell of a truncated norm carries too much weight."""


# -- configuration --------------------------------------------------------

_LIST_KEYS = {"epsilon_list": float, "hermite_indices": int, "n_list": int, "mollifier": str}
_SCALAR_KEYS = {"gamma": float, "window": float, "horizon": float, "replicas": int,
                "master_seed": int, "out_dir": str}
KEYS = ("epsilon_list", "gamma", "window", "horizon", "replicas", "master_seed",
        "hermite_indices", "mollifier", "n_list", "sample_times", "out_dir")


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale experiment settings.

    ``sample_times`` is either a count of equispaced times on ``[0, T]``
    or an explicit increasing tuple starting at 0.
    """

    epsilon_list: tuple = (0.08, 0.04)
    gamma: float = 1.0
    window: float = 20.0
    horizon: float = 0.25
    replicas: int = 400
    master_seed: int = 20240601
    hermite_indices: tuple = (1, 2, 3)
    mollifier: tuple = ("bump",)
    n_list: tuple = (2, 4, 8, 16)
    sample_times: int | tuple = 33
    out_dir: str = "results"

    def __post_init__(self):
        for key in ("epsilon_list", "hermite_indices", "mollifier", "n_list"):
            v = getattr(self, key)
            if isinstance(v, (str, int, float)):
                v = (v,)
            object.__setattr__(self, key, tuple(_LIST_KEYS[key](x) for x in v))
        if not isinstance(self.sample_times, int):
            object.__setattr__(self, "sample_times", tuple(float(t) for t in self.sample_times))
        self.validate()

    def validate(self):
        if not self.epsilon_list:
            raise ValueError("epsilon_list is empty")
        for eps in self.epsilon_list:
            if eps <= 0:
                raise ValueError(f"epsilon_list: {eps} is not positive")
            if math.sqrt(eps) * abs(self.gamma) > 1:
                raise ValueError(f"sqrt(epsilon)*|gamma| = {math.sqrt(eps) * abs(self.gamma):.4g} "
                                 f"exceeds 1 for epsilon={eps}, gamma={self.gamma}")
            if round(self.window / eps) < 4:
                raise ValueError(f"window/epsilon = {self.window / eps:.3g} gives fewer than 4 sites")
        if self.horizon <= 0 or self.window <= 0:
            raise ValueError("horizon and window must be positive")
        if self.replicas < 2:
            raise ValueError(f"replicas must be >= 2 for standard errors, got {self.replicas}")
        if not self.hermite_indices or min(self.hermite_indices) < 1:
            raise ValueError("hermite_indices must be a nonempty list of integers >= 1")
        if not self.n_list or min(self.n_list) < 1:
            raise ValueError("n_list must be a nonempty list of integers >= 1")
        if list(self.n_list) != sorted(set(self.n_list)):
            raise ValueError("n_list must be strictly increasing")
        for kind in self.mollifier:
            if kind not in ("bump", "polybump"):
                raise ValueError(f"mollifier must be bump or polybump, got {kind!r}")
        if isinstance(self.sample_times, int):
            if self.sample_times < 2:
                raise ValueError("sample_times needs at least 2 points")
        else:
            t = np.asarray(self.sample_times)
            if t.size < 2 or t[0] != 0 or np.any(np.diff(t) <= 0) or t[-1] > self.horizon:
                raise ValueError("sample_times must start at 0, increase, and end by the horizon")

    # parsing / emission
    @classmethod
    def from_text(cls, text):
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else (":" if ":" in line else None)
            if sep is None:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split(sep, 1))
            if key not in KEYS:
                raise ValueError(f"line {lineno}: unknown key {key!r}; allowed: {', '.join(KEYS)}")
            if key in kw:
                raise ValueError(f"line {lineno}: duplicate key {key!r}")
            try:
                kw[key] = _parse_value(key, value)
            except ValueError as err:
                raise ValueError(f"line {lineno}: bad value for {key}: {err}") from None
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self):
        lines = []
        for key in KEYS:
            v = getattr(self, key)
            if isinstance(v, tuple):
                v = ", ".join(_fmt(x) for x in v)
            else:
                v = _fmt(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        """SHA-256 of the canonical text, excluding ``out_dir``."""
        body = "".join(l + "\n" for l in self.to_text().splitlines() if not l.startswith("out_dir"))
        return hashlib.sha256(body.encode()).hexdigest()

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    # derived objects
    def params(self, epsilon):
        return SimParams(epsilon, self.gamma, self.window, self.horizon)

    def times(self):
        if isinstance(self.sample_times, int):
            return np.linspace(0.0, self.horizon, self.sample_times)
        return np.asarray(self.sample_times, dtype=float)

    def test_functions(self):
        return [TestFunction.hermite(n) for n in self.hermite_indices]

    def mollifiers(self):
        return [Mollifier(k) for k in self.mollifier]


def _parse_value(key, value):
    if key == "sample_times":
        parts = [p for p in value.replace(",", " ").split()]
        return int(parts[0]) if len(parts) == 1 else tuple(float(p) for p in parts)
    if key in _LIST_KEYS:
        conv = _LIST_KEYS[key]
        parts = [p for p in value.replace(",", " ").split()]
        if not parts:
            raise ValueError("empty list")
        return tuple(conv(p) for p in parts)
    return _SCALAR_KEYS[key](value)


def _fmt(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


# -- estimate table -------------------------------------------------------

@dataclass
class EstimateTable:
    """Rows of Monte Carlo estimates; CSV emission with 17 significant digits."""

    rows: list = field(default_factory=list)

    HEADER = ("experiment", "G", "epsilon", "gamma", "N", "t", "estimate", "stderr", "replicas")

    def add(self, experiment, G, epsilon, gamma, N, t, samples):
        """Add mean and standard error of ``samples`` (replicas on axis 0).

        ``t`` broadcasts against the remaining axis; ``N`` may be a list
        giving one value per row.
        """
        samples = np.asarray(samples, dtype=float)
        R = samples.shape[0]
        mean = np.atleast_1d(samples.mean(axis=0))
        se = np.atleast_1d(samples.std(axis=0, ddof=1) / math.sqrt(R))
        ts = np.broadcast_to(np.asarray(t, dtype=float), mean.shape)
        Ns = N if isinstance(N, (list, tuple)) else [N] * mean.size
        for n, tt, m, s in zip(Ns, ts, mean, se):
            self.rows.append((experiment, G, epsilon, gamma, n, float(tt), float(m), float(s), R))
        return mean, se

    def add_value(self, experiment, G, epsilon, gamma, N, t, estimate, stderr, replicas):
        self.rows.append((experiment, G, epsilon, gamma, N, t, float(estimate),
                          float(stderr), replicas))

    def mark_failed(self, experiment, G, epsilon, gamma, N, t, replicas):
        """Record a cell whose quadrature contract failed (estimate is NaN)."""
        self.rows.append((experiment, G, epsilon, gamma, N, t, math.nan, math.nan, replicas))

    def extend(self, other):
        self.rows.extend(other.rows)

    def select(self, **match):
        idx = {k: i for i, k in enumerate(self.HEADER)}
        return [r for r in self.rows
                if all(_same(r[idx[k]], v) for k, v in match.items())]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow([_cell(v) for v in r])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != cls.HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = []
        for r in reader:
            rows.append((r[0], r[1], _num(r[2]), _num(r[3]), _num(r[4], int),
                         _num(r[5]), _num(r[6]), _num(r[7]), int(r[8])))
        return cls(rows)

    def __len__(self):
        return len(self.rows)


def _same(a, b):
    if isinstance(a, float) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-15)
    return a == b


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _num(s, conv=float):
    return None if s == "" else conv(float(s)) if conv is int else conv(s)


# -- replica execution ----------------------------------------------------

class FormBank:
    """Named quadratic forms evaluated together on each trajectory.

    ``sample`` forms are read on the snapshots, ``integral`` forms are
    integrated in time from the trajectory's running integrals.
    """

    def __init__(self, sites):
        self.sites = sites
        self._forms = {"sample": {}, "integral": {}}
        self._packed = None

    def add(self, kind, key, form):
        if key in self._forms[kind]:
            raise KeyError(f"duplicate {kind} form {key!r}")
        self._forms[kind][key] = form
        self._packed = None

    def keys(self, kind):
        return list(self._forms[kind])

    @property
    def band(self):
        b = [f.band for d in self._forms.values() for f in d.values()]
        return max(b + [1])

    def _pack(self):
        if self._packed is None:
            b = self.band
            packed = {}
            for kind, forms in self._forms.items():
                fs = list(forms.values())
                const = np.array([f.const for f in fs])
                lin = np.array([f.linear for f in fs]).reshape(len(fs), self.sites)
                quad = np.zeros((len(fs), self.sites, b + 1))
                for i, f in enumerate(fs):
                    k = min(f.quad.shape[1], b + 1)
                    quad[i, :, :k] = f.quad[:, :k]
                packed[kind] = (const, lin, quad)
            self._packed = packed
        return self._packed

    def evaluate(self, traj):
        """``(sample_values, integral_values)`` with shapes ``(n_forms, n_t)``."""
        pk = self._pack()
        b = self.band
        const, lin, quad = pk["sample"]
        xi = 2.0 * traj.snapshots - 1.0
        S = const[:, None] + lin @ xi.T
        for k in range(1, b + 1):
            if np.any(quad[:, :, k]):
                S = S + quad[:, :, k] @ (xi * np.roll(xi, -k, axis=1)).T
        const, lin, quad = pk["integral"]
        I = const[:, None] * traj.sample_times[None, :] + lin @ traj.occupation_integrals.T
        if quad.shape[0]:
            I = I + np.einsum("fxk,txk->ft", quad[:, :, 1:], traj.pair_integrals[:, :, 1:b + 1])
        return S, I

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_packed"] = self._pack()
        return state


@dataclass
class ReplicaData:
    """Per-replica results in replica order."""

    times: np.ndarray
    sample_keys: list
    integral_keys: list
    samples: np.ndarray    # (R, n_sample_forms, n_t)
    integrals: np.ndarray  # (R, n_integral_forms, n_t)

    def sample(self, key):
        return self.samples[:, self.sample_keys.index(key)]

    def integral(self, key):
        return self.integrals[:, self.integral_keys.index(key)]

    @property
    def replicas(self):
        return self.samples.shape[0]


_WORKER = {}


def _init_worker(ctx):
    _WORKER.clear()
    _WORKER.update(ctx)


def _replica(r):
    ctx = _WORKER
    rng = replica_rng(ctx["seed"], r, ctx["stream"])
    traj = simulate(ctx["params"], ctx["times"], rng=rng, band=ctx["bank"].band)
    return ctx["bank"].evaluate(traj)


def collect(params, bank, times, replicas, master_seed, stream=0, workers=1):
    """Run ``replicas`` seeded trajectories and evaluate ``bank`` on each.

    Replica ``r`` draws from the stream ``(master_seed, stream, r)``;
    results are reduced in replica order whatever the worker count.
    """
    ctx = {"params": params, "bank": bank, "times": np.asarray(times, float),
           "seed": master_seed, "stream": stream}
    if workers <= 1:
        _init_worker(ctx)
        out = [_replica(r) for r in range(replicas)]
    else:
        chunk = max(1, replicas // (4 * workers))
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ctx,)) as ex:
            out = list(ex.map(_replica, range(replicas), chunksize=chunk))
    S = np.stack([o[0] for o in out])
    I = np.stack([o[1] for o in out])
    return ReplicaData(ctx["times"], bank.keys("sample"), bank.keys("integral"), S, I)


# -- results --------------------------------------------------------------

@dataclass
class ScanResult:
    experiment: str
    table: EstimateTable
    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.checks.values())


def write_manifest(path, config, experiment, summary=None):
    """JSON run manifest: config, its hash, seed and library versions."""
    import numba
    import scipy

    doc = {
        "experiment": experiment,
        "config": {k: getattr(config, k) for k in KEYS},
        "config_sha256": config.digest(),
        "master_seed": config.master_seed,
        "versions": {"package": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__},
        "summary": _jsonable(summary or {}),
    }
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _cell_name(G, J):
    return f"{G.name}/{J.kind}"


def _trapz_t(values, t):
    return np.trapezoid(values, t, axis=-1)


def _paired_nonincreasing(samples):
    """Per-step check that ``mean(x_{i+1} - x_i) <= z95 * SE`` over paired replicas."""
    ok = []
    for a, b in zip(samples[:-1], samples[1:]):
        d = b - a
        se = d.std(ddof=1) / math.sqrt(d.size)
        ok.append(bool(d.mean() <= Z95 * se + 1e-300))
    return ok


def _loglog_slope(N, D):
    N, D = np.asarray(N, float), np.asarray(D, float)
    keep = D > 0
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(N[keep]), np.log(D[keep]), 1)[0])


def _require(config, minimum, what):
    if config.replicas < minimum:
        raise ValueError(f"{what} needs at least {minimum} replicas for a stable CI, "
                         f"got {config.replicas}")


def _safe_form(build):
    try:
        return build()
    except QuadratureError:
        return None


# -- experiments ----------------------------------------------------------

def run_replicas(config, workers=1):
    """Every ledger functional of every configured ``G`` at every sample time.

    Rows: ``field`` and ``field_sq`` (``Y_t(G)`` and its square),
    ``martingale`` and ``martingale_sq``, ``taylor_residual``,
    ``remainder_0``, and per ``(N, mollifier)`` ``remainder_1..4``,
    ``nonlinear_integral`` and ``mollified_functional``.
    """
    table = EstimateTable()
    t = config.times()
    Gs, Js = config.test_functions(), config.mollifiers()
    for stream, eps in enumerate(config.epsilon_list):
        p = config.params(eps)
        bank = FormBank(p.sites)
        failed = []
        for G in Gs:
            bank.add("sample", ("field", G.name), field_form(p, G))
            for key, f in (("drift", drift_form), ("heat", heat_form), ("pair", pair_form),
                           ("taylor", taylor_form), ("v0", v0_form)):
                bank.add("integral", (key, G.name), f(p, G))
            for J in Js:
                for N in config.n_list:
                    mollifier_band(p, N)
                    nl = _safe_form(lambda: nonlinear_form(p, G, J, N))
                    rem = _safe_form(lambda: remainder_forms(p, G, J, N))
                    if nl is None or rem is None:
                        failed.append((G, J, N))
                        continue
                    bank.add("integral", ("nl", G.name, J.kind, N), nl)
                    for i, f in enumerate(rem[1:], 1):
                        bank.add("integral", ("v", i, G.name, J.kind, N), f)
        data = collect(p, bank, t, config.replicas, config.master_seed, stream, workers)
        g = config.gamma
        for G in Gs:
            Y = data.sample(("field", G.name))
            M = Y - Y[:, :1] - data.integral(("drift", G.name))
            table.add("field", G.name, eps, g, None, t, Y)
            table.add("field_sq", G.name, eps, g, None, t, Y**2)
            table.add("martingale", G.name, eps, g, None, t, M)
            table.add("martingale_sq", G.name, eps, g, None, t, M**2)
            table.add("taylor_residual", G.name, eps, g, None, t, data.integral(("taylor", G.name)))
            table.add("remainder_0", G.name, eps, g, None, t, data.integral(("v0", G.name)))
            heat = data.integral(("heat", G.name))
            for J in Js:
                for N in config.n_list:
                    name = _cell_name(G, J)
                    if (G, J, N) in failed:
                        for exp in ("remainder_1", "remainder_2", "remainder_3", "remainder_4",
                                    "nonlinear_integral", "mollified_functional"):
                            for tt in t:
                                table.mark_failed(exp, name, eps, g, N, float(tt), config.replicas)
                        continue
                    for i in range(1, 5):
                        table.add(f"remainder_{i}", name, eps, g, N, t,
                                  data.integral(("v", i, G.name, J.kind, N)))
                    nl = data.integral(("nl", G.name, J.kind, N))
                    table.add("nonlinear_integral", name, eps, g, N, t, nl)
                    table.add("mollified_functional", name, eps, g, N, t, Y - Y[:, :1] - heat + g * nl)
    return table


def cauchy_scan(config, workers=1):
    """``D(N) = int_0^T E[(F_Ntilde(t) - F_N(t))^2] dt`` with ``F_N = int_0^t int G' (Y*J_N)^2``.

    Checks per ``(epsilon, G, mollifier)``: ``D`` non-increasing in ``N``
    within paired 95% intervals, and ``D(N) <= C N^{-1/3} sum_m sup|(1+u^2) G^(m)|^2``
    for ``N`` above the smallest, with ``C`` fitted at the smallest ``N``.
    """
    if len(config.n_list) < 3:
        raise ValueError("cauchy_scan needs at least 3 values of N")
    _require(config, MIN_SCAN_REPLICAS, "cauchy_scan")
    table, summary, checks = EstimateTable(), {}, {}
    t = config.times()
    T = float(t[-1])
    Ns = list(config.n_list)
    Nt = Ns[-1]
    Gs, Js = config.test_functions(), config.mollifiers()
    for stream, eps in enumerate(config.epsilon_list):
        p = config.params(eps)
        bank = FormBank(p.sites)
        failed = set()
        for G in Gs:
            for J in Js:
                for N in Ns:
                    f = _safe_form(lambda: nonlinear_form(p, G, J, N))
                    if f is None:
                        failed.add((G.name, J.kind))
                        break
                    bank.add("integral", (G.name, J.kind, N), f)
        data = collect(p, bank, t, config.replicas, config.master_seed, stream, workers)
        for G in Gs:
            S = sum(G.sup_norms[m] ** 2 for m in (1, 2, 3))
            for J in Js:
                name = _cell_name(G, J)
                if (G.name, J.kind) in failed:
                    for N in Ns:
                        table.mark_failed("cauchy_D", name, eps, config.gamma, N, T, config.replicas)
                    summary[f"{name}@{eps:g}"] = {"quadrature_failed": True}
                    checks[f"monotone[{name}@{eps:g}]"] = False
                    continue
                ref = data.integral((G.name, J.kind, Nt))
                per = np.array([_trapz_t((ref - data.integral((G.name, J.kind, N))) ** 2, t)
                                for N in Ns])  # (n_N, R)
                D, se = table.add("cauchy_D", name, eps, config.gamma, Ns, T, per.T)
                C = D[0] * Ns[0] ** (1 / 3) / S
                env = C * np.array(Ns, float) ** (-1 / 3) * S
                mono = _paired_nonincreasing(per)
                key = f"{name}@{eps:g}"
                summary[key] = {"N": Ns, "D": D, "stderr": se, "slope": _loglog_slope(Ns[:-1], D[:-1]),
                                "C_fit": C, "envelope": env, "sup_sum": S, "monotone_steps": mono}
                checks[f"monotone[{key}]"] = all(mono)
                checks[f"envelope[{key}]"] = bool(np.all(D[1:] <= env[1:] * (1 + 1e-12)))
    return ScanResult("cauchy-scan", table, summary, checks)


def remainder_scan(config, workers=1, i4_epsilon=None, i4_pair=(4, 8)):
    """Time-integrated second moments ``int_0^T E[R^i(t)^2] dt``, ``i = 0..4``.

    Checks: the ``i=0`` ratio across the two extreme epsilons lies within a
    factor 2 of ``(eps_1/eps_2)^2`` and is flat in ``N`` within 1.5; the
    ``i=4`` ratio across ``i4_pair`` at ``i4_epsilon`` (default: the
    smallest epsilon) lies within a factor 2 of ``(N_2/N_1)^4``; the
    ``i=3`` moment is non-increasing in ``N`` within paired 95% intervals.
    """
    if len(config.epsilon_list) < 2 or len(config.n_list) < 2:
        raise ValueError("remainder_scan needs at least 2 epsilons and 2 values of N")
    _require(config, MIN_SCAN_REPLICAS, "remainder_scan")
    table, summary, checks = EstimateTable(), {}, {}
    t = config.times()
    T = float(t[-1])
    Ns = list(config.n_list)
    Gs, Js = config.test_functions(), config.mollifiers()
    moments = {}   # (eps, G, J, N, i) -> mean
    per_rep = {}   # (eps, G, J, i) -> (n_N, R)
    for stream, eps in enumerate(config.epsilon_list):
        p = config.params(eps)
        bank = FormBank(p.sites)
        failed = set()
        for G in Gs:
            for J in Js:
                for N in Ns:
                    rem = _safe_form(lambda: remainder_forms(p, G, J, N))
                    if rem is None:
                        failed.add((G.name, J.kind, N))
                        continue
                    for i, f in enumerate(rem):
                        bank.add("integral", (G.name, J.kind, N, i), f)
        data = collect(p, bank, t, config.replicas, config.master_seed, stream, workers)
        for G in Gs:
            for J in Js:
                name = _cell_name(G, J)
                for i in range(5):
                    rows = []
                    for N in Ns:
                        if (G.name, J.kind, N) in failed:
                            table.mark_failed(f"remainder_moment_{i}", name, eps, config.gamma,
                                              N, T, config.replicas)
                            rows.append(np.full(config.replicas, np.nan))
                            continue
                        m = _trapz_t(data.integral((G.name, J.kind, N, i)) ** 2, t)
                        mean, _ = table.add(f"remainder_moment_{i}", name, eps, config.gamma, N, T, m)
                        moments[(eps, G.name, J.kind, N, i)] = float(mean[0])
                        rows.append(m)
                    per_rep[(eps, G.name, J.kind, i)] = np.array(rows)
    e_hi, e_lo = max(config.epsilon_list), min(config.epsilon_list)
    e4 = e_lo if i4_epsilon is None else i4_epsilon
    target0 = (e_hi / e_lo) ** 2
    for G in Gs:
        for J in Js:
            name = _cell_name(G, J)
            for N in Ns:
                a, b = moments.get((e_hi, G.name, J.kind, N, 0)), moments.get((e_lo, G.name, J.kind, N, 0))
                ratio = a / b if a is not None and b else math.nan
                summary[f"i0_eps_ratio[{name},N={N}]"] = {"ratio": ratio, "target": target0}
                checks[f"i0_eps_ratio[{name},N={N}]"] = bool(target0 / 2 <= ratio <= target0 * 2)
            for eps in config.epsilon_list:
                key = f"{name}@{eps:g}"
                m0 = np.array([moments.get((eps, G.name, J.kind, N, 0), math.nan) for N in Ns])
                flat = float(m0.max() / m0.min())
                summary[f"i0_flat[{key}]"] = flat
                checks[f"i0_flat[{key}]"] = bool(flat <= 1.5)
                mono = _paired_nonincreasing(per_rep[(eps, G.name, J.kind, 3)])
                summary[f"i3_steps[{key}]"] = mono
                checks[f"i3_nonincreasing[{key}]"] = all(mono)
                for i in (1, 2, 3, 4):
                    mi = [moments.get((eps, G.name, J.kind, N, i), math.nan) for N in Ns]
                    summary[f"slope_i{i}[{key}]"] = _loglog_slope(Ns, mi)
                if all(n in Ns for n in i4_pair):
                    n1, n2 = i4_pair
                    r4 = (moments.get((eps, G.name, J.kind, n2, 4), math.nan)
                          / moments.get((eps, G.name, J.kind, n1, 4), math.nan))
                    target4 = (n2 / n1) ** 4
                    summary[f"i4_ratio[{key}]"] = {"ratio": r4, "target": target4}
                    if math.isclose(eps, e4):
                        checks[f"i4_ratio[{key}]"] = bool(target4 / 2 <= r4 <= target4 * 2)
    return ScanResult("remainder-scan", table, summary, checks)


def _past_functionals(Y_first, M, Y_own, s_idx):
    """Six functionals of the path up to the sample index ``s_idx``."""
    Ms = M[:, s_idx]
    return {
        "one": np.ones(M.shape[0]),
        "field_first": Y_first[:, s_idx],
        "sign_martingale": np.sign(Ms),
        "martingale": Ms,
        "initial_field_sq": Y_own[:, 0] ** 2,
        "cos_field": np.cos(Y_own[:, s_idx]),
    }


def martingale_test(config, workers=1, epsilon=None, combo=(0.7, -1.3)):
    """Martingale properties of ``M^{G,eps}`` at one epsilon (default: the smallest).

    (a) ``E[X (M_T - M_{T/2})] = 0`` for six past functionals ``X``;
    (b) ``Var M_t`` linear in ``t`` with slope ``2 ||G'||^2``;
    (c) Kolmogorov-Smirnov of ``M_T`` against ``N(0, 2T||G'||^2)``;
    (d) cross-covariances against :func:`gaussian.limit_covariance`;
    (e) pathwise linearity in ``G``.
    """
    _require(config, MIN_DISTRIBUTIONAL_REPLICAS, "martingale_test")
    eps = min(config.epsilon_list) if epsilon is None else epsilon
    stream = list(config.epsilon_list).index(eps) if eps in config.epsilon_list else len(config.epsilon_list)
    p = config.params(eps)
    t = config.times()
    Gs = config.test_functions()
    a1, a2 = combo
    combos = []
    if len(Gs) >= 2:
        c1, c2 = _coeffs(Gs[0], Gs[1])
        combos = [TestFunction.hermite_series(a1 * c1 + a2 * c2, name="combo")]
    bank = FormBank(p.sites)
    for G in Gs + combos:
        bank.add("sample", G.name, field_form(p, G))
        bank.add("integral", G.name, drift_form(p, G))
    data = collect(p, bank, t, config.replicas, config.master_seed, stream, workers)
    R = data.replicas
    Y = {G.name: data.sample(G.name) for G in Gs + combos}
    M = {k: y - y[:, :1] - data.integral(k) for k, y in Y.items()}
    table, summary, checks = EstimateTable(), {}, {}
    g = config.gamma
    s_idx = int(np.argmin(np.abs(t - t[-1] / 2)))
    first = Gs[0].name
    ks_pass = 0
    for G in Gs:
        m = M[G.name]
        target = 2.0 * G.derivative_l2_norm ** 2
        table.add("martingale_mean", G.name, eps, g, None, t, m)
        var = m.var(axis=0, ddof=1)
        var_se = var * math.sqrt(2.0 / (R - 1))
        for tt, v, s in zip(t, var, var_se):
            table.add_value("martingale_var", G.name, eps, g, None, float(tt), v, s, R)
        # (a)
        inc = m[:, -1] - m[:, s_idx]
        for xname, X in _past_functionals(Y[first], m, Y[G.name], s_idx).items():
            prod = X * inc
            mean, se = prod.mean(), prod.std(ddof=1) / math.sqrt(R)
            table.add_value(f"orthogonality_{xname}", G.name, eps, g, None, float(t[-1]), mean, se, R)
            checks[f"orthogonality[{G.name},{xname}]"] = bool(abs(mean) <= 4 * se)
        # (b)
        slope, intercept = np.polyfit(t, var, 1)
        fit = slope * t + intercept
        r2 = 1.0 - np.sum((var - fit) ** 2) / np.sum((var - var.mean()) ** 2)
        summary[f"variance_fit[{G.name}]"] = {"slope": slope, "intercept": intercept,
                                              "r2": r2, "target": target}
        checks[f"variance_r2[{G.name}]"] = bool(r2 > 0.99)
        checks[f"variance_slope[{G.name}]"] = bool(abs(slope - target) <= 0.15 * target)
        # (c)
        sd = math.sqrt(limit_covariance(G, G, t[-1], t[-1]))
        ks = stats.kstest(m[:, -1] / sd, "norm")
        summary[f"ks[{G.name}]"] = {"statistic": ks.statistic, "pvalue": ks.pvalue}
        ks_pass += ks.pvalue >= 0.01
    checks["ks_majority"] = bool(ks_pass >= math.ceil(2 * len(Gs) / 3))
    summary["ks_passed"] = ks_pass
    # (d)
    for i, G1 in enumerate(Gs):
        for G2 in Gs[i + 1:]:
            prod = M[G1.name][:, -1] * M[G2.name][:, -1]
            mean, se = prod.mean(), prod.std(ddof=1) / math.sqrt(R)
            ref = limit_covariance(G1, G2, t[-1], t[-1])
            table.add_value("cross_covariance", f"{G1.name}*{G2.name}", eps, g, None,
                            float(t[-1]), mean, se, R)
            summary[f"cross_covariance[{G1.name},{G2.name}]"] = {"estimate": mean, "stderr": se,
                                                                  "limit": ref}
            checks[f"cross_covariance[{G1.name},{G2.name}]"] = bool(abs(mean - ref) <= 4 * se)
    # (e)
    if combos:
        lin = a1 * M[Gs[0].name] + a2 * M[Gs[1].name]
        err = float(np.max(np.abs(M["combo"] - lin)))
        scale = float(np.max(np.abs(lin))) + 1e-300
        summary["linearity_max_error"] = err
        checks["linearity"] = bool(err <= 1e-9 * scale)
    return ScanResult("martingale-test", table, summary, checks)


def _coeffs(G1, G2):
    c1, c2 = G1.hermite_coeffs, G2.hermite_coeffs
    n = max(c1.size, c2.size)
    return np.pad(c1, (0, n - c1.size)), np.pad(c2, (0, n - c2.size))


def sobolev_report(config, workers=1, m_max=4, n_max=6, strict=True):
    """Truncated squared negative-norm distance between the mollified nonlinearity
    and its martingale-based target, versus ``N``.

    Each pairing with ``g_m (x) G_n`` is ``(1/gamma) int_0^T g_m'(t) D_n(t) dt``
    where ``D_n = M_N(Y)(G_n) - M^{G_n}`` is read off the trajectory
    (drift minus heat plus gamma times the nonlinear integral). The
    ``sobolev_cauchy`` rows measure the same distance to the largest ``N``.
    """
    if config.gamma == 0:
        raise ValueError("sobolev_report divides by gamma; gamma must be nonzero")
    _require(config, MIN_SCAN_REPLICAS, "sobolev_report")
    t = config.times()
    T = float(t[-1])
    if t.size < 4 * m_max + 1:
        raise ValueError(f"{t.size} sample times cannot resolve g_{m_max}")
    D = DirichletBasis(T)
    gp = np.array([D(m, t, 1) for m in range(1, m_max + 1)])  # (m, n_t)
    w = SobolevWeights().grid(m_max, n_max)
    Ns = list(config.n_list)
    Gn = [TestFunction.hermite(n) for n in range(1, n_max + 1)]
    table, summary, checks = EstimateTable(), {}, {}
    g = config.gamma
    for stream, eps in enumerate(config.epsilon_list):
        p = config.params(eps)
        bank = FormBank(p.sites)
        for n, G in enumerate(Gn, 1):
            bank.add("integral", ("lin", n), drift_form(p, G) - heat_form(p, G))
            for J in config.mollifiers():
                for N in Ns:
                    bank.add("integral", ("nl", n, J.kind, N), nonlinear_form(p, G, J, N))
        data = collect(p, bank, t, config.replicas, config.master_seed, stream, workers)
        for J in config.mollifiers():
            P = {}
            for N in Ns:
                Dn = np.stack([data.integral(("lin", n)) + g * data.integral(("nl", n, J.kind, N))
                               for n in range(1, n_max + 1)], axis=1)  # (R, n, n_t)
                P[N] = np.trapezoid(gp[None, :, None, :] * Dn[:, None, :, :], t, axis=-1) / g
            key = f"{J.kind}@{eps:g}"
            dist = np.array([np.sum(w * P[N] ** 2, axis=(1, 2)) for N in Ns])  # (n_N, R)
            cauchy = np.array([np.sum(w * (P[N] - P[Ns[-1]]) ** 2, axis=(1, 2)) for N in Ns])
            mean, se = table.add("sobolev_distance", J.kind, eps, g, Ns, T, dist.T)
            table.add("sobolev_cauchy", J.kind, eps, g, Ns, T, cauchy.T)
            # outermost shell: m = m_max or n = n_max
            contrib = np.array([np.mean(w * P[N] ** 2, axis=0) for N in Ns])  # (n_N, m, n)
            shell = contrib[:, -1, :].sum(axis=1) + contrib[:, :-1, -1].sum(axis=1)
            frac = shell / contrib.sum(axis=(1, 2))
            summary[f"shell_fraction[{key}]"] = frac
            checks[f"truncation[{key}]"] = bool(np.all(frac <= 0.1))
            if strict and np.any(frac > 0.1):
                raise TruncationError(f"outer shell carries {frac.max():.1%} of the truncated "
                                      f"norm at {key}; raise m_max or n_max")
            mono = _paired_nonincreasing(dist)
            summary[f"distance[{key}]"] = {"N": Ns, "mean": mean, "stderr": se, "steps": mono}
            checks[f"distance_nonincreasing[{key}]"] = all(mono)
            # single-mode envelope const m^2 n^6 / N^{1/3}
            mm = np.arange(1, m_max + 1)[:, None] ** 2 * np.arange(1, n_max + 1)[None, :] ** 6
            second = np.array([np.mean(P[N] ** 2, axis=0) for N in Ns])
            c = float(np.max(second[0] * Ns[0] ** (1 / 3) / mm))
            env_ok = all(np.all(second[i] <= c * mm * N ** (-1 / 3) * (1 + 1e-12))
                         for i, N in enumerate(Ns))
            summary[f"mode_envelope_const[{key}]"] = c
            checks[f"mode_envelope[{key}]"] = bool(env_ok)
            summary[f"cauchy_at_reference[{key}]"] = float(cauchy[-1].max())
    return ScanResult("sobolev-report", table, summary, checks)


def oracle_check(sites=6, epsilon=0.04, gamma=1.0, micro_duration=0.5, runs=10_000,
                 seed=0, mass_floor=1e-3, z_max=4.0):
    """Event engine against ``exp(t Q)`` of the dense generator on a small ring."""
    p = SimParams.from_sites(sites, epsilon, gamma)
    P = transition_matrix(p, micro_duration)
    F = empirical_transitions(p, micro_duration, runs, seed)
    table = EstimateTable()
    se = np.sqrt(P * (1 - P) / runs)
    mask = P > mass_floor
    z = np.zeros_like(P)
    degenerate = se < 1e-12
    z[~degenerate] = (F - P)[~degenerate] / se[~degenerate]
    exact_ok = bool(np.all(np.abs(F - P)[mask & degenerate] < 1e-9))
    worst = float(np.max(np.abs(z[mask & ~degenerate]))) if np.any(mask & ~degenerate) else 0.0
    for i, j in zip(*np.nonzero(mask)):
        table.add_value("oracle_transition", f"{i}->{j}", epsilon, gamma, None,
                        micro_duration, F[i, j], se[i, j], runs)
    n_fail = int(np.sum(np.abs(z[mask & ~degenerate]) > z_max)) + (0 if exact_ok else 1)
    summary = {"entries": int(mask.sum()), "max_abs_z": worst, "failures": n_fail,
               "absorbing_exact": exact_ok}
    return ScanResult("oracle-check", table, summary, {"oracle": n_fail == 0})


def selftest():
    """Fast deterministic checks of each layer; returns ``(name, passed, detail)`` triples."""
    from .basis import HermiteBasis, neg_sobolev_norm
    from .field import decompose
    from .gaussian import GridSpec, sheet_pairing_variance

    out = []
    u = np.linspace(-16, 16, 16001)
    H = HermiteBasis(40).table(u)
    gram = np.trapezoid(H[:, None, :] * H[None, :, :], u, axis=-1)
    err = float(np.abs(gram - np.eye(40)).max())
    out.append(("hermite_orthonormality", err < 1e-8, f"max error {err:.2e}"))
    errs = [abs(TestFunction.hermite(n).derivative_l2_norm ** 2 - (n - 0.5)) for n in (1, 5, 20)]
    out.append(("hermite_derivative_norms", max(errs) < 1e-8, f"max error {max(errs):.2e}"))
    w = neg_sobolev_norm({(2, 3): 1.0})
    exact = ((8 + 27) * 4 * 729) ** -0.5
    out.append(("sobolev_weight", abs(w - exact) < 1e-12, f"{w!r} vs {exact!r}"))
    for J in (Mollifier("bump"), Mollifier("polybump")):
        v = np.linspace(-1, 1, 20001)
        mass = float(np.trapezoid(J(v), v))
        out.append((f"mollifier_mass[{J.kind}]", abs(mass - 1) < 1e-6, f"{mass:.10f}"))
    G = TestFunction.hermite(2)
    grid = GridSpec(1.0, 12.0, 8, 1024)
    var = sheet_pairing_variance(grid, G, 1.0)
    out.append(("sheet_pairing_variance", abs(var / 3.0 - 1) < 0.01, f"{var:.6f} vs 3"))
    p = SimParams(0.1, 1.0, 20.0, 0.05)
    traj = simulate(p, np.linspace(0, 0.05, 5), rng=1, band=mollifier_band(p, 4))
    led = decompose(traj, G, Mollifier("bump"), (4,))
    a = float(led.approxi_error().max())
    r_abs, r_scale = led.rewrite_error(4)
    out.append(("ledger_identity", a < 1e-6, f"relative error {a:.2e}"))
    out.append(("rewrite_identity", bool(np.all(r_abs <= 1e-6 * r_scale + 1e-12)),
                f"max abs error {float(r_abs.max()):.2e}"))
    return out
