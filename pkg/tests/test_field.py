import math

import numpy as np
import pytest

from wasep_kpz import (Mollifier, SimParams, SpinState, TestFunction, decompose, drift_term,
                       eval_field, martingale_path, mollified_field, mollified_functional_path,
                       nonlinear_integral, remainder_terms, simulate, taylor_bound, taylor_residual)
from wasep_kpz.field import (discrete_pair_sum, drift_form, field_form, mollifier_band,
                             nonlinear_form, predictable_variance_path, remainder_forms)


def _random_state(L, seed):
    return SpinState(np.random.default_rng(seed).integers(0, 2, L))


def test_eval_field_hand_example():
    # the smallest admissible ring has 4 sites; with spins (1, -1, -1, 1) at
    # x = 0, 1, -2, -1 the x = 1 and x = -1 terms cancel by evenness
    p = SimParams(0.25, 1.0, 1.0, 1.0, sites=4)
    G = TestFunction.gaussian(1 / math.sqrt(2))  # exp(-u^2)
    xi = np.array([1, -1, -1, 1.0])
    with pytest.warns(RuntimeWarning):
        val = eval_field(xi, G, p)
    assert val == pytest.approx(0.5 * (1 - math.exp(-0.25)))
    # two-site value sqrt(eps) (G(0) - G(eps))
    two = math.sqrt(0.25) * (G(0.0) - G(0.25))
    assert two == pytest.approx(0.5 * (1 - math.exp(-0.0625)))
    assert two == pytest.approx(0.030295, rel=1e-4)


def test_eval_field_zero_and_linear():
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    s = _random_state(p.sites, 0)
    assert eval_field(s, TestFunction.zero(), p) == 0
    G1, G2 = TestFunction.hermite(1), TestFunction.hermite(4)
    assert eval_field(s, 2 * G1 + G2, p) == pytest.approx(2 * eval_field(s, G1, p) + eval_field(s, G2, p))


def test_field_variance_under_bernoulli():
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    G = TestFunction.hermite(2)
    rng = np.random.default_rng(5)
    xi = 2.0 * rng.integers(0, 2, (10_000, p.sites)) - 1
    Y = math.sqrt(p.epsilon) * xi @ G(p.positions())
    target = p.epsilon * np.sum(G(p.positions()) ** 2)
    assert Y.var() == pytest.approx(target, rel=4 * math.sqrt(2 / 10_000))
    assert target == pytest.approx(1.0, rel=1e-6)


def test_mollified_field_properties(bump):
    p = SimParams(0.05, 1.0, 20.0, 1.0)
    ones = np.ones(p.sites)
    v = mollified_field(ones, bump, 4, 0.3, p)
    assert v * math.sqrt(p.epsilon) == pytest.approx(1.0, abs=4 * p.epsilon)
    s = _random_state(p.sites, 3)
    xi = s.spins
    mirrored = np.roll(xi[::-1], 1)  # x -> -x on the ring
    for u in (0.0, 0.37, -1.2):
        assert mollified_field(xi, bump, 4, u, p) == pytest.approx(mollified_field(mirrored, bump, 4, -u, p))


def test_mollified_field_compact_support(bump):
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    state = np.where(np.arange(p.sites) < 5, 1.0, -1.0)
    # far from sites 0..4 the +1 block is invisible: the field sees only -1 spins
    far = mollified_field(state, bump, 4, 5.0, p)
    assert far == pytest.approx(-mollified_field(np.ones(p.sites), bump, 4, 5.0, p))


def test_pair_sum_examples():
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    G = TestFunction.hermite(3)
    g1 = G.derivative(p.positions(), 1)
    assert discrete_pair_sum(np.ones(p.sites), G, p) == pytest.approx(0.0, abs=1e-10)
    alt = np.array([(-1.0) ** x for x in range(p.sites)])
    assert discrete_pair_sum(alt, G, p) == pytest.approx(-g1.sum())
    assert discrete_pair_sum(alt, TestFunction.zero(), p) == 0


def test_drift_term_examples():
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    G = TestFunction.hermite(2)
    assert drift_term(np.ones(p.sites), G, p) == pytest.approx(0.0, abs=1e-12)
    s = _random_state(p.sites, 9)
    assert drift_term(s, G, p) == pytest.approx(drift_form(p, G).value(s), rel=1e-12)
    # single discrepant site: only the neighbourhood of x contributes
    xi = np.ones(p.sites)
    xi[3] = -1
    gen = np.zeros(p.sites)
    from wasep_kpz.exclusion import apply_generator_local
    for x in range(p.sites):
        gen[x] = apply_generator_local(xi, x, p)
    assert drift_term(xi, G, p) == pytest.approx(p.epsilon**-1.5 * G(p.positions()) @ gen)


def test_nonlinear_integral_matches_form(bump, h2):
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    s = _random_state(p.sites, 11)
    direct = nonlinear_integral(s, h2, bump, 4, p)
    assert direct == pytest.approx(nonlinear_form(p, h2, bump, 4).value(s), rel=1e-7)
    assert nonlinear_integral(s, TestFunction.zero(), bump, 4, p) == 0


def test_nonlinear_integral_odd_symmetry(bump):
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    G = TestFunction.hermite(1)  # G' odd
    xi = -np.ones(p.sites)
    xi[[0, 1, -1]] = 1  # symmetric pattern about 0
    val = nonlinear_integral(xi, G, bump, 4, p)
    assert abs(val) < 1e-8


def test_rewrite_identity_single_state(bump, h2):
    p = SimParams(0.25, 1.0, 16.0, 1.0)  # L = 64
    s = _random_state(p.sites, 2)
    lhs = nonlinear_integral(s, h2, bump, 4, p) - discrete_pair_sum(s, h2, p)
    V = remainder_terms(s, h2, bump, 4, p)
    assert lhs == pytest.approx(V[1:].sum(), rel=1e-6, abs=1e-9)


def test_v2_vanishes_on_constant_spins(bump, h2):
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    for c in (1.0, -1.0):
        assert remainder_terms(np.full(p.sites, c), h2, bump, 4, p)[2] == pytest.approx(0.0, abs=1e-12)


def test_remainders_vanish_for_zero_function(bump):
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    s = _random_state(p.sites, 1)
    assert np.all(remainder_terms(s, TestFunction.zero(), bump, 4, p) == 0)


def test_band_guard():
    with pytest.raises(ValueError):
        mollifier_band(SimParams(0.1, 1.0, 2.0, 1.0), 1)


@pytest.fixture(scope="module")
def traj():
    p = SimParams(0.1, 1.0, 20.0, 0.1)
    return simulate(p, np.linspace(0, 0.1, 9), rng=21, band=mollifier_band(p, 4))


def test_ledger_identities(traj, bump, h2):
    led = decompose(traj, h2, bump, (4, 8))
    assert led.approxi_error().max() < 1e-6
    for N in (4, 8):
        err, scale = led.rewrite_error(N)
        assert np.all(err <= 1e-6 * scale + 1e-12)
        assert led.mollified_error(N).max() < 1e-10
    assert np.allclose(led.mollified[4], mollified_functional_path(traj, h2, bump, 4))


def test_paths_start_at_zero(traj, bump, h2):
    assert martingale_path(traj, h2)[0] == 0
    assert taylor_residual(traj, h2)[0] == 0
    assert mollified_functional_path(traj, h2, bump, 4)[0] == 0
    assert np.all(mollified_functional_path(traj, TestFunction.zero(), bump, 4) == 0)


def test_taylor_bound_holds(traj):
    for n in (1, 2, 3):
        G = TestFunction.hermite(n)
        assert np.all(np.abs(taylor_residual(traj, G)) <= taylor_bound(traj.params, G, traj.sample_times))


def test_frozen_trajectory():
    p = SimParams(0.1, 1.0, 20.0, 0.1)
    full = SpinState(np.ones(p.sites, int))
    tr = simulate(p, np.linspace(0, 0.1, 5), rng=0, initial=full)
    G = TestFunction.hermite(2)
    assert np.allclose(martingale_path(tr, G), 0)
    assert np.allclose(taylor_residual(tr, G), 0, atol=1e-12)
    assert np.allclose(predictable_variance_path(tr, G), 0, atol=1e-9)


def test_predictable_variance_is_nondecreasing(traj, h2):
    v = predictable_variance_path(traj, h2)
    assert v[0] == 0 and np.all(np.diff(v) >= 0)


def test_field_form_matches_eval(traj, h2):
    vals = field_form(traj.params, h2).at_samples(traj)
    assert vals[-1] == pytest.approx(eval_field(traj.spins(-1), h2, traj.params))
    forms = remainder_forms(traj.params, h2, Mollifier("bump"), 4)
    assert len(forms) == 5
