import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wasep_kpz import (SimParams, SpinState, advance, enabled_jumps, exact_generator_matrix,
                       replay_states, replica_rng, sample_initial, simulate, total_rate,
                       transition_matrix)
from wasep_kpz.exclusion import apply_generator_local, stationary_sector_check


def test_params_validation():
    with pytest.raises(ValueError):
        SimParams(0.04, 6.0, 20.0, 1.0)  # sqrt(eps) gamma > 1
    with pytest.raises(ValueError):
        SimParams(1.0, 0.5, 3.0, 1.0)    # fewer than 4 sites
    with pytest.raises(ValueError):
        SimParams(0.1, 1.0, 20.0, 1.0, sites=150)
    p = SimParams(0.04, 1.0, 20.0, 0.25)
    assert p.sites == 500
    assert p.drift == pytest.approx(0.2)


def test_positions_cover_window():
    p = SimParams(0.1, 1.0, 20.0, 1.0)
    x = p.positions()
    assert x[0] == 0.0
    assert x.min() == pytest.approx(-10.0) and x.max() == pytest.approx(9.9)
    assert np.unique(np.round(x / p.epsilon)).size == p.sites


def test_sample_initial_density_and_determinism():
    p = SimParams.from_sites(100_000, 0.01, 1.0)
    s = sample_initial(p, 7)
    assert 0.49 <= s.occupation.mean() <= 0.51
    assert np.array_equal(s.occupation, sample_initial(p, 7).occupation)
    assert not np.array_equal(s.occupation, sample_initial(p, 8).occupation)


def test_replica_streams_are_distinct():
    a = replica_rng(1, 0).random(4)
    assert np.array_equal(a, replica_rng(1, 0).random(4))
    assert not np.array_equal(a, replica_rng(1, 1).random(4))
    assert not np.array_equal(a, replica_rng(1, 0, 1).random(4))


def test_enabled_jumps_examples():
    p = SimParams.from_sites(4, 0.04, 1.0)
    assert enabled_jumps(SpinState(np.ones(4, int)), p) == []
    assert total_rate(SpinState(np.ones(4, int)), p) == 0
    ev = enabled_jumps(SpinState([1, 0, 0, 0]), p)
    assert {(e.source, e.direction, round(e.rate, 12)) for e in ev} == {(0, "right", 1.2), (0, "left", 0.8)}
    ev = enabled_jumps(SpinState([1, 1, 0, 0]), p)
    assert {(e.source, e.direction) for e in ev} == {(1, "right"), (0, "left")}
    assert total_rate(SpinState([1, 1, 0, 0]), p) == pytest.approx(2.0)


@given(st.lists(st.integers(0, 1), min_size=4, max_size=30), st.floats(0.0, 1.0))
def test_total_rate_matches_enumeration(occ, a):
    p = SimParams.from_sites(len(occ), 0.04, a / 0.2)
    s = SpinState(occ)
    assert total_rate(s, p) == pytest.approx(sum(e.rate for e in enabled_jumps(s, p)))


def test_generator_local_examples():
    p = SimParams.from_sites(6, 0.04, 1.0)
    assert apply_generator_local(np.ones(6), 2, p) == 0
    xi = np.array([1, -1, 1, -1, 1, 1.0])
    assert apply_generator_local(xi, 2, p) == pytest.approx(-4.0)
    xi = np.array([1, 1, 1, -1, 1, 1.0])
    assert apply_generator_local(xi, 2, p) == pytest.approx(-2.4)


def test_generator_matrix():
    p = SimParams.from_sites(4, 0.04, 1.0)
    Q = exact_generator_matrix(p)
    assert np.allclose(Q.sum(axis=1), 0)
    assert Q[0b0001, 0b0010] == pytest.approx(1.2)
    assert stationary_sector_check(Q) < 1e-12
    with pytest.raises(ValueError):
        exact_generator_matrix(SimParams.from_sites(13, 0.04, 1.0))


def test_advance_edge_cases(rng):
    p = SimParams.from_sites(8, 0.04, 1.0)
    s = SpinState([1, 0, 1, 1, 0, 0, 1, 0])
    before = s.occupation.copy()
    assert len(advance(s, p, rng, 0.0)) == 0
    assert np.array_equal(s.occupation, before)
    full = SpinState(np.ones(8, int))
    assert len(advance(full, p, rng, 50.0)) == 0
    assert full.micro_time == 50.0


def test_events_replay_and_conserve(rng):
    p = SimParams.from_sites(40, 0.04, 1.0)
    s = sample_initial(p, rng)
    init = s.copy()
    log = advance(s, p, rng, 30.0)
    assert len(log) > 0
    assert np.all(np.diff(log.micro_time) > 0)
    states = replay_states(init, log)
    assert np.array_equal(states[-1], s.occupation)
    assert np.all(states.sum(axis=1) == init.particle_count)
    rates = {round(e.rate, 12) for e in log.events(p)}
    assert rates <= {1.2, 0.8}


def test_first_event_law_matches_generator():
    # first-jump target distribution from a fixed state is Q[i, j] / -Q[i, i]
    p = SimParams.from_sites(6, 0.04, 1.0)
    Q = exact_generator_matrix(p)
    code = 0b001011
    occ = np.array([(code >> i) & 1 for i in range(6)])
    rng = np.random.default_rng(3)
    counts = {}
    runs = 20_000
    for _ in range(runs):
        s = SpinState(occ)
        log = advance(s, p, rng, 5.0)
        if len(log) == 0:
            continue
        st_ = replay_states(SpinState(occ), log, upto=1)[1]
        c = int(sum(int(v) << i for i, v in enumerate(st_)))
        counts[c] = counts.get(c, 0) + 1
    total = sum(counts.values())
    for j, n in counts.items():
        prob = Q[code, j] / -Q[code, code]
        se = math.sqrt(prob * (1 - prob) / total)
        assert abs(n / total - prob) <= 4 * se


def test_transition_matrix_is_stochastic():
    P = transition_matrix(SimParams.from_sites(5, 0.04, 1.0), 0.7)
    assert np.allclose(P.sum(axis=1), 1)
    assert P.min() > -1e-14


def test_simulate_shapes_and_conservation():
    p = SimParams(0.1, 1.0, 6.4, 0.1)
    tr = simulate(p, np.linspace(0, 0.1, 5), rng=4, band=3)
    assert tr.snapshots.shape == (5, p.sites)
    assert tr.pair_integrals.shape == (5, p.sites, 4)
    assert np.all(tr.snapshots.sum(axis=1) == tr.initial.particle_count)
    assert np.allclose(tr.pair_integrals[:, :, 0], tr.sample_times[:, None])
    assert np.all(np.abs(tr.occupation_integrals) <= tr.sample_times[:, None] + 1e-12)


@settings(deadline=None, max_examples=10)
@given(st.integers(0, 2**31))
def test_integrals_match_replay(seed):
    # accumulators against a direct piecewise-constant integral of the replayed path
    p = SimParams.from_sites(12, 0.25, 1.0, horizon=0.5)
    tr = simulate(p, [0.0, 0.5], rng=seed, band=2, record_events=True)
    states = replay_states(tr.initial, tr.events).astype(float) * 2 - 1
    times = np.concatenate([[0.0], tr.events.micro_time, [0.5 / p.epsilon**2]])
    dt = np.diff(times) * p.epsilon**2
    occ = dt @ states
    assert np.allclose(tr.occupation_integrals[-1], occ, atol=1e-9)
    for k in (1, 2):
        pair = dt @ (states * np.roll(states, -k, axis=1))
        assert np.allclose(tr.pair_integrals[-1, :, k], pair, atol=1e-9)


def test_simulate_rejects_bad_times():
    p = SimParams(0.1, 1.0, 6.4, 0.1)
    with pytest.raises(ValueError):
        simulate(p, [0.05, 0.1])
