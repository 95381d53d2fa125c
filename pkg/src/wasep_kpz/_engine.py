"""Numba kernels for the Gillespie event loop.

Bond ``i`` joins site ``i`` to site ``(i + 1) % L``. A bond is
right-enabled when ``eta[i] = 1, eta[i+1] = 0`` (jump i -> i+1, rate
``1 + a``) and left-enabled when ``eta[i] = 0, eta[i+1] = 1`` (jump
i+1 -> i, rate ``1 - a``), where ``a = sqrt(eps) * gamma``. Both sets
are kept as index arrays with position maps for O(1) updates.

Time integrals of ``xi(x)`` and ``xi(x) xi(x+k)`` (``1 <= k <= band``)
are accumulated lazily in microscopic time: each entry remembers the
clock at which it was last brought up to date and is flushed only when
one of its sites flips.
"""

import numpy as np
from numba import njit

RIGHT = 0
LEFT = 1


@njit(cache=True)
def _insert(members, pos, count, b):
    members[count] = b
    pos[b] = count
    return count + 1


@njit(cache=True)
def _remove(members, pos, count, b):
    k = pos[b]
    last = members[count - 1]
    members[k] = last
    pos[last] = k
    pos[b] = -1
    return count - 1


@njit(cache=True)
def build_sets(eta, rset, rpos, lset, lpos):
    L = eta.shape[0]
    nr = 0
    nl = 0
    for b in range(L):
        rpos[b] = -1
        lpos[b] = -1
    for b in range(L):
        c = (b + 1) % L
        if eta[b] == 1 and eta[c] == 0:
            nr = _insert(rset, rpos, nr, b)
        elif eta[b] == 0 and eta[c] == 1:
            nl = _insert(lset, lpos, nl, b)
    return nr, nl


@njit(cache=True)
def _refresh_bond(eta, b, rset, rpos, nr, lset, lpos, nl):
    L = eta.shape[0]
    c = (b + 1) % L
    want_r = eta[b] == 1 and eta[c] == 0
    want_l = eta[b] == 0 and eta[c] == 1
    if rpos[b] >= 0 and not want_r:
        nr = _remove(rset, rpos, nr, b)
    elif rpos[b] < 0 and want_r:
        nr = _insert(rset, rpos, nr, b)
    if lpos[b] >= 0 and not want_l:
        nl = _remove(lset, lpos, nl, b)
    elif lpos[b] < 0 and want_l:
        nl = _insert(lset, lpos, nl, b)
    return nr, nl


@njit(cache=True)
def _flush_site(eta, s, clock, occ, occ_t, pair, pair_t, band):
    L = eta.shape[0]
    xs = 2.0 * eta[s] - 1.0
    occ[s] += xs * (clock - occ_t[s])
    occ_t[s] = clock
    for k in range(1, band + 1):
        # pair (s, s + k)
        j = (s + k) % L
        pair[s, k] += xs * (2.0 * eta[j] - 1.0) * (clock - pair_t[s, k])
        pair_t[s, k] = clock
        # pair (s - k, s)
        i = (s - k) % L
        pair[i, k] += (2.0 * eta[i] - 1.0) * xs * (clock - pair_t[i, k])
        pair_t[i, k] = clock


@njit(cache=True)
def flush_all(eta, clock, occ, occ_t, pair, pair_t, band):
    L = eta.shape[0]
    for s in range(L):
        xs = 2.0 * eta[s] - 1.0
        occ[s] += xs * (clock - occ_t[s])
        occ_t[s] = clock
        for k in range(1, band + 1):
            j = (s + k) % L
            pair[s, k] += xs * (2.0 * eta[j] - 1.0) * (clock - pair_t[s, k])
            pair_t[s, k] = clock


@njit(cache=True)
def run(eta, clock, t_end, a, rset, rpos, lset, lpos, nr, nl,
        uniforms, track, occ, occ_t, pair, pair_t, band,
        log, ev_src, ev_dir, ev_time, n_ev):
    """Advance until ``t_end`` or until the uniforms run out.

    Returns ``(clock, nr, nl, n_ev, used, finished)``. Two uniforms are
    consumed per attempted event.
    """
    L = eta.shape[0]
    rate_r = 1.0 + a
    rate_l = 1.0 - a
    used = 0
    n_u = uniforms.shape[0]
    while True:
        total = rate_r * nr + rate_l * nl
        if total <= 0.0:
            return t_end, nr, nl, n_ev, used, True
        if used + 2 > n_u:
            return clock, nr, nl, n_ev, used, False
        u0 = uniforms[used]
        u1 = uniforms[used + 1]
        used += 2
        dt = -np.log1p(-u0) / total
        if clock + dt >= t_end:
            # memoryless: the pending holding time is discarded
            return t_end, nr, nl, n_ev, used, True
        clock += dt
        pick = u1 * total
        if pick < rate_r * nr:
            k = int(pick / rate_r)
            if k >= nr:
                k = nr - 1
            b = rset[k]
            src = b
            direction = RIGHT
        else:
            k = int((pick - rate_r * nr) / rate_l)
            if k >= nl:
                k = nl - 1
            b = lset[k]
            src = (b + 1) % L
            direction = LEFT
        c = (b + 1) % L
        if track:
            _flush_site(eta, b, clock, occ, occ_t, pair, pair_t, band)
            _flush_site(eta, c, clock, occ, occ_t, pair, pair_t, band)
        tmp = eta[b]
        eta[b] = eta[c]
        eta[c] = tmp
        nr, nl = _refresh_bond(eta, (b - 1) % L, rset, rpos, nr, lset, lpos, nl)
        nr, nl = _refresh_bond(eta, b, rset, rpos, nr, lset, lpos, nl)
        nr, nl = _refresh_bond(eta, c, rset, rpos, nr, lset, lpos, nl)
        if log:
            ev_src[n_ev] = src
            ev_dir[n_ev] = direction
            ev_time[n_ev] = clock
        n_ev += 1


@njit(cache=True)
def transition_counts(eta0, a, duration, uniforms, runs):
    """Final-state histogram of ``runs`` independent copies started at ``eta0``.

    States are encoded as ``sum eta[i] << i``.
    """
    L = eta0.shape[0]
    counts = np.zeros(2 ** L, dtype=np.int64)
    eta = np.empty(L, dtype=np.int8)
    rset = np.empty(L, dtype=np.int64)
    rpos = np.empty(L, dtype=np.int64)
    lset = np.empty(L, dtype=np.int64)
    lpos = np.empty(L, dtype=np.int64)
    occ = np.zeros(L)
    occ_t = np.zeros(L)
    pair = np.zeros((L, 1))
    pair_t = np.zeros((L, 1))
    ev_src = np.zeros(1, dtype=np.int64)
    ev_dir = np.zeros(1, dtype=np.int8)
    ev_time = np.zeros(1)
    offset = 0
    per_run = uniforms.shape[0] // runs
    for r in range(runs):
        for i in range(L):
            eta[i] = eta0[i]
        nr, nl = build_sets(eta, rset, rpos, lset, lpos)
        chunk = uniforms[offset:offset + per_run]
        offset += per_run
        out = run(eta, 0.0, duration, a, rset, rpos, lset, lpos, nr, nl,
                  chunk, False, occ, occ_t, pair, pair_t, 0,
                  False, ev_src, ev_dir, ev_time, 0)
        if not out[5]:
            return counts, r
        code = 0
        for i in range(L):
            code += int(eta[i]) << i
        counts[code] += 1
    return counts, runs
