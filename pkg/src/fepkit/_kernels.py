"""JIT-compiled event loops for the exclusion and zero-range engines.

All kernels draw randomness from an in-kernel xoshiro256++ stream seeded
through splitmix64, so a 64-bit seed fully determines a trajectory
(byte-identical reruns).  State lives in plain arrays owned by the Python
wrappers in :mod:`fepkit.dynamics`:

* ``eta`` / ``w``            site occupations,
* ``mem*/pos*``              indexed sets of jump-eligible sites (O(1)
                             add/remove/uniform-pick),
* ``imeta`` / ``fmeta``      integer and float scalar state,
* ``cur``                    signed per-bond crossing counts.

Time is macroscopic: the schedule's rates carry the N^2 factor, and the
exponential clocks are restarted at observation times (memoryless, so
stopping at ``t_target`` and resuming is exact in law).

Optional per-event accumulators integrate piecewise-constant observables
exactly between events: the quadratic-variation integrand and the local
Boltzmann-Gibbs sum, both maintained incrementally and refreshed from
scratch every ``check_mask + 1`` events (which also cross-validates the
incremental set bookkeeping).
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64

# imeta slots, FEP kernel
I_NR, I_NL, I_TOTAL, I_FAILS = 0, 1, 2, 3
# imeta slots, ZR kernel
Z_NA, Z_TOTAL, Z_J, Z_FAILS = 0, 1, 2, 3
# imeta slots, coupled kernel
C_NA, C_TOTAL, C_DISC, C_DISC_MIN, C_DISC_MAX = 0, 1, 2, 3, 4

TWO53 = 9007199254740992.0


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (U64(64) - k))


@njit(cache=True)
def _splitmix64(state):
    state = state + U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    z = z ^ (z >> U64(31))
    return state, z


@njit(cache=True)
def seed_state(seed):
    """Expand a 64-bit seed into an xoshiro256++ state vector."""
    s = np.empty(4, dtype=np.uint64)
    st = U64(seed)
    for i in range(4):
        st, z = _splitmix64(st)
        s[i] = z
    if s[0] | s[1] | s[2] | s[3] == U64(0):
        s[0] = U64(0x9E3779B97F4A7C15)
    return s


@njit(cache=True, inline="always")
def _xo_next(s):
    r = _rotl(s[0] + s[3], U64(23)) + s[0]
    t = s[1] << U64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], U64(45))
    return r


@njit(cache=True, inline="always")
def _xo_u01(s):
    # uniform on the open interval (0, 1): log() is finite and nonzero,
    # so waiting times are strictly positive and event times increase
    return (np.float64(_xo_next(s) >> U64(11)) + 0.5) * (1.0 / TWO53)


# ---------------------------------------------------------------------------
# indexed sets
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _set_add(mem, pos, n, x):
    mem[n] = x
    pos[x] = n
    return n + 1


@njit(cache=True, inline="always")
def _set_remove(mem, pos, n, x):
    i = pos[x]
    last = mem[n - 1]
    mem[i] = last
    pos[last] = i
    pos[x] = -1
    return n - 1


# ---------------------------------------------------------------------------
# facilitated exclusion
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _edge_rates(eta, y, L):
    """Jump constraints at ring edge (y, y+1)."""
    ym1 = y - 1 if y > 0 else L - 1
    yp1 = y + 1 if y + 1 < L else 0
    yp2 = yp1 + 1 if yp1 + 1 < L else 0
    cr = 1 if eta[ym1] == 1 and eta[y] == 1 and eta[yp1] == 0 else 0
    cl = 1 if eta[y] == 0 and eta[yp1] == 1 and eta[yp2] == 1 else 0
    return cr, cl


@njit(cache=True)
def fep_init_sets(eta, mem_r, pos_r, mem_l, pos_l):
    L = eta.shape[0]
    pos_r[:] = -1
    pos_l[:] = -1
    nr = 0
    nl = 0
    for y in range(L):
        cr, cl = _edge_rates(eta, y, L)
        if cr:
            nr = _set_add(mem_r, pos_r, nr, y)
        if cl:
            nl = _set_add(mem_l, pos_l, nl, y)
    return nr, nl


@njit(cache=True, inline="always")
def _pattern(eta, xc, r, L):
    idx = 0
    for i in range(-r, r + 1):
        z = xc + i
        if z < 0:
            z += L
        elif z >= L:
            z -= L
        idx = (idx << 1) | eta[z]
    return idx


@njit(cache=True)
def _fep_recompute(eta, pos_r, pos_l, nr, nl, cp, cq, qv_w, bg_on, bg_w, bg_table, bg_r):
    """Ground-truth pass: set consistency flag plus fresh accumulator sums."""
    L = eta.shape[0]
    bad = 0
    nr2 = 0
    nl2 = 0
    s_qv = 0.0
    s_bg = 0.0
    for y in range(L):
        cr, cl = _edge_rates(eta, y, L)
        if cr:
            nr2 += 1
            s_qv += cp * qv_w[y]
            if pos_r[y] < 0:
                bad = 1
        elif pos_r[y] >= 0:
            bad = 1
        if cl:
            nl2 += 1
            s_qv += cq * qv_w[y]
            if pos_l[y] < 0:
                bad = 1
        elif pos_l[y] >= 0:
            bad = 1
        if bg_on:
            s_bg += bg_w[y] * bg_table[_pattern(eta, y, bg_r, L)]
    if nr2 != nr or nl2 != nl:
        bad = 1
    return bad, s_qv, s_bg


@njit(cache=True, fastmath=True)
def fep_advance(
    eta,
    mem_r,
    pos_r,
    mem_l,
    pos_l,
    imeta,
    fmeta,
    rng,
    p,
    q,
    t_target,
    max_steps,
    cur,
    ev_t,
    ev_bond,
    ev_dir,
    rec_meta,
    qv_on,
    qv_w,
    cp,
    cq,
    qv_state,
    bg_on,
    bg_w,
    bg_table,
    bg_r,
    bg_state,
    check_mask,
):
    """Run the exclusion chain until ``t_target`` or ``max_steps`` events.

    Returns the number of events executed in this call.  ``rec_meta[0]``
    is the number of recorded events so far; recording stops silently at
    the capacity of ``ev_t``.
    """
    L = eta.shape[0]
    t = fmeta[0]
    nr = imeta[I_NR]
    nl = imeta[I_NL]
    total = imeta[I_TOTAL]
    fails = imeta[I_FAILS]
    nrec = rec_meta[0]
    cap = ev_t.shape[0]
    s_qv = qv_state[0]
    a_qv = qv_state[1]
    s_bg = bg_state[0]
    a_bg = bg_state[1]
    done = 0

    while True:
        if max_steps >= 0 and done >= max_steps:
            break
        rate = p * nr + q * nl
        if rate <= 0.0:
            dt = t_target - t
            if qv_on:
                a_qv += s_qv * dt
            if bg_on:
                a_bg += s_bg * dt
            t = t_target
            break
        dt = -np.log(_xo_u01(rng)) / rate
        if t + dt > t_target:
            dt = t_target - t
            if qv_on:
                a_qv += s_qv * dt
            if bg_on:
                a_bg += s_bg * dt
            t = t_target
            break
        if qv_on:
            a_qv += s_qv * dt
        if bg_on:
            a_bg += s_bg * dt
        t += dt

        u = _xo_u01(rng) * rate
        if q == 0.0 or u < p * nr:
            i = np.int64(u / p)
            if i >= nr:
                i = nr - 1
            x = mem_r[i]
            d = 1
        else:
            i = np.int64((u - p * nr) / q)
            if i >= nl:
                i = nl - 1
            x = mem_l[i]
            d = -1
        xp = x + 1 if x + 1 < L else 0

        old_bg = 0.0
        if bg_on:
            for xx in range(x - bg_r, x + bg_r + 2):
                z = xx
                if z < 0:
                    z += L
                elif z >= L:
                    z -= L
                old_bg += bg_w[z] * bg_table[_pattern(eta, z, bg_r, L)]

        tmp = eta[x]
        eta[x] = eta[xp]
        eta[xp] = tmp

        for k in range(5):
            y = x - 2 + k
            if y < 0:
                y += L
            elif y >= L:
                y -= L
            cr, cl = _edge_rates(eta, y, L)
            in_r = pos_r[y] >= 0
            if cr == 1 and not in_r:
                nr = _set_add(mem_r, pos_r, nr, y)
                s_qv += cp * qv_w[y]
            elif cr == 0 and in_r:
                nr = _set_remove(mem_r, pos_r, nr, y)
                s_qv -= cp * qv_w[y]
            in_l = pos_l[y] >= 0
            if cl == 1 and not in_l:
                nl = _set_add(mem_l, pos_l, nl, y)
                s_qv += cq * qv_w[y]
            elif cl == 0 and in_l:
                nl = _set_remove(mem_l, pos_l, nl, y)
                s_qv -= cq * qv_w[y]

        if bg_on:
            new_bg = 0.0
            for xx in range(x - bg_r, x + bg_r + 2):
                z = xx
                if z < 0:
                    z += L
                elif z >= L:
                    z -= L
                new_bg += bg_w[z] * bg_table[_pattern(eta, z, bg_r, L)]
            s_bg += new_bg - old_bg

        cur[x] += d
        if nrec < cap:
            ev_t[nrec] = t
            ev_bond[nrec] = x
            ev_dir[nrec] = d
            nrec += 1
        total += 1
        done += 1

        if total & check_mask == 0:
            bad, s_qv2, s_bg2 = _fep_recompute(
                eta, pos_r, pos_l, nr, nl, cp, cq, qv_w, bg_on, bg_w, bg_table, bg_r
            )
            fails += bad
            s_qv = s_qv2
            s_bg = s_bg2

    fmeta[0] = t
    imeta[I_NR] = nr
    imeta[I_NL] = nl
    imeta[I_TOTAL] = total
    imeta[I_FAILS] = fails
    rec_meta[0] = nrec
    qv_state[0] = s_qv
    qv_state[1] = a_qv
    bg_state[0] = s_bg
    bg_state[1] = a_bg
    return done


# ---------------------------------------------------------------------------
# constant-rate zero-range
# ---------------------------------------------------------------------------


@njit(cache=True)
def zr_init_sets(w, mem_a, pos_a):
    K = w.shape[0]
    pos_a[:] = -1
    na = 0
    for y in range(K):
        if w[y] > 0:
            na = _set_add(mem_a, pos_a, na, y)
    return na


@njit(cache=True, fastmath=True)
def zr_advance(
    w,
    mem_a,
    pos_a,
    imeta,
    fmeta,
    rng,
    p,
    q,
    t_target,
    max_steps,
    cur,
    ev_t,
    ev_bond,
    ev_dir,
    rec_meta,
    track_bond,
    drift,
    sup_state,
):
    """Constant-rate zero-range chain on a ring.

    Every occupied site fires right at rate p and left at rate q.  When
    ``track_bond >= 0`` the kernel maintains the running supremum of the
    squared centered current through that bond (centering slope
    ``drift``); the supremum of |J - drift*t| over an inter-event interval
    is attained at its endpoints, so both endpoints are probed.
    """
    K = w.shape[0]
    t = fmeta[0]
    na = imeta[Z_NA]
    total = imeta[Z_TOTAL]
    J = imeta[Z_J]
    nrec = rec_meta[0]
    cap = ev_t.shape[0]
    sup2 = sup_state[0]
    rate_site = p + q
    done = 0

    while True:
        if max_steps >= 0 and done >= max_steps:
            break
        rate = rate_site * na
        if rate <= 0.0:
            t = t_target
            break
        dt = -np.log(_xo_u01(rng)) / rate
        if t + dt > t_target:
            t = t_target
            break
        t += dt
        if track_bond >= 0:
            jb = J - drift * t
            if jb * jb > sup2:
                sup2 = jb * jb
        u = _xo_u01(rng) * rate
        i = np.int64(u / rate_site)
        if i >= na:
            i = na - 1
        y = mem_a[i]
        rem = u - i * rate_site
        if q == 0.0 or rem < p:
            d = 1
            tgt = y + 1 if y + 1 < K else 0
            bond = y
        else:
            d = -1
            tgt = y - 1 if y > 0 else K - 1
            bond = tgt
        w[y] -= 1
        if w[y] == 0:
            na = _set_remove(mem_a, pos_a, na, y)
        if w[tgt] == 0:
            na = _set_add(mem_a, pos_a, na, tgt)
        w[tgt] += 1
        cur[bond] += d
        if track_bond >= 0 and bond == track_bond:
            J += d
            jb = J - drift * t
            if jb * jb > sup2:
                sup2 = jb * jb
        if nrec < cap:
            ev_t[nrec] = t
            ev_bond[nrec] = bond
            ev_dir[nrec] = d
            nrec += 1
        total += 1
        done += 1

    if track_bond >= 0:
        jb = J - drift * t
        if jb * jb > sup2:
            sup2 = jb * jb
    fmeta[0] = t
    imeta[Z_NA] = na
    imeta[Z_TOTAL] = total
    imeta[Z_J] = J
    rec_meta[0] = nrec
    sup_state[0] = sup2
    return done


# ---------------------------------------------------------------------------
# basic coupling of two zero-range chains
# ---------------------------------------------------------------------------


@njit(cache=True)
def coupled_init(w1, w2, mem_a, pos_a):
    K = w1.shape[0]
    pos_a[:] = -1
    na = 0
    disc = 0
    for y in range(K):
        if w1[y] > 0 or w2[y] > 0:
            na = _set_add(mem_a, pos_a, na, y)
        dd = w1[y] - w2[y]
        disc += dd if dd >= 0 else -dd
    return na, disc


@njit(cache=True, fastmath=True)
def coupled_advance(
    w1,
    w2,
    mem_a,
    pos_a,
    imeta,
    fmeta,
    rng,
    p,
    q,
    t_target,
    max_steps,
    cur1,
    cur2,
):
    """Shared-clock (basic) coupling of two constant-rate zero-range chains.

    Each site carries one Poisson clock of rate p+q; when it rings, every
    configuration with a particle there performs the same jump.  The
    discrepancy count sum |w1 - w2| is maintained exactly along with its
    running min and max.
    """
    K = w1.shape[0]
    t = fmeta[0]
    na = imeta[C_NA]
    total = imeta[C_TOTAL]
    disc = imeta[C_DISC]
    dmin = imeta[C_DISC_MIN]
    dmax = imeta[C_DISC_MAX]
    rate_site = p + q
    done = 0

    while True:
        if max_steps >= 0 and done >= max_steps:
            break
        rate = rate_site * na
        if rate <= 0.0:
            t = t_target
            break
        dt = -np.log(_xo_u01(rng)) / rate
        if t + dt > t_target:
            t = t_target
            break
        t += dt
        u = _xo_u01(rng) * rate
        i = np.int64(u / rate_site)
        if i >= na:
            i = na - 1
        y = mem_a[i]
        rem = u - i * rate_site
        if q == 0.0 or rem < p:
            d = 1
            tgt = y + 1 if y + 1 < K else 0
            bond = y
        else:
            d = -1
            tgt = y - 1 if y > 0 else K - 1
            bond = tgt
        dd = w1[y] - w2[y]
        old = (dd if dd >= 0 else -dd)
        dd = w1[tgt] - w2[tgt]
        old += (dd if dd >= 0 else -dd)
        if w1[y] > 0:
            w1[y] -= 1
            w1[tgt] += 1
            cur1[bond] += d
        if w2[y] > 0:
            w2[y] -= 1
            w2[tgt] += 1
            cur2[bond] += d
        dd = w1[y] - w2[y]
        new = (dd if dd >= 0 else -dd)
        dd = w1[tgt] - w2[tgt]
        new += (dd if dd >= 0 else -dd)
        disc += new - old
        if disc < dmin:
            dmin = disc
        if disc > dmax:
            dmax = disc
        if w1[y] == 0 and w2[y] == 0:
            na = _set_remove(mem_a, pos_a, na, y)
        if pos_a[tgt] < 0:
            na = _set_add(mem_a, pos_a, na, tgt)
        total += 1
        done += 1

    fmeta[0] = t
    imeta[C_NA] = na
    imeta[C_TOTAL] = total
    imeta[C_DISC] = disc
    imeta[C_DISC_MIN] = dmin
    imeta[C_DISC_MAX] = dmax
    return done
