"""Bijection between ergodic exclusion states and tagged zero-range states.

The forward map tags the first empty site at or left of the origin as
X_0, labels empty sites consecutively from it, and records the particle
cluster sizes between consecutive empty sites:

    omega_y = X_{y+1} - X_y - 2.

Membership in the paired space requires -omega_0 - 1 <= X_0 <= 0.  On a
ring of L sites the tagged site is stored as that same non-positive
integer (its ring coordinate is x0 mod L); empty sites are labelled
0..K-1 cyclically from it and the gaps wrap, so sum(omega + 2) = L.

``replay_events`` re-runs a recorded exclusion trajectory through the
dynamic mapping, translating every swap into the unique zero-range move
it induces and checking exact integer consistency event by event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Box, Classification, FepConfig, Ring, ZrConfig, classify

__all__ = [
    "TaggedState",
    "InsufficientWindowError",
    "map_forward",
    "map_backward",
    "translate_state",
    "replay_events",
    "verify_dynamic",
    "stationary_identity_check",
]


class InsufficientWindowError(ValueError):
    """The finite window does not determine the requested mapping data."""


@dataclass(frozen=True)
class TaggedState:
    """A zero-range configuration plus the tagged empty-site position."""

    omega: ZrConfig
    x0: int

    def __post_init__(self):
        w0 = int(self.omega.sites[self.omega.index_of(0)]) if isinstance(
            self.omega.geometry, Box
        ) else int(self.omega.sites[0])
        if not -w0 - 1 <= self.x0 <= 0:
            raise ValueError(f"x0={self.x0} outside {{-omega_0-1,...,0}} with omega_0={w0}")


def map_forward(eta: FepConfig) -> TaggedState:
    """Static mapping of an ergodic configuration to (omega, X_0)."""
    if classify(eta) is not Classification.ERGODIC:
        raise ValueError("mapping is defined on the ergodic component only")
    sites = eta.sites
    g = eta.geometry
    empties = np.flatnonzero(sites == 0)
    if isinstance(g, Ring):
        L = g.length
        if len(empties) < 2:
            raise InsufficientWindowError("ring mapping needs at least two empty sites")
        if sites[0] == 0:
            x0 = 0
        else:
            x0 = int(empties[-1]) - L
        order = np.argsort((empties - (x0 % L)) % L)
        pos = empties[order]
        gaps = (np.roll(pos, -1) - pos) % L - 2
        return TaggedState(ZrConfig(gaps, Ring(len(pos))), x0)

    positions = empties + g.first
    if g.first > 0 or g.last < 0:
        raise InsufficientWindowError("box must contain the origin to resolve X_0")
    left = positions[positions <= 0]
    if len(left) == 0:
        raise InsufficientWindowError("no empty site at or left of the origin in the window")
    if len(positions) < 2 or positions[-1] <= 0:
        raise InsufficientWindowError("no empty site right of X_0: omega_0 unresolvable")
    j0 = len(left) - 1
    gaps = np.diff(positions) - 2
    x0 = int(left[-1])
    omega = ZrConfig(gaps, Box(-j0, len(gaps) - 1 - j0))
    return TaggedState(omega, x0)


def map_backward(state: TaggedState, extent=None) -> FepConfig:
    """Inverse mapping: place empty sites per the gap sequence.

    For a ring omega the result is the full ring (extent, if given, must
    match its length).  For a box omega, ``extent = (first, last)`` asks
    for the configuration on that window; the gap sequence must determine
    every site in it.
    """
    w = state.omega.sites
    if isinstance(state.omega.geometry, Ring):
        L = int((w + 2).sum())
        if extent is not None and extent != L:
            raise ValueError(f"ring rebuilt from gaps has {L} sites, extent says {extent}")
        sites = np.ones(L, dtype=np.uint8)
        pos = state.x0 + np.concatenate(([0], np.cumsum(w[:-1] + 2)))
        sites[pos % L] = 0
        return FepConfig(sites, Ring(L))

    if extent is None:
        raise ValueError("box mapping needs an explicit extent (first, last)")
    first, last = int(extent[0]), int(extent[1])
    gb = state.omega.geometry
    sites = np.ones(last - first + 1, dtype=np.uint8)

    def put(x):
        if first <= x <= last:
            sites[x - first] = 0

    x = state.x0
    put(x)
    y = 0
    # the next empty sits at least two sites away, so the window is fully
    # determined once x+2 passes its edge
    while x + 2 <= last:
        if y > gb.last:
            raise InsufficientWindowError("gap sequence ends before the window's right edge")
        x = x + int(w[y - gb.first]) + 2
        put(x)
        y += 1
    x = state.x0
    y = -1
    while x - 2 >= first:
        if y < gb.first:
            raise InsufficientWindowError("gap sequence ends before the window's left edge")
        x = x - (int(w[y - gb.first]) + 2)
        put(x)
        y -= 1
    return FepConfig(sites, Box(first, last))


def translate_state(state: TaggedState) -> TaggedState:
    """Image of a ring tagged state under a +1 lattice shift.

    Shifting the exclusion configuration right by one either moves the
    tagged site with it (x0+1 <= 0, labels unchanged) or pushes it past
    the origin, in which case the previous empty site becomes label 0 and
    all labels shift by one (omega rolls by one).
    """
    if not isinstance(state.omega.geometry, Ring):
        raise ValueError("translation rule is defined for ring states")
    w = state.omega.sites
    if state.x0 + 1 <= 0:
        return TaggedState(state.omega, state.x0 + 1)
    rolled = np.roll(w, 1)
    return TaggedState(ZrConfig(rolled, state.omega.geometry), -int(rolled[0]) - 1)


# ---------------------------------------------------------------------------
# dynamic replay
# ---------------------------------------------------------------------------


def replay_events(fep_log, eta0: FepConfig, *, full_check_every: int = 1 << 14,
                  corrupt_event: int | None = None) -> dict:
    """Replay a recorded exclusion run through the dynamic mapping.

    Checks, event by event and with exact integer arithmetic:

    * the swap is a legal exclusion move for the replayed configuration,
    * it induces exactly one legal zero-range move (occupied source), which
      is applied to an independently evolved shadow configuration,
    * the two gaps changed by the move, recomputed from the tracked empty
      site positions, equal the shadow's entries (with a periodic and
      final full re-map comparison anchoring the induction),
    * the tagged-site identity X_0(t) = X_0(0) - J_zr(-1,0)(t).

    ``corrupt_event`` flips the direction of one event to exercise the
    negative path.  Returns a dict report; ``first_violation`` is the
    index of the first failing event or None.
    """
    if not isinstance(eta0.geometry, Ring):
        raise ValueError("replay expects a ring trajectory")
    state0 = map_forward(eta0)
    L = len(eta0)
    Kn = len(state0.omega)
    eta = eta0.sites.astype(np.int8).copy()
    shadow = state0.omega.sites.astype(np.int64).copy()

    label_of = np.full(L, -1, dtype=np.int64)
    pos_of = np.empty(Kn, dtype=np.int64)
    pos = state0.x0 % L
    for y in range(Kn):
        label_of[pos] = y
        pos_of[y] = pos
        pos = (pos + int(shadow[y]) + 2) % L

    x0 = int(state0.x0)
    x0_init = x0
    j_origin = 0
    checks = {"fep_legal": True, "zr_legal": True, "gaps_match": True,
              "x0_identity": True, "full_remap": True}
    first_violation = None

    n = len(fep_log.times)
    times = np.asarray(fep_log.times)
    x0_series = np.empty(n, dtype=np.int64)

    def gap(y):
        return int((pos_of[(y + 1) % Kn] - pos_of[y]) % L) - 2

    def fail(idx, which):
        nonlocal first_violation
        checks[which] = False
        if first_violation is None:
            first_violation = idx

    for i in range(n):
        b = int(fep_log.bonds[i])
        d = int(fep_log.dirs[i])
        if corrupt_event is not None and i == corrupt_event:
            d = -d
        bp = (b + 1) % L
        bm = (b - 1) % L
        bpp = (b + 2) % L
        if d == 1:
            legal = eta[bm] == 1 and eta[b] == 1 and eta[bp] == 0
        else:
            legal = eta[b] == 0 and eta[bp] == 1 and eta[bpp] == 1
        if not legal:
            fail(i, "fep_legal")
            x0_series[i:] = x0
            break

        if d == 1:
            # empty site at b+1 moves to b: zero-range particle y-1 -> y
            y = int(label_of[bp])
            src = (y - 1) % Kn
            dst = y
            label_of[bp] = -1
            label_of[b] = y
            pos_of[y] = b
            if y == 0:
                x0 -= 1
                j_origin += 1
        else:
            # empty site at b moves to b+1: zero-range particle y -> y-1
            y = int(label_of[b])
            src = y
            dst = (y - 1) % Kn
            label_of[b] = -1
            label_of[bp] = y
            pos_of[y] = bp
            if y == 0:
                x0 += 1
                j_origin -= 1
        eta[b], eta[bp] = eta[bp], eta[b]

        if shadow[src] < 1:
            fail(i, "zr_legal")
        shadow[src] -= 1
        shadow[dst] += 1

        if gap(src) != shadow[src] or gap(dst) != shadow[dst]:
            fail(i, "gaps_match")
        if x0 != x0_init - j_origin:
            fail(i, "x0_identity")
        x0_series[i] = x0

        if (i + 1) % full_check_every == 0:
            order = np.argsort((pos_of - pos_of[0]) % L)
            if not np.array_equal(order, np.arange(Kn)):
                fail(i, "full_remap")
            gaps_now = (pos_of[(np.arange(Kn) + 1) % Kn] - pos_of) % L - 2
            if not np.array_equal(gaps_now, shadow):
                fail(i, "full_remap")

    gaps_now = (pos_of[(np.arange(Kn) + 1) % Kn] - pos_of) % L - 2
    if not np.array_equal(gaps_now, shadow) or int(shadow.sum()) + 2 * Kn != L:
        fail(n, "full_remap")

    return {
        "pass": first_violation is None,
        "first_violation": first_violation,
        "checks": checks,
        "times": times,
        "x0_series": x0_series,
        "final_omega": ZrConfig(shadow, Ring(Kn)),
        "final_x0": x0,
        "zr_origin_current": j_origin,
        "n_events": n,
    }


def verify_dynamic(fep_log, eta0: FepConfig, **kwargs) -> dict:
    """Pass/fail report of the dynamic-mapping consistency of a run.

    The log must carry the full (untruncated) event record.
    """
    if getattr(fep_log, "truncated", False):
        raise ValueError("verify_dynamic needs the complete event record")
    rep = replay_events(fep_log, eta0, **kwargs)
    return {
        "pass": rep["pass"],
        "first_violation": rep["first_violation"],
        "checks": rep["checks"],
        "n_events": rep["n_events"],
    }


# ---------------------------------------------------------------------------
# stationary identity
# ---------------------------------------------------------------------------


def _chi2_pvalue(counts: np.ndarray, probs: np.ndarray) -> float:
    """Pearson chi-square p-value with small expected bins pooled."""
    from scipy.stats import chi2

    n = counts.sum()
    order = np.argsort(probs)[::-1]
    counts = counts[order]
    expected = probs[order] * n
    # pool trailing bins until every expected count is >= 5
    while len(expected) > 2 and expected[-1] < 5:
        expected[-2] += expected[-1]
        counts[-2] += counts[-1]
        expected = expected[:-1]
        counts = counts[:-1]
    stat = float(((counts - expected) ** 2 / expected).sum())
    dof = len(expected) - 1
    return float(chi2.sf(stat, dof))


def _cluster_law_tables(rho: float, kmax: int):
    from .measures import theory

    a = theory(rho).a
    k = np.arange(kmax)
    geo = a**k * (1 - a)
    tilted = (k + 2) * a**k * rho * (1 - a) ** 2
    geo = np.append(geo, 1.0 - geo.sum())
    tilted = np.append(tilted, 1.0 - tilted.sum())
    return geo, tilted


def stationary_identity_check(rho: float, window: int, replicas: int,
                              rng: np.random.Generator) -> dict:
    """Statistical verification that the stationary laws commute with the map.

    Forward direction: exact stationary window samples are pushed through
    ``map_forward``; the origin cluster must follow the size-biased law and
    an off-origin cluster the geometric law.  Backward direction: tagged
    zero-range samples are pushed through ``map_backward`` and compared to
    the exact window marginal.  Chi-square p-values above 1e-2 pass.
    """
    from .measures import (
        _GeomStream,
        sample_window_grand,
        sample_zr_distorted,
        theory,
        window_prob,
    )

    m = int(window)
    kmax = 12
    origin_counts = np.zeros(kmax + 1, dtype=np.int64)
    off_counts = np.zeros(kmax + 1, dtype=np.int64)
    skipped = 0
    for _ in range(replicas):
        ws = sample_window_grand(rho, m, rng)
        try:
            st = map_forward(ws.config)
        except InsufficientWindowError:
            skipped += 1
            continue
        g = st.omega.geometry
        w0 = int(st.omega.sites[-g.first])
        origin_counts[min(w0, kmax)] += 1
        if g.last >= 2:
            off_counts[min(int(st.omega.sites[2 - g.first]), kmax)] += 1
        else:
            skipped += 1

    geo, tilted = _cluster_law_tables(rho, kmax)
    p_origin = _chi2_pvalue(origin_counts.astype(float), tilted)
    p_off = _chi2_pvalue(off_counts.astype(float), geo)

    # backward: build eta = Pi^{-1}(omega, X0) with omega ~ tilted at the
    # origin and geometric elsewhere, then compare 3-site window stats
    a = theory(rho).a
    ell = 3
    pats = np.zeros(2**ell, dtype=np.int64)
    stream = _GeomStream(rng, a)
    n_labels = m + 2
    for _ in range(replicas):
        w0, x0 = sample_zr_distorted(rho, rng)
        gaps = np.empty(2 * n_labels + 1, dtype=np.int64)
        for i in range(len(gaps)):
            gaps[i] = stream.next()
        gaps[n_labels] = w0
        st = TaggedState(ZrConfig(gaps, Box(-n_labels, n_labels)), x0)
        eta = map_backward(st, extent=(-m, m))
        s = eta.sites[m - 1 : m + 2]
        pats[(int(s[0]) << 2) | (int(s[1]) << 1) | int(s[2])] += 1
    probs = np.array(
        [window_prob(rho, [b >> 2 & 1, b >> 1 & 1, b & 1]) for b in range(2**ell)]
    )
    keep = probs > 0
    ok_support = bool(pats[~keep].sum() == 0)
    p_window = _chi2_pvalue(pats[keep].astype(float), probs[keep])

    report = {
        "p_origin_cluster": p_origin,
        "p_off_origin_cluster": p_off,
        "p_window_marginal": p_window,
        "support_ok": ok_support,
        "skipped": skipped,
    }
    report["pass"] = bool(
        ok_support and min(p_origin, p_off, p_window) > 1e-2
    )
    return report
