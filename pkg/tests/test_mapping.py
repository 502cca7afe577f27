import itertools
import math
from collections import Counter

import numpy as np
import pytest

from fepkit import (
    Box,
    Classification,
    FepConfig,
    InsufficientWindowError,
    RateSchedule,
    Ring,
    TaggedState,
    ZrConfig,
    ZrSimulation,
    classify,
    map_backward,
    map_forward,
    run_fep,
    sample_canonical_ring,
    sample_zr_geometric,
    stationary_identity_check,
    tagged_empty_site,
    theory,
    translate_state,
    verify_dynamic,
)
from fepkit.mapping import replay_events
from fepkit.seeding import seed_split


def fep(bits, geometry):
    return FepConfig(np.array(bits, dtype=np.uint8), geometry)


class TestStaticMapping:
    def test_worked_example(self):
        eta = fep([0, 1, 1, 0, 1, 1, 1, 0], Box(-3, 4))
        st = map_forward(eta)
        g = st.omega.geometry
        assert st.x0 == 0
        assert st.omega.sites[0 - g.first] == 2  # next empty at 4
        assert st.omega.sites[-1 - g.first] == 1  # previous empty at -3
        back = map_backward(st, extent=(-3, 4))
        assert np.array_equal(back.sites, eta.sites)

    def test_adjacent_empties_two_apart_give_zero_gap(self):
        st = map_forward(fep([0, 1, 0], Box(-1, 1)))
        assert st.x0 == -1
        assert st.omega.sites[0 - st.omega.geometry.first] == 0

    def test_all_gaps_zero_gives_alternating(self):
        st = TaggedState(ZrConfig(np.zeros(5, dtype=np.int64), Box(-2, 2)), 0)
        eta = map_backward(st, extent=(-2, 2))
        assert eta.sites.tolist() == [0, 1, 0, 1, 0]  # empties at even sites

    def test_ring_gap_sum_by_enumeration(self):
        L, n = 10, 7
        for bits in itertools.product((0, 1), repeat=L):
            cfg = fep(bits, Ring(L))
            if sum(bits) != n or classify(cfg) is not Classification.ERGODIC:
                continue
            st = map_forward(cfg)
            assert int((st.omega.sites + 2).sum()) == L
            assert -int(st.omega.sites[0]) - 1 <= st.x0 <= 0

    def test_roundtrip_exhaustive_small_rings(self):
        for L in range(4, 13):
            for bits in itertools.product((0, 1), repeat=L):
                cfg = fep(bits, Ring(L))
                if classify(cfg) is not Classification.ERGODIC:
                    continue
                if int(np.sum(cfg.sites == 0)) < 2:
                    continue
                st = map_forward(cfg)
                assert np.array_equal(map_backward(st).sites, cfg.sites)

    def test_roundtrip_random_canonical(self):
        rng = np.random.default_rng(60)
        for _ in range(2000):
            cfg = sample_canonical_ring(64, 48, rng)
            st = map_forward(cfg)
            assert np.array_equal(map_backward(st).sites, cfg.sites)
            rebuilt = map_forward(map_backward(st))
            assert rebuilt.x0 == st.x0
            assert np.array_equal(rebuilt.omega.sites, st.omega.sites)

    def test_translation_covariance_exhaustive(self):
        for bits in itertools.product((0, 1), repeat=10):
            cfg = fep(bits, Ring(10))
            if classify(cfg) is not Classification.ERGODIC:
                continue
            if int(np.sum(cfg.sites == 0)) < 2:
                continue
            st = map_forward(cfg)
            shifted = fep(np.roll(cfg.sites, 1), Ring(10))
            expected = map_forward(shifted)
            got = translate_state(st)
            assert got.x0 == expected.x0
            assert np.array_equal(got.omega.sites, expected.omega.sites)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            map_forward(fep([1, 0, 0, 1], Box(0, 3)))  # not ergodic
        with pytest.raises(InsufficientWindowError):
            map_forward(fep([1, 1, 1, 1, 0, 1], Ring(6)))  # one empty site on ring
        with pytest.raises(InsufficientWindowError):
            map_forward(fep([1, 1, 1, 0], Box(-2, 1)))  # no empty left of origin
        with pytest.raises(InsufficientWindowError):
            map_forward(fep([1, 0, 1, 1], Box(-2, 1)))  # no empty right of X_0
        with pytest.raises(ValueError):
            TaggedState(ZrConfig(np.array([1, 2]), Box(0, 1)), -3)


class TestDynamicReplay:
    def run_and_log(self, L=256, n=192, N=32, t=0.05, seed=1234):
        rng = np.random.default_rng(seed)
        eta0 = sample_canonical_ring(L, n, rng)
        sched = RateSchedule(1, -math.inf, N)
        log = run_fep(eta0, sched, t, seed=seed_split(seed, 9), record_capacity=2_000_000)
        assert not log.truncated
        return eta0, log

    def test_empty_log_passes(self):
        eta0 = fep([0, 1] * 8, Ring(16))
        log = run_fep(eta0, RateSchedule(1, -math.inf, 8), 0.1, seed=1, record_capacity=10)
        rep = verify_dynamic(log, eta0)
        assert rep["pass"] and rep["n_events"] == 0

    def test_replay_passes_and_identity_holds(self):
        eta0, log = self.run_and_log()
        rep = replay_events(log, eta0, full_check_every=1 << 10)
        assert rep["pass"], rep
        assert all(rep["checks"].values())
        # the tagged empty site follows minus the origin bond current exactly
        x0_0 = map_forward(eta0).x0
        assert rep["final_x0"] == x0_0 - rep["zr_origin_current"]

    def test_corrupted_event_detected(self):
        eta0, log = self.run_and_log(seed=77)
        rep = replay_events(log, eta0, corrupt_event=500)
        assert not rep["pass"]
        assert rep["first_violation"] == 500

    def test_weakly_asymmetric_replay(self):
        rng = np.random.default_rng(88)
        eta0 = sample_canonical_ring(128, 96, rng)
        log = run_fep(eta0, RateSchedule(1, 1.5, 16), 0.1, seed=5, record_capacity=1_000_000)
        assert verify_dynamic(log, eta0)["pass"]

    def test_tagged_empty_site_series(self):
        eta0, log = self.run_and_log(seed=99)
        times, xs = tagged_empty_site(log, eta0)
        assert len(times) == len(xs) == log.n_events
        # increments are single steps
        assert set(np.unique(np.abs(np.diff(xs)))) <= {0, 1}

    def test_requires_complete_record(self):
        rng = np.random.default_rng(101)
        eta0 = sample_canonical_ring(64, 48, rng)
        log = run_fep(eta0, RateSchedule(1, -math.inf, 16), 0.05, seed=2, record_capacity=10)
        assert log.truncated
        with pytest.raises(ValueError):
            verify_dynamic(log, eta0)


class TestStationaryIdentity:
    def test_identity_checks_pass(self):
        rng = np.random.default_rng(424242)
        rep = stationary_identity_check(0.75, 30, 30_000, rng)
        assert rep["pass"], rep
        assert rep["support_ok"]
        assert min(rep["p_origin_cluster"], rep["p_off_origin_cluster"], rep["p_window_marginal"]) > 0.01

    def test_omega_marginal_not_stationary_without_tag(self):
        # evolving the zero-range marginal alone from the tilted state loses
        # the origin tilt: the origin law drifts towards the geometric one
        rho, K, t = 0.75, 32, 0.5
        a = theory(rho).a
        sched = RateSchedule(1, -math.inf, 8)
        rng = np.random.default_rng(31337)
        n = 20_000
        kmax = 10
        at0 = np.zeros(kmax + 1)
        att = np.zeros(kmax + 1)
        from fepkit.measures import sample_zr_distorted

        for i in range(n):
            w = sample_zr_geometric(rho, K, rng).sites.copy()
            w0, _ = sample_zr_distorted(rho, rng)
            w[0] = w0
            at0[min(w0, kmax)] += 1
            sim = ZrSimulation(ZrConfig(w, Ring(K)), sched, seed_split(999, i))
            sim.run_until(t)
            att[min(int(sim.w[0]), kmax)] += 1
        k = np.arange(kmax)
        geo = a**k * (1 - a)
        geo = np.append(geo, 1 - geo.sum())
        tilt = (k + 2) * a**k * rho * (1 - a) ** 2
        tilt = np.append(tilt, 1 - tilt.sum())
        tv_geo_0 = 0.5 * np.abs(at0 / n - geo).sum()
        tv_geo_t = 0.5 * np.abs(att / n - geo).sum()
        tv_tilt_0 = 0.5 * np.abs(at0 / n - tilt).sum()
        tv_tilt_t = 0.5 * np.abs(att / n - tilt).sum()
        assert tv_geo_0 > 0.15                 # starts tilted
        assert tv_geo_t < tv_geo_0 / 3         # relaxes towards geometric
        assert tv_tilt_t > 10 * tv_tilt_0      # and away from the tilted law
        assert tv_tilt_t > 0.12
