import itertools
import math
from collections import Counter, defaultdict

import numpy as np
import pytest
from scipy import stats

from fepkit import (
    Classification,
    FepConfig,
    FepSimulation,
    RateSchedule,
    Ring,
    ZrConfig,
    ZrSimulation,
    classify,
    current,
    jump_rates,
    run_coupled,
    run_fep,
    run_zr,
    sample_canonical_ring,
    sample_ring_grand,
    sample_zr_geometric,
    sup_current_moment,
    theory,
)
from fepkit.seeding import seed_split

SYM64 = RateSchedule(1, -math.inf, 64)


class TestRateSchedule:
    def test_symmetric_is_exact(self):
        s = RateSchedule(1, -math.inf, 128)
        assert s.p == 128**2 and s.q == 128**2
        assert s.asym_rate == 0.0

    def test_weakly_asymmetric(self):
        s = RateSchedule(1, 1.0, 128)
        assert s.p == 128**2 + 128 and s.q == 128**2
        assert s.p >= s.q >= 0

    def test_totally_asymmetric(self):
        s = RateSchedule(0, 1.0, 64)
        assert s.p == 64.0 and s.q == 0.0

    def test_zero_rate_rejected(self):
        with pytest.raises(ValueError):
            RateSchedule(0, -math.inf, 64)


class TestRunFep:
    def test_alternating_start_produces_no_events(self):
        cfg = FepConfig(np.array([0, 1] * 8), Ring(16))
        log = run_fep(cfg, SYM64, 0.5, seed=1, record_capacity=10)
        assert log.n_events == 0 and not log.truncated
        assert current(log, 0, 0.5) == 0

    def test_non_ergodic_start_rejected(self):
        cfg = FepConfig(np.array([1, 1, 0, 0, 1, 1, 0, 1]), Ring(8))
        with pytest.raises(ValueError):
            run_fep(cfg, SYM64, 0.1, seed=1)
        with pytest.raises(ValueError):
            run_fep(FepConfig(np.array([0, 1] * 4), Ring(8)), SYM64, -1.0, seed=1)

    def test_conservation_and_ergodic_closure(self):
        rng = np.random.default_rng(4)
        cfg = sample_canonical_ring(128, 96, rng)
        sim = FepSimulation(cfg, SYM64, seed=99, check_every=1024)
        sim.run_until(0.05)
        out = sim.config()
        assert out.n_particles == 96
        assert classify(out) is Classification.ERGODIC
        assert sim.check_failures == 0

    def test_event_times_strictly_increasing(self):
        rng = np.random.default_rng(5)
        cfg = sample_canonical_ring(64, 48, rng)
        log = run_fep(cfg, SYM64, 0.01, seed=5, record_capacity=200_000)
        assert np.all(np.diff(log.times) > 0)

    def test_determinism_and_seed_sensitivity(self):
        rng = np.random.default_rng(6)
        cfg = sample_canonical_ring(64, 48, rng)
        logs = [run_fep(cfg, SYM64, 0.005, seed=42, record_capacity=100_000) for _ in range(2)]
        assert np.array_equal(logs[0].times, logs[1].times)
        assert np.array_equal(logs[0].bonds, logs[1].bonds)
        other = run_fep(cfg, SYM64, 0.005, seed=43, record_capacity=100_000)
        assert not np.array_equal(logs[0].bonds, other.bonds)

    def test_mean_event_count(self):
        # total jump rate in the stationary state is 2 N^2 L sigma(rho)
        rho, N, L, t = 0.75, 64, 256, 0.02
        rng = np.random.default_rng(8)
        counts = []
        for i in range(40):
            cfg = sample_ring_grand(rho, L, rng)
            sim = FepSimulation(cfg, SYM64, seed=seed_split(12, i))
            sim.run_until(t)
            counts.append(sim.n_events)
        counts = np.array(counts, dtype=float)
        target = t * 2 * N**2 * L * theory(rho).sigma
        z = (counts.mean() - target) / (counts.std(ddof=1) / math.sqrt(len(counts)))
        assert abs(z) < 4

    def test_stationarity_of_window_statistics(self):
        # time-t window statistics match time-0 statistics for a canonical start
        rho, L, n = 0.75, 96, 72
        rng = np.random.default_rng(9)
        before, after = Counter(), Counter()
        for i in range(4000):
            cfg = sample_canonical_ring(L, n, rng)
            before[tuple(int(v) for v in cfg.sites[:3])] += 1
            sim = FepSimulation(cfg, SYM64, seed=seed_split(77, i))
            sim.run_until(0.002)
            after[tuple(int(v) for v in sim.config().sites[:3])] += 1
        chi2 = 0.0
        dof = -1
        for pat in set(before) | set(after):
            o1, o2 = before.get(pat, 0), after.get(pat, 0)
            chi2 += (o1 - o2) ** 2 / (o1 + o2)
            dof += 1
        assert stats.chi2.sf(chi2, dof) > 0.01

    def test_snapshots_and_observers(self):
        rng = np.random.default_rng(10)
        cfg = sample_canonical_ring(64, 48, rng)
        seen = []
        log = run_fep(
            cfg, SYM64, 0.004, seed=3,
            snapshot_times=[0.001, 0.003],
            observers=[(0.002, lambda t, c: seen.append((t, c.n_particles)))],
        )
        assert [t for t, _ in log.snapshots] == [0.001, 0.003]
        assert seen == [(0.002, 48)]


class TestLawEquivalenceSmallSystem:
    def test_generator_rates_and_uniform_occupation(self):
        # L=6, n=4: nine ergodic configurations; stationary law is uniform and
        # per-configuration move frequencies follow the generator's rate table
        L, n = 6, 4
        sched = RateSchedule(1, 1.0, 8)  # weakly asymmetric: p != q
        rng = np.random.default_rng(123)
        cfg0 = sample_canonical_ring(L, n, rng)
        sim = FepSimulation(cfg0, sched, seed=2024, record_capacity=400_000)
        sim.run_events(400_000)
        log = sim.log()

        eta = cfg0.sites.copy()
        time_in = defaultdict(float)
        moves = defaultdict(Counter)
        prev_t = 0.0
        for t, b, d in zip(log.times, log.bonds, log.dirs):
            key = tuple(eta)
            time_in[key] += t - prev_t
            moves[key][(int(b), int(d))] += 1
            bp = (b + 1) % L
            eta[b], eta[bp] = eta[bp], eta[b]
            prev_t = t

        # uniform occupation over the 9 configurations (time-weighted)
        total_t = sum(time_in.values())
        assert len(time_in) == 9
        for key, tt in time_in.items():
            assert abs(tt / total_t - 1 / 9) < 0.01

        # per-config move split matches p*c_right, q*c_left row by row
        for key, counter in moves.items():
            cfg = FepConfig(np.array(key), Ring(L))
            rates = {}
            for x in range(L):
                cr, cl = jump_rates(cfg, x)
                if cr:
                    rates[(x, 1)] = sched.p
                if cl:
                    rates[(x, -1)] = sched.q
            assert set(counter) <= set(rates)
            tot_rate = sum(rates.values())
            tot_cnt = sum(counter.values())
            chi2 = 0.0
            for mv, r in rates.items():
                e = tot_cnt * r / tot_rate
                chi2 += (counter.get(mv, 0) - e) ** 2 / e
            assert stats.chi2.sf(chi2, len(rates) - 1) > 1e-4


class TestRunZr:
    def test_empty_config_no_events(self):
        cfg = ZrConfig(np.zeros(16, dtype=np.int64), Ring(16))
        log = run_zr(cfg, SYM64, 1.0, seed=1)
        assert log.n_events == 0

    def test_symmetric_current_centered(self):
        rng = np.random.default_rng(20)
        means = []
        for i in range(30):
            cfg = sample_zr_geometric(0.75, 64, rng)
            log = run_zr(cfg, SYM64, 0.02, seed=seed_split(5, i))
            means.append(log.currents.sum() / 64)
        m = np.mean(means)
        se = np.std(means, ddof=1) / math.sqrt(len(means))
        assert abs(m) < 4 * se + 1e-12

    def test_mean_current_weakly_asymmetric(self):
        rho, N, K, t = 0.75, 128, 64, 0.5
        sched = RateSchedule(1, 1.0, N)
        rng = np.random.default_rng(21)
        vals = []
        for i in range(40):
            cfg = sample_zr_geometric(rho, K, rng)
            sim = ZrSimulation(cfg, sched, seed=seed_split(6, i))
            sim.run_until(t)
            vals.append(sim.currents.sum() / K)
        target = t * N * theory(rho).a
        z = (np.mean(vals) - target) / (np.std(vals, ddof=1) / math.sqrt(len(vals)))
        assert abs(z) < 4

    def test_telescoping_current_identity(self):
        # J_b(t) - J_{b'}(t) equals the particle-count change on the arc
        # between the two bonds (ring version of the current identity)
        rng = np.random.default_rng(22)
        cfg = sample_zr_geometric(0.75, 48, rng)
        w0 = cfg.sites.copy()
        sim = ZrSimulation(cfg, SYM64, seed=77)
        sim.run_until(0.01)
        wt = sim.w
        cur = sim.currents
        for b1 in (0, 7, 23):
            for b2 in (31, 40):
                arc = np.arange(b1 + 1, b2 + 1)
                assert cur[b1] - cur[b2] == (wt[arc] - w0[arc]).sum()

    def test_current_lookup(self):
        rng = np.random.default_rng(23)
        cfg = sample_zr_geometric(0.75, 32, rng)
        log = run_zr(cfg, SYM64, 0.002, seed=3, record_capacity=500_000)
        assert not log.truncated
        t_mid = log.times[len(log.times) // 2]
        # recount by scanning events
        for bond in (0, 5):
            sel = (log.bonds[: len(log.times) // 2 + 1] == bond)
            assert current(log, bond, t_mid) == int(log.dirs[: len(log.times) // 2 + 1][sel].sum())
        with pytest.raises(ValueError):
            current(log, 99, 0.001)
        # log invariant: counters equal the signed event tallies per bond
        for bond in range(32):
            assert log.currents[bond] == int(log.dirs[log.bonds == bond].sum())


class TestCoupling:
    def test_identical_starts_stay_identical(self):
        rng = np.random.default_rng(30)
        om = sample_zr_geometric(0.75, 64, rng)
        run = run_coupled(om, om, SYM64, 0.02, seed=9, sample_times=[0.01])
        assert run.disc_initial == 0 and run.disc_min == 0 and run.disc_max == 0
        assert np.array_equal(run.currents_omega, run.currents_xi)
        for st in run.states:
            assert np.array_equal(st.omega.sites, st.xi.sites)
            assert st.discrepancy == 0

    def test_ordered_start_keeps_discrepancy_constant(self):
        rng = np.random.default_rng(31)
        om = sample_zr_geometric(0.75, 128, rng)
        xi_sites = om.sites.copy()
        xi_sites[17] += 4
        xi = ZrConfig(xi_sites, Ring(128))
        run = run_coupled(om, xi, RateSchedule(1, 1.0, 32), math.inf, 10, max_events=300_000)
        assert run.disc_initial == 4
        assert run.disc_min == 4 and run.disc_max == 4
        assert run.n_events == 300_000

    def test_discrepancy_nonincreasing_generally(self):
        rng = np.random.default_rng(32)
        om = sample_zr_geometric(0.75, 64, rng)
        xi = sample_zr_geometric(0.75, 64, rng)
        run = run_coupled(om, xi, SYM64, math.inf, 11, max_events=100_000)
        assert run.disc_max <= run.disc_initial
        assert run.disc_min == run.states[-1].discrepancy

    def test_marginal_law_preserved(self):
        # the coupled omega-chain has the same mean bond current as an
        # uncoupled chain with the same schedule
        rho, K, t = 0.75, 64, 0.2
        sched = RateSchedule(1, 1.0, 32)
        rng = np.random.default_rng(33)
        coupled_means, free_means = [], []
        for i in range(40):
            om = sample_zr_geometric(rho, K, rng)
            xi_sites = om.sites.copy()
            xi_sites[0] += 2
            xi = ZrConfig(xi_sites, Ring(K))
            run = run_coupled(om, xi, sched, t, seed_split(800, i))
            coupled_means.append(run.currents_omega.sum() / K)
            sim = ZrSimulation(om, sched, seed_split(801, i))
            sim.run_until(t)
            free_means.append(sim.currents.sum() / K)
        diff = np.mean(coupled_means) - np.mean(free_means)
        se = math.sqrt(np.var(coupled_means, ddof=1) / 40 + np.var(free_means, ddof=1) / 40)
        assert abs(diff) < 4 * se

    def test_geometry_mismatch(self):
        rng = np.random.default_rng(34)
        with pytest.raises(ValueError):
            run_coupled(
                sample_zr_geometric(0.75, 32, rng),
                sample_zr_geometric(0.75, 64, rng),
                SYM64, 1.0, 1,
            )


class TestSupCurrent:
    def test_reproducible_and_small_horizon(self):
        sched = RateSchedule(1, -math.inf, 32)
        a = sup_current_moment(sched, 0.75, 1e-4, 8, seed=50, ring_sites=64)
        b = sup_current_moment(sched, 0.75, 1e-4, 8, seed=50, ring_sites=64)
        assert a == b
        big, _ = sup_current_moment(sched, 0.75, 0.05, 8, seed=51, ring_sites=64)
        assert a[0] < big

    def test_replica_validation(self):
        with pytest.raises(ValueError):
            sup_current_moment(SYM64, 0.75, 0.1, 1, seed=1)


class TestSingleEventCurrent:
    def test_one_rightward_crossing(self):
        # one particle, forced rightward move: exactly one bond records +1
        cfg = ZrConfig(np.array([0, 0, 1, 0, 0, 0, 0, 0]), Ring(8))
        sim = ZrSimulation(cfg, RateSchedule(0, 1.0, 8), seed=5)
        sim.run_events(1)
        assert sim.currents[2] == 1
        assert np.count_nonzero(sim.currents) == 1
        assert sim.w.tolist() == [0, 0, 0, 1, 0, 0, 0, 0]
