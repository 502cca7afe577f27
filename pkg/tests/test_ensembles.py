import itertools
import math

import numpy as np
import pytest

from fepkit import (
    CanonicalSpec,
    canonical_window_prob,
    count_ergodic,
    cropped_count_range,
    equivalence_error,
    lemma1_check,
    lemma2_sum,
    window_prob,
)
from fepkit.ensembles import log_count_ergodic


def enumerate_counts(n):
    """Exhaustive ergodic counts by particle number on n sites."""
    out = np.zeros(n + 1, dtype=np.int64)
    for bits in itertools.product((0, 1), repeat=n):
        if all(bits[i] + bits[i + 1] >= 1 for i in range(n - 1)):
            out[sum(bits)] += 1
    return out


def segment_count(n, m, bl, br):
    k = n - m
    if not 0 <= k <= m + bl + br - 1:
        return 0
    return math.comb(m + bl + br - 1, k)


def sample_canonical_box(ell, j, a, rng):
    """Exact sequential draw from the uniform canonical box ensemble.

    Site by site: the number of completions with each occupation value is a
    boundary-adjusted binomial, so the conditional law is their ratio.
    Independent of the window-formula code path under test.
    """
    n = 2 * ell + 1
    out = np.empty(n, dtype=np.int64)
    m = j
    prev = a[0]
    for i in range(n):
        rem = n - i - 1
        c1 = segment_count(rem, m - 1, 1, a[1]) if m >= 1 else 0
        c0 = segment_count(rem, m, 0, a[1]) if prev == 1 else 0
        v = 1 if rng.random() * (c0 + c1) < c1 else 0
        out[i] = v
        m -= v
        prev = v
    assert m == 0
    return out


class TestCounts:
    def test_examples(self):
        assert count_ergodic(4, 2) == 3
        assert count_ergodic(5, 3) == 6
        assert count_ergodic(7, 7) == 1
        assert count_ergodic(4, 1) == 0
        assert count_ergodic(0, 0) == 1
        with pytest.raises(ValueError):
            count_ergodic(-1, 0)
        with pytest.raises(ValueError):
            count_ergodic(3, -2)

    def test_matches_enumeration(self):
        for n in range(1, 13):
            counts = enumerate_counts(n)
            for j in range(n + 1):
                assert count_ergodic(n, j) == counts[j], (n, j)

    def test_log_path_pins_exact_path(self):
        for n in (59, 60, 61, 200, 5000):
            for j in (int(0.7 * n), int(0.9 * n), n):
                exact = math.comb(j + 1, n - j) if 0 <= n - j <= j + 1 else 0
                if exact == 0:
                    assert log_count_ergodic(n, j) == -math.inf
                else:
                    assert log_count_ergodic(n, j) == pytest.approx(math.log(exact), rel=1e-12)
        assert isinstance(count_ergodic(60, 45), int)
        assert isinstance(count_ergodic(61, 45), float)


class TestLemma1:
    def test_worked_example(self):
        assert lemma1_check(2, 3, 3) == (7, 7)

    def test_exact_for_small_boxes(self):
        for ell in range(5, 11):
            for ell1 in range(2, (ell + 1) // 2):
                ell2 = ell - ell1
                if ell1 >= ell2:
                    continue
                for j in range(ell + 1):
                    lhs, rhs = lemma1_check(ell1, ell2, j)
                    assert lhs == rhs

    def test_degenerate_out_of_range(self):
        assert lemma1_check(2, 3, 6) == (0, 0)

    def test_lhs_counts_split_ergodic_configs(self):
        # independent meaning check: lhs counts configurations ergodic on
        # both halves separately
        ell1, ell2, j = 3, 4, 5
        cnt = 0
        for bits in itertools.product((0, 1), repeat=ell1 + ell2):
            if sum(bits) != j:
                continue
            left, right = bits[:ell1], bits[ell1:]
            ok_l = all(left[i] + left[i + 1] >= 1 for i in range(ell1 - 1))
            ok_r = all(right[i] + right[i + 1] >= 1 for i in range(ell2 - 1))
            cnt += ok_l and ok_r
        assert lemma1_check(ell1, ell2, j)[0] == cnt


class TestCanonicalWindow:
    @staticmethod
    def enumerate_ensemble(ell, j, a):
        n = 2 * ell + 1
        out = []
        for bits in itertools.product((0, 1), repeat=n):
            if sum(bits) != j:
                continue
            s = (a[0],) + bits + (a[1],)
            if all(s[i] + s[i + 1] >= 1 for i in range(len(s) - 1)):
                out.append(np.array(bits))
        return out

    def test_matches_enumeration_small(self):
        worst = 0.0
        for ell in (1, 2, 3):
            n = 2 * ell + 1
            for a in itertools.product((0, 1), repeat=2):
                for j in range(n + 1):
                    ens = self.enumerate_ensemble(ell, j, a)
                    if not ens:
                        with pytest.raises(ValueError):
                            CanonicalSpec(ell, j, a)
                        continue
                    spec = CanonicalSpec(ell, j, a)
                    for k in range(ell):
                        for x in range(-(ell - k - 1), ell - k):
                            for sigma in itertools.product((0, 1), repeat=2 * k + 1):
                                cnt = sum(
                                    1 for e in ens
                                    if tuple(e[x - k + ell : x + k + ell + 1]) == sigma
                                )
                                got = canonical_window_prob(spec, x, k, sigma)
                                worst = max(worst, abs(got - cnt / len(ens)))
        assert worst < 1e-12

    def test_normalization_and_nonergodic_zero(self):
        spec = CanonicalSpec(4, 6, (1, 1))
        for x in (-2, 0, 2):
            tot = sum(
                canonical_window_prob(spec, x, 1, s)
                for s in itertools.product((0, 1), repeat=3)
            )
            assert abs(tot - 1.0) < 1e-12
        assert canonical_window_prob(spec, 0, 1, (0, 0, 1)) == 0.0

    def test_reflection_invariance(self):
        spec = CanonicalSpec(5, 8, (1, 0))
        mirror = CanonicalSpec(5, 8, (0, 1))
        for x in (-3, -1, 0, 2):
            for sigma in itertools.product((0, 1), repeat=3):
                p1 = canonical_window_prob(spec, x, 1, sigma)
                p2 = canonical_window_prob(mirror, -x, 1, sigma[::-1])
                assert p1 == pytest.approx(p2, abs=1e-14)

    def test_full_box_degenerates(self):
        ell = 5
        spec = CanonicalSpec(ell, 2 * ell + 1, (1, 1))
        assert canonical_window_prob(spec, 1, 1, (1, 1, 1)) == pytest.approx(1.0, abs=1e-14)
        assert window_prob(1.0, (1, 1, 1)) == pytest.approx(1.0, abs=1e-14)

    def test_telescoping_marginal(self):
        # summing out both end sites of the k-window gives the (k-1)-window
        spec = CanonicalSpec(6, 9, (1, 1))
        for x in (-2, 0, 3):
            for inner in itertools.product((0, 1), repeat=3):
                total = sum(
                    canonical_window_prob(spec, x, 2, (l,) + inner + (r,))
                    for l in (0, 1)
                    for r in (0, 1)
                )
                want = canonical_window_prob(spec, x, 1, inner)
                assert total == pytest.approx(want, abs=1e-12)

    def test_window_must_fit(self):
        spec = CanonicalSpec(3, 5, (1, 1))
        with pytest.raises(ValueError):
            canonical_window_prob(spec, 2, 1, (1, 1, 1))


class TestEquivalence:
    def test_monte_carlo_cross_check(self):
        ell, j, a, k = 60, 90, (1, 1), 1
        spec = CanonicalSpec(ell, j, a)
        err, argx = equivalence_error(spec, k)
        assert err > 0
        rng = np.random.default_rng(2718)
        n = 20_000
        hits = {s: 0 for s in itertools.product((0, 1), repeat=3)}
        for _ in range(n):
            cfg = sample_canonical_box(ell, j, a, rng)
            hits[tuple(cfg[argx - k + ell : argx + k + ell + 1])] += 1
        for sigma, cnt in hits.items():
            p = canonical_window_prob(spec, argx, k, sigma)
            se = math.sqrt(max(p * (1 - p), 1e-9) / n)
            assert abs(cnt / n - p) < 4 * se + 1e-9, (sigma, cnt / n, p)

    def test_error_decays_roughly_inversely(self):
        errs = []
        for ell in (64, 256, 1024):
            j = int(round(0.75 * (2 * ell + 1)))
            err, _ = equivalence_error(CanonicalSpec(ell, j, (1, 1)), 1)
            errs.append(err)
        slope = np.polyfit(np.log([64, 256, 1024]), np.log(errs), 1)[0]
        assert slope <= -0.9
        ratios = [e * l / math.log(l) ** 2 for e, l in zip(errs, (64, 256, 1024))]
        assert ratios[2] < ratios[1] < ratios[0]


class TestLemma2:
    def test_zero_at_half(self):
        assert lemma2_sum(0.5, 1000) == 0.0

    def test_nonnegative_on_grid(self):
        for rho in (0.55, 0.7, 0.85, 0.95, 1.0):
            for ell in (10, 100, 1000):
                assert lemma2_sum(rho, ell) >= 0.0

    def test_scaling_ratio_bounded(self):
        ratios = [
            lemma2_sum(0.75, ell) * ell / math.log(ell) ** 2
            for ell in (100, 1000, 10_000, 100_000)
        ]
        assert all(r <= ratios[0] for r in ratios)
        assert ratios[-1] < ratios[0]

    def test_domain(self):
        with pytest.raises(ValueError):
            lemma2_sum(0.4, 100)


def test_cropped_count_range():
    assert cropped_count_range(10, 0.0) == range(11, 22)
    small = cropped_count_range(10, 0.1)
    assert small.start >= 11 and small.stop <= 22
