"""Exact combinatorics of ergodic configurations on finite boxes.

The count of ergodic configurations of j particles on l sites is the
binomial C(j+1, l-j): each of the l-j empty sites goes to one of the j-1
slots between particles or to the two extremities, no slot taken twice.
Everything else is ratios of such binomials: the canonical window
marginal with boundary conditions is a two-segment convolution divided by
the ensemble size, evaluated in log space so boxes up to millions of
sites stay finite.

``equivalence_error`` measures the worst-case gap between the canonical
window marginal and the grand-canonical one at the matched density; the
sharp bound to compare against decays like (log l)^2 / l.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .measures import window_prob

__all__ = [
    "count_ergodic",
    "log_count_ergodic",
    "lemma1_check",
    "CanonicalSpec",
    "canonical_window_prob",
    "equivalence_error",
    "lemma2_sum",
    "cropped_count_range",
]

_EXACT_LIMIT = 60


def count_ergodic(n_sites: int, j: int):
    """Number of ergodic configurations with j particles on n_sites sites.

    Exact integer (math.comb) up to 60 sites, log-gamma float beyond.
    Out-of-range j returns 0 without error; negative inputs are rejected.
    """
    if n_sites < 0 or j < 0:
        raise ValueError("negative arguments")
    if not 0 <= n_sites - j <= j + 1:
        return 0
    if n_sites <= _EXACT_LIMIT:
        return math.comb(j + 1, n_sites - j)
    return float(math.exp(log_count_ergodic(n_sites, j)))


def log_count_ergodic(n_sites: int, j: int) -> float:
    """log C(j+1, n_sites-j); -inf when the count is zero."""
    if n_sites < 0 or j < 0:
        raise ValueError("negative arguments")
    k = n_sites - j
    if not 0 <= k <= j + 1:
        return -math.inf
    return float(gammaln(j + 2) - gammaln(k + 1) - gammaln(j + 2 - k))


def lemma1_check(ell1: int, ell2: int, j: int) -> tuple[int, int]:
    """Both sides of the two-segment recursion for ergodic counts.

    lhs counts length-(l1+l2) configurations with j particles that are
    ergodic on each half separately; any such configuration is either
    ergodic outright or pinches two empty sites at the junction, which
    yields rhs = N_{l1+l2, j} + sum N_{l1-2, j1} N_{l2-2, j2} over
    j1 + j2 = j - 2.
    """
    if not 2 <= ell1 < ell2:
        raise ValueError("need 2 <= ell1 < ell2")
    lhs = sum(
        count_ergodic(ell1, j1) * count_ergodic(ell2, j - j1) for j1 in range(j + 1)
    )
    rhs = count_ergodic(ell1 + ell2, j) + sum(
        count_ergodic(ell1 - 2, j1) * count_ergodic(ell2 - 2, j - 2 - j1)
        for j1 in range(max(j - 1, 0))
    )
    return lhs, rhs


class _LogBinom:
    """Tabulated log-factorials; vectorized log C(a, b) with zero-mask."""

    def __init__(self, nmax: int):
        self.lg = gammaln(np.arange(nmax + 2, dtype=np.float64) + 1.0)

    def logc(self, a, b):
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        ok = (b >= 0) & (b <= a) & (a >= 0)
        a_ = np.where(ok, a, 0)
        b_ = np.where(ok, b, 0)
        out = self.lg[a_] - self.lg[b_] - self.lg[a_ - b_]
        return np.where(ok, out, -np.inf)


def _log_segment_count(lb: _LogBinom, n, m, b_left, b_right):
    """log #(ergodic length-n segments, m particles, boundary pair).

    A boundary particle relaxes the adjacent edge constraint; the count
    is C(m + b_left + b_right - 1, n - m), the n_sites = l box being the
    (1,1) case.
    """
    return lb.logc(m + b_left + b_right - 1, n - m)


@dataclass(frozen=True)
class CanonicalSpec:
    """Canonical ensemble on the box {-ell..ell}: j particles, boundary pair a.

    The ensemble is the uniform measure on configurations that are ergodic
    when flanked by the boundary values.  ``delta`` records the density
    cropping used by sweep experiments; it is not enforced here because
    the window formula is exact combinatorics for every nonempty ensemble.
    """

    ell: int
    j: int
    a: tuple[int, int] = (1, 1)
    delta: float = 0.0

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("need ell >= 1")
        a1, a2 = self.a
        if a1 not in (0, 1) or a2 not in (0, 1):
            raise ValueError("boundary values must be 0 or 1")
        n = 2 * self.ell + 1
        if not 0 <= n - self.j <= self.j + a1 + a2 - 1:
            raise ValueError(f"empty ensemble: ell={self.ell}, j={self.j}, a={self.a}")

    @property
    def n_sites(self) -> int:
        return 2 * self.ell + 1

    @property
    def density(self) -> float:
        return self.j / self.n_sites

    def log_size(self) -> float:
        lb = _LogBinom(2 * self.ell + 4)
        a1, a2 = self.a
        return float(_log_segment_count(lb, self.n_sites, self.j, a1, a2))


def cropped_count_range(ell: int, delta: float) -> range:
    """Admissible particle numbers after cropping densities near 1/2 and 1."""
    lo = math.ceil((ell + 1) * (1 + delta))
    hi = math.floor((2 * ell + 1) * (1 - delta))
    return range(lo, hi + 1)


def _window_ergodic(sigma: np.ndarray) -> bool:
    return not np.any((sigma[:-1] + sigma[1:]) == 0)


def canonical_window_prob(spec: CanonicalSpec, x: int, k: int, sigma) -> float:
    """Exact canonical marginal of the window B_k(x) = {x-k..x+k}.

    Splits the box into left segment / window / right segment; segment
    configurations are counted by boundary-adjusted binomials and
    convolved over the particle split, all in log space:

        sum_{j1+j2=j-j0} C(j1+a1+s(-k)-1, x-k+ell-j1)
                       * C(j2+a2+s(k)-1, ell-x-k-j2)
        / C(j+a1+a2-1, 2 ell + 1 - j).

    The window plus one boundary site must sit inside the box.
    """
    sigma = np.asarray(sigma, dtype=np.int64)
    if len(sigma) != 2 * k + 1:
        raise ValueError("window config must have 2k+1 sites")
    if abs(x) + k + 1 > spec.ell:
        raise ValueError("window (plus one boundary site) must sit inside the box")
    if not _window_ergodic(sigma):
        return 0.0
    lb = _LogBinom(2 * spec.ell + 4)
    return _canonical_window_prob_inner(spec, x, k, sigma, lb)


def _canonical_window_prob_inner(spec, x, k, sigma, lb) -> float:
    a1, a2 = spec.a
    j0 = int(sigma.sum())
    jrem = spec.j - j0
    if jrem < 0:
        return 0.0
    n_l = spec.ell + x - k
    n_r = spec.ell - x - k
    c_l = a1 + int(sigma[0])
    c_r = int(sigma[-1]) + a2
    # feasible particle splits: each segment needs m <= n and n - m <= m + c - 1
    lo = max(0, -(-(n_l - c_l + 1) // 2), jrem - n_r)
    hi = min(jrem, n_l, jrem - (-(-(n_r - c_r + 1) // 2)))
    if lo > hi:
        return 0.0
    j1 = np.arange(lo, hi + 1)
    log_num = _log_segment_count(lb, n_l, j1, a1, int(sigma[0])) + _log_segment_count(
        lb, n_r, jrem - j1, int(sigma[-1]), a2
    )
    log_den = _log_segment_count(lb, spec.n_sites, spec.j, a1, a2)
    # every summand is a probability contribution <= 1; direct exp-sum is stable
    return float(np.exp(log_num - log_den).sum())


def _ergodic_windows(k: int):
    ell = 2 * k + 1
    out = []
    for pat in range(1 << ell):
        bits = np.array([(pat >> (ell - 1 - i)) & 1 for i in range(ell)], dtype=np.int64)
        if _window_ergodic(bits):
            out.append(bits)
    return out


def equivalence_error(spec: CanonicalSpec, k: int) -> tuple[float, int]:
    """Worst canonical-vs-grand window discrepancy over admissible centers.

    Maximizes |canonical - grand| over all ergodic windows on B_k and all
    centers x with |x| <= ell - ceil(log(ell)^2), the admissible range of
    the sharp-bound statement; the grand-canonical term is the window
    marginal at the matched density j/(2 ell + 1).
    """
    ell = spec.ell
    margin = math.ceil(math.log(ell) ** 2)
    xmax = ell - margin
    if xmax < 0:
        raise ValueError(f"box too small: admissible range empty for ell={ell}")
    xmax = min(xmax, ell - k - 1)
    lb = _LogBinom(2 * ell + 4)
    rho_l = spec.density
    worst = -1.0
    argmax = 0
    xs = np.arange(-xmax, xmax + 1)
    for sigma in _ergodic_windows(k):
        grand = window_prob(rho_l, sigma)
        for x in xs:
            err = abs(_canonical_window_prob_inner(spec, int(x), k, sigma, lb) - grand)
            if err > worst:
                worst = err
                argmax = int(x)
    return worst, argmax


def lemma2_sum(rho: float, ell: int) -> float:
    """sum_m [ prod_n (1-rho+n/l)/(rho+n/l) - ((1-rho)/rho)^m ], m,n = 1..

    Running products are kept in log space; the value is 0 exactly at
    rho = 1/2 and nonnegative throughout, with the (log l)^2 / l bound
    checked experimentally.
    """
    if not 0.5 <= rho <= 1.0:
        raise ValueError("density must lie in [1/2, 1]")
    if ell < 2:
        return 0.0
    n = np.arange(1, ell, dtype=np.float64)
    log_terms = np.log(1.0 - rho + n / ell) - np.log(rho + n / ell)
    prods = np.exp(np.cumsum(log_terms))
    if rho == 1.0:
        geo = np.zeros_like(prods)
    else:
        geo = np.exp(n * math.log((1.0 - rho) / rho))
    return float((prods - geo).sum())
