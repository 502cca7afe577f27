"""Stationary measures of the exclusion/zero-range pair, in closed form.

Everything here is exact: closed-form transport coefficients, the explicit
window marginal of the conditioned-Bernoulli stationary state, its lag
covariances, and direct (non-MCMC) samplers for

* the grand-canonical window marginal (cluster construction),
* the geometric zero-range product state and its origin-tilted variant,
* the uniform canonical ring ensemble (stars and bars through the
  cluster bijection),
* a stationary ring state with fluctuating particle number, used to
  initialize fluctuation experiments,
* the one-sided Markov-chain construction of the window marginal.

Samplers take an explicit ``numpy.random.Generator``; none keep state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .lattice import Box, FepConfig, Ring, ZrConfig

__all__ = [
    "TheoryBundle",
    "theory",
    "window_prob",
    "pair_covariance",
    "WindowSample",
    "sample_zr_geometric",
    "sample_zr_distorted",
    "sample_window_grand",
    "sample_canonical_ring",
    "sample_ring_grand",
    "markov_chain_window",
    "markov_chain_batch",
]


def _check_density(rho: float) -> float:
    rho = float(rho)
    if not 0.5 < rho <= 1.0:
        raise ValueError(f"density must lie in (1/2, 1], got {rho}")
    return rho


@dataclass(frozen=True)
class TheoryBundle:
    """All closed-form coefficients at one supercritical density.

    ``zr_var`` is the single-site variance of the geometric zero-range
    marginal, alpha*(1+alpha) = rho*(2*rho-1)/(1-rho)**2.
    """

    rho: float
    a: float          # active density (2*rho-1)/rho
    D: float          # diffusion coefficient 1/rho**2
    sigma: float      # conductivity (2*rho-1)*(1-rho)/rho
    chi: float        # compressibility rho*(1-rho)*(2*rho-1)
    v: float          # characteristic speed (1-2*rho**2)/rho**2
    alpha: float      # zero-range density (2*rho-1)/(1-rho)
    phi: float        # alpha/(1+alpha), equals a
    phi_prime: float  # 1/(1+alpha)**2 = ((1-rho)/rho)**2
    zr_var: float

    def json_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.json_dict())


def theory(rho: float) -> TheoryBundle:
    """Closed-form coefficient bundle; density restricted to (1/2, 1].

    At rho = 1 the zero-range density and variance diverge and are
    reported as inf.
    """
    rho = _check_density(rho)
    a = (2.0 * rho - 1.0) / rho
    D = 1.0 / rho**2
    sigma = (2.0 * rho - 1.0) * (1.0 - rho) / rho
    chi = rho * (1.0 - rho) * (2.0 * rho - 1.0)
    v = (1.0 - 2.0 * rho**2) / rho**2
    if rho == 1.0:
        alpha = math.inf
        zr_var = math.inf
    else:
        alpha = (2.0 * rho - 1.0) / (1.0 - rho)
        zr_var = rho * (2.0 * rho - 1.0) / (1.0 - rho) ** 2
    phi = a
    phi_prime = ((1.0 - rho) / rho) ** 2
    return TheoryBundle(rho, a, D, sigma, chi, v, alpha, phi, phi_prime, zr_var)


def window_prob(rho: float, sigma) -> float:
    """Exact probability of observing ``sigma`` in a window of its length.

    The stationary state gives a length-l window with p particles and end
    values s1, sl probability

        (1-rho)**(l-p) * (2*rho-1)**(2p-l+1-s1-sl) * rho**(s1+sl-p)

    when the window has no two adjacent empty sites, and 0 otherwise.
    Only the window's internal edges enter the ergodicity indicator; any
    boundary values attached to a Box config are ignored here.
    """
    rho = _check_density(rho)
    if isinstance(sigma, FepConfig):
        s = sigma.sites.tolist()
    elif isinstance(sigma, np.ndarray):
        s = sigma.tolist()
    else:
        s = list(sigma)
    ell = len(s)
    if ell == 0:
        raise ValueError("window must be nonempty")
    p = 0
    prev = 1
    for v in s:
        if v not in (0, 1):
            raise ValueError("window entries must be 0 or 1")
        if v == 0 and prev == 0:
            return 0.0
        p += v
        prev = v
    e11 = 2 * p - ell + 1 - s[0] - s[-1]
    return (1.0 - rho) ** (ell - p) * (2.0 * rho - 1.0) ** e11 * rho ** (s[0] + s[-1] - p)


def pair_covariance(rho: float, x: int) -> float:
    """Stationary occupation covariance at lag x >= 0.

    h_0 = rho(1-rho) and h_x = rho(1-rho)((rho-1)/rho)**x for x >= 1; the
    two-sided sum telescopes to the compressibility.
    """
    rho = _check_density(rho)
    if x < 0:
        raise ValueError("lag must be >= 0")
    if x == 0:
        return rho * (1.0 - rho)
    return float(rho * (1.0 - rho) * ((rho - 1.0) / rho) ** x)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def _geometric(rng: np.random.Generator, a: float, size=None):
    """Geometric on {0,1,...} with P(k) = a**k (1-a), by CDF inversion."""
    u = 1.0 - rng.random(size)
    k = np.floor(np.log(u) / math.log(a)) if a > 0.0 else np.zeros_like(u)
    if size is None:
        return int(k)
    return k.astype(np.int64)


def sample_zr_geometric(rho: float, n_sites: int, rng: np.random.Generator) -> ZrConfig:
    """I.i.d. geometric zero-range state on a ring of ``n_sites``."""
    rho = _check_density(rho)
    if rho == 1.0:
        raise ValueError("geometric marginal degenerates at rho = 1")
    a = theory(rho).a
    return ZrConfig(_geometric(rng, a, size=n_sites), Ring(n_sites))


def sample_zr_distorted(rho: float, rng: np.random.Generator) -> tuple[int, int]:
    """Draw the origin cluster (omega_0, X_0) of the tilted pair measure.

    omega_0 has the size-biased law (k+2) a**k rho (1-a)**2 and X_0 is then
    uniform on {-omega_0-1, ..., 0}.  The tilt is sampled through the
    identity (k+2) a^k rho (1-a)^2 = rho*NB2(k) + (1-rho)*Geom(k): with
    probability rho the origin sits on a particle and the cluster is a sum
    of two geometrics, otherwise it sits on the empty site.
    """
    rho = _check_density(rho)
    if rho == 1.0:
        raise ValueError("tilted marginal degenerates at rho = 1")
    a = theory(rho).a
    if rng.random() < rho:
        omega0 = _geometric(rng, a) + _geometric(rng, a)
    else:
        omega0 = _geometric(rng, a)
    x0 = -int(rng.integers(0, omega0 + 2))
    return omega0, x0


@dataclass(frozen=True)
class WindowSample:
    """An exact stationary window draw on Box(-m..m)."""

    config: FepConfig
    rho: float


class _GeomStream:
    """Buffered i.i.d. geometric draws, one uniform consumed per value."""

    def __init__(self, rng: np.random.Generator, a: float, block: int = 512):
        self._rng = rng
        self._a = a
        self._block = block
        self._buf = np.empty(0, dtype=np.int64)
        self._i = 0

    def next(self) -> int:
        if self._i >= len(self._buf):
            self._buf = _geometric(self._rng, self._a, size=self._block)
            self._i = 0
        v = int(self._buf[self._i])
        self._i += 1
        return v


def sample_window_grand(rho: float, m: int, rng: np.random.Generator) -> WindowSample:
    """Exact stationary draw on the window {-m..m}.

    Construction: draw the origin cluster from the tilted law, then grow
    independent geometric clusters left and right until the window is
    covered.  No truncation is involved; the marginal is exact.
    """
    rho = _check_density(rho)
    if m < 1:
        raise ValueError("window half-width must be >= 1")
    a = theory(rho).a
    omega0, x0 = sample_zr_distorted(rho, rng)
    gaps = _GeomStream(rng, a)
    sites = np.ones(2 * m + 1, dtype=np.uint8)

    def record(e: int):
        if -m <= e <= m:
            sites[e + m] = 0

    record(x0)
    pos = x0 + omega0 + 2
    while pos <= m:
        record(pos)
        pos += gaps.next() + 2
    pos = x0
    while pos >= -m:
        pos -= gaps.next() + 2
        record(pos)
    return WindowSample(FepConfig(sites, Box(-m, m)), rho)


def sample_canonical_ring(length: int, n_particles: int, rng: np.random.Generator) -> FepConfig:
    """Uniform draw from the ergodic ring configurations with fixed count.

    Through the cluster bijection these are in correspondence with weak
    compositions of M = 2n - L into K = L - n parts together with a ring
    offset; a uniform composition (stars and bars) plus a uniform rotation
    gives every ergodic configuration probability K / (L * C(M+K-1, K-1)).
    """
    L, n = int(length), int(n_particles)
    if L < 4:
        raise ValueError("ring length must be >= 4")
    if not math.ceil(L / 2) <= n <= L:
        raise ValueError(f"need ceil(L/2) <= n <= L for a nonempty ergodic ring, got n={n}, L={L}")
    K = L - n
    if K == 0:
        return FepConfig(np.ones(L, dtype=np.uint8), Ring(L))
    M = 2 * n - L
    if K == 1:
        parts = np.array([M], dtype=np.int64)
    else:
        bars = np.sort(rng.choice(M + K - 1, size=K - 1, replace=False))
        edges = np.concatenate(([-1], bars, [M + K - 1]))
        parts = np.diff(edges) - 1
    sites = np.ones(L, dtype=np.uint8)
    empties = np.concatenate(([0], np.cumsum(parts[:-1] + 2)))
    offset = int(rng.integers(L))
    sites[(empties + offset) % L] = 0
    return FepConfig(sites, Ring(L))


def sample_ring_grand(rho: float, length: int, rng: np.random.Generator) -> FepConfig:
    """Stationary ring draw with fluctuating particle number.

    Samples the cyclic Gibbs state whose weight depends only on the
    particle count, P(eta) proportional to a**M (1-a)**K over ergodic ring
    configurations (K empty sites, M zero-range particles).  Being a
    mixture of the uniform canonical shells it is exactly stationary for
    the ring dynamics, and unlike a fixed-count start it reproduces the
    infinite-volume number fluctuations Var(n) ~ chi*L that the
    fluctuation-field covariances require.

    Construction: tilted origin cluster, i.i.d. geometric clusters grown
    rightward, accepted when they close the ring exactly (the renewal
    hits L); acceptance probability approaches 1 - rho.
    """
    rho = _check_density(rho)
    L = int(length)
    if L < 4:
        raise ValueError("ring length must be >= 4")
    a = theory(rho).a
    while True:
        omega0, x0 = sample_zr_distorted(rho, rng)
        remaining = L - (omega0 + 2)
        if remaining < 0:
            continue
        if remaining == 0:
            gaps = np.empty(0, dtype=np.int64)
        else:
            sizes = _geometric(rng, a, size=max(16, int(remaining * (1.0 - a) / 2) + 16)) + 2
            cum = np.cumsum(sizes)
            while cum[-1] < remaining:
                extra = _geometric(rng, a, size=64) + 2
                sizes = np.concatenate((sizes, extra))
                cum = np.cumsum(sizes)
            stop = int(np.searchsorted(cum, remaining))
            if cum[stop] != remaining:
                continue
            gaps = sizes[: stop + 1]
        sites = np.ones(L, dtype=np.uint8)
        empties = x0 + np.concatenate(([0], omega0 + 2 + np.cumsum(np.concatenate(([0], gaps[:-1])))))
        sites[empties % L] = 0
        return FepConfig(sites, Ring(L))


def markov_chain_window(rho: float, length: int, rng: np.random.Generator) -> FepConfig:
    """One-sided stationary sample (eta_x)_{0 <= x < length}.

    eta_0 is Bernoulli(rho); afterwards an occupied site is followed by an
    occupied one with probability a(rho) and an empty site is always
    followed by an occupied one.  Valid for one-sided windows only: the
    two half-lines of the stationary state are not independent, so gluing
    two of these back to back does not sample a two-sided window.
    """
    cfg = markov_chain_batch(rho, length, 1, rng)
    return FepConfig(cfg[0], Box(0, length - 1))


def markov_chain_batch(rho: float, length: int, draws: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized form of :func:`markov_chain_window`: (draws, length) matrix."""
    rho = _check_density(rho)
    if length < 1:
        raise ValueError("length must be >= 1")
    a = theory(rho).a
    out = np.empty((draws, length), dtype=np.uint8)
    out[:, 0] = rng.random(draws) < rho
    for x in range(1, length):
        stay = rng.random(draws) < a
        out[:, x] = np.where(out[:, x - 1] == 1, stay, True)
    return out
