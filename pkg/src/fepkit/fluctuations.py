"""Fluctuation fields, their limiting covariances, and decay functionals.

The density fluctuation field pairs the centered, sqrt(N)-scaled
occupations with a smooth test function evaluated in a frame moving at
the characteristic speed v*N^(gamma-1).  Its limiting covariance in the
diffusive cases is chi(rho) <T_lag G, H> with T the semigroup of
D(rho) d^2/du^2, i.e. convolution with the heat kernel
exp(-(u-v)^2/(4 D lag)) / sqrt(4 pi D lag).

Ring evaluations use centered coordinates x/N in [-kappa/2, kappa/2) for
a ring of kappa*N sites; every experiment enforces the validity window

    |center| + support radius + 6*sqrt(4 D t_end) + |t_end * v_N| < kappa/2

so that the test function, its heat spreading, and the frame drift never
touch the seam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from .lattice import FepConfig, Ring, ZrConfig
from .dynamics import FepSimulation, RateSchedule
from .measures import sample_ring_grand, theory, window_prob
from .seeding import seed_split

__all__ = [
    "Gaussian",
    "Bump",
    "TableSpline",
    "function_from_spec",
    "transform_test_function",
    "inner_product",
    "grad_norm_sq",
    "ValidityWindowError",
    "FieldSample",
    "field_eval_fep",
    "field_eval_zr",
    "CovariancePrediction",
    "she_covariance",
    "covariance_estimate",
    "required_ring_factor",
    "LocalFunction",
    "builtin_h",
    "bg_v_table",
    "run_covariance_replicas",
    "quadratic_variation",
    "boltzmann_gibbs_functional",
]


GAUSS_TRUNC = 8.0  # widths; relative truncation error exp(-32) ~ 1.3e-14


@dataclass(frozen=True)
class Gaussian:
    """amplitude * exp(-(u-center)^2 / (2 width^2)), truncated at 8 widths."""

    center: float = 0.0
    width: float = 1.0
    amplitude: float = 1.0

    @property
    def support_radius(self) -> float:
        return GAUSS_TRUNC * self.width

    def __call__(self, u):
        z = (np.asarray(u, dtype=float) - self.center) / self.width
        out = self.amplitude * np.exp(-0.5 * z * z)
        return np.where(np.abs(z) <= GAUSS_TRUNC, out, 0.0)

    def d1(self, u):
        z = (np.asarray(u, dtype=float) - self.center) / self.width
        return np.where(
            np.abs(z) <= GAUSS_TRUNC,
            -z / self.width * self.amplitude * np.exp(-0.5 * z * z),
            0.0,
        )

    def d2(self, u):
        z = (np.asarray(u, dtype=float) - self.center) / self.width
        return np.where(
            np.abs(z) <= GAUSS_TRUNC,
            (z * z - 1.0) / self.width**2 * self.amplitude * np.exp(-0.5 * z * z),
            0.0,
        )

    def scaled(self, factor: float) -> "Gaussian":
        """u -> factor * self(u / factor)."""
        return Gaussian(self.center * factor, self.width * factor, self.amplitude * factor)

    def label(self) -> str:
        return f"gauss(c={self.center:g};w={self.width:g};A={self.amplitude:g})"


@dataclass(frozen=True)
class Bump:
    """Smooth bump amplitude * exp(1 - 1/(1 - v^2)), v = (u-center)/radius."""

    center: float = 0.0
    radius: float = 1.0
    amplitude: float = 1.0

    @property
    def support_radius(self) -> float:
        return self.radius

    def _v(self, u):
        return (np.asarray(u, dtype=float) - self.center) / self.radius

    def __call__(self, u):
        v = self._v(u)
        inside = np.abs(v) < 1.0
        vv = np.where(inside, v, 0.0)
        return np.where(inside, self.amplitude * np.exp(1.0 - 1.0 / (1.0 - vv * vv)), 0.0)

    def d1(self, u):
        v = self._v(u)
        inside = np.abs(v) < 1.0
        vv = np.where(inside, v, 0.0)
        w = 1.0 - vv * vv
        f = self.amplitude * np.exp(1.0 - 1.0 / w)
        return np.where(inside, f * (-2.0 * vv / w**2) / self.radius, 0.0)

    def d2(self, u):
        v = self._v(u)
        inside = np.abs(v) < 1.0
        vv = np.where(inside, v, 0.0)
        w = 1.0 - vv * vv
        f = self.amplitude * np.exp(1.0 - 1.0 / w)
        # d/dv [-2v/w^2] = (-2/w^2) + (-2v)(-2)(w^-3)(-2v) = -2/w^2 - 8v^2/w^3
        term = (-2.0 * vv / w**2) ** 2 + (-2.0 / w**2 - 8.0 * vv * vv / w**3)
        return np.where(inside, f * term / self.radius**2, 0.0)

    def scaled(self, factor: float) -> "Bump":
        return Bump(self.center * factor, self.radius * factor, self.amplitude * factor)

    def label(self) -> str:
        return f"bump(c={self.center:g};r={self.radius:g};A={self.amplitude:g})"


class TableSpline:
    """Cubic-spline test function through sample points, zero outside."""

    def __init__(self, xs, ys):
        from scipy.interpolate import CubicSpline

        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self._spline = CubicSpline(self.xs, self.ys, bc_type="clamped")
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)

    @property
    def center(self) -> float:
        return float(0.5 * (self.xs[0] + self.xs[-1]))

    @property
    def support_radius(self) -> float:
        return float(0.5 * (self.xs[-1] - self.xs[0]))

    def _masked(self, fn, u):
        u = np.asarray(u, dtype=float)
        inside = (u >= self.xs[0]) & (u <= self.xs[-1])
        return np.where(inside, fn(np.clip(u, self.xs[0], self.xs[-1])), 0.0)

    def __call__(self, u):
        return self._masked(self._spline, u)

    def d1(self, u):
        return self._masked(self._d1, u)

    def d2(self, u):
        return self._masked(self._d2, u)

    def scaled(self, factor: float) -> "TableSpline":
        return TableSpline(self.xs * factor, self.ys * factor)

    def label(self) -> str:
        return f"spline(n={len(self.xs)})"


def function_from_spec(spec: dict):
    """Build a test function from a JSON-friendly description."""
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        return Gaussian(spec.get("center", 0.0), spec.get("width", 1.0), spec.get("amplitude", 1.0))
    if kind == "bump":
        return Bump(spec.get("center", 0.0), spec.get("radius", 1.0), spec.get("amplitude", 1.0))
    if kind == "spline":
        return TableSpline(spec["xs"], spec["ys"])
    raise ValueError(f"unknown test function kind {kind!r}")


def transform_test_function(G, rho: float, direction: str):
    """Rescale a test function across the cluster mapping.

    ``fep_to_zr`` gives u -> (1-rho) G(u/(1-rho)); ``zr_to_fep`` is its
    inverse, so the round trip is the identity.
    """
    if direction == "fep_to_zr":
        return G.scaled(1.0 - rho)
    if direction == "zr_to_fep":
        return G.scaled(1.0 / (1.0 - rho))
    raise ValueError("direction must be 'fep_to_zr' or 'zr_to_fep'")


def _both_gaussian(G, H) -> bool:
    return isinstance(G, Gaussian) and isinstance(H, Gaussian)


def _gauss_product_integral(a1, c1, s1, a2, c2, s2) -> float:
    s = s1 * s1 + s2 * s2
    return a1 * a2 * math.sqrt(2.0 * math.pi * s1 * s1 * s2 * s2 / s) * math.exp(
        -((c1 - c2) ** 2) / (2.0 * s)
    )


def inner_product(G, H) -> float:
    """L2 inner product; closed form for Gaussian pairs, quadrature otherwise."""
    if _both_gaussian(G, H):
        return _gauss_product_integral(
            G.amplitude, G.center, G.width, H.amplitude, H.center, H.width
        )
    lo = max(G.center - G.support_radius, H.center - H.support_radius)
    hi = min(G.center + G.support_radius, H.center + H.support_radius)
    if hi <= lo:
        return 0.0
    val, _ = integrate.quad(lambda u: float(G(u)) * float(H(u)), lo, hi,
                            epsabs=1e-10, limit=200)
    return float(val)


def grad_norm_sq(G) -> float:
    """Squared L2 norm of the derivative."""
    if isinstance(G, Gaussian):
        # int ((u-c)/w^2)^2 A^2 exp(-(u-c)^2/w^2) du = A^2 sqrt(pi)/(2 w)
        return G.amplitude**2 * math.sqrt(math.pi) / (2.0 * G.width)
    lo, hi = G.center - G.support_radius, G.center + G.support_radius
    val, _ = integrate.quad(lambda u: float(G.d1(u)) ** 2, lo, hi, epsabs=1e-10, limit=200)
    return float(val)


@dataclass(frozen=True)
class CovariancePrediction:
    value: float
    method: str  # closed_form_gaussian | quadrature


def she_covariance(rho: float, G, H, lag: float) -> CovariancePrediction:
    """chi(rho) <T_lag G, H> for the D(rho)-heat semigroup T.

    The heat kernel carries the standard negative exponent
    exp(-(u-v)^2/(4 D lag)).  Negative lags are rejected; use the
    symmetry of the prediction instead.
    """
    if lag < 0:
        raise ValueError("lag must be >= 0 (the prediction is symmetric in s, t)")
    th = theory(rho)
    if lag == 0:
        method = "closed_form_gaussian" if _both_gaussian(G, H) else "quadrature"
        return CovariancePrediction(th.chi * inner_product(G, H), method)
    s = th.D * lag
    if _both_gaussian(G, H):
        w_evolved = math.sqrt(G.width**2 + 2.0 * s)
        evolved = Gaussian(G.center, w_evolved, G.amplitude * G.width / w_evolved)
        return CovariancePrediction(
            th.chi * _gauss_product_integral(
                evolved.amplitude, evolved.center, evolved.width,
                H.amplitude, H.center, H.width,
            ),
            "closed_form_gaussian",
        )

    def kernel(z):
        return math.exp(-z * z / (4.0 * s)) / math.sqrt(4.0 * math.pi * s)

    lo_g, hi_g = G.center - G.support_radius, G.center + G.support_radius
    spread = 8.0 * math.sqrt(2.0 * s)

    def evolved_at(v):
        val, _ = integrate.quad(lambda u: float(G(u)) * kernel(u - v), lo_g, hi_g,
                                epsabs=1e-12, limit=200)
        return val

    lo = max(H.center - H.support_radius, lo_g - spread)
    hi = min(H.center + H.support_radius, hi_g + spread)
    if hi <= lo:
        return CovariancePrediction(0.0, "quadrature")
    val, _ = integrate.quad(lambda v: evolved_at(v) * float(H(v)), lo, hi,
                            epsabs=1e-10, limit=200)
    return CovariancePrediction(th.chi * float(val), "quadrature")


# ---------------------------------------------------------------------------
# field evaluation
# ---------------------------------------------------------------------------


class ValidityWindowError(ValueError):
    """The test function (plus frame drift) does not fit in half the ring."""


@dataclass(frozen=True)
class FieldSample:
    value: float
    time: float
    frame_shift: float


def _centered_coords(n: int) -> np.ndarray:
    idx = np.arange(n)
    return ((idx + n // 2) % n) - n // 2


def frame_velocity_fep(rho: float, sched: RateSchedule) -> float:
    """v(rho) * N^(gamma-1); zero in the symmetric case."""
    return theory(rho).v * float(sched.N) ** (sched.gamma - 1.0) if sched.gamma != -math.inf else 0.0


def frame_velocity_zr(rho: float, sched: RateSchedule) -> float:
    """(1-rho) v'_N = N^(gamma-1) ((1-rho)/rho)^2, the zero-range frame drift."""
    if sched.gamma == -math.inf:
        return 0.0
    return float(sched.N) ** (sched.gamma - 1.0) * ((1.0 - rho) / rho) ** 2


def _check_fits(center: float, radius: float, shift: float, kappa: float, N: int):
    if abs(center - shift) + radius >= kappa / 2.0 - 2.0 / N:
        raise ValidityWindowError(
            f"support [{center - shift:+.3f} +- {radius:.3f}] does not fit in half "
            f"the ring (kappa/2 = {kappa / 2.0:.3f})"
        )


def field_eval_fep(eta: FepConfig, G, rho: float, N: int, t: float,
                   sched: RateSchedule) -> FieldSample:
    """Density fluctuation field of the exclusion state at macroscopic time t.

    N^(-1/2) sum_x (eta_x - rho) G(x/N - t v_N) over centered ring
    coordinates; the support, shifted by the frame drift, must fit in
    half the ring.
    """
    if not isinstance(eta.geometry, Ring):
        raise ValueError("field evaluation expects a ring configuration")
    L = len(eta)
    kappa = L / N
    v_n = frame_velocity_fep(rho, sched)
    shift = t * v_n
    _check_fits(G.center, G.support_radius, shift, kappa, N)
    u = _centered_coords(L) / N - shift
    val = float((eta.sites.astype(np.float64) - rho) @ G(u)) / math.sqrt(N)
    return FieldSample(val, t, shift)


def field_eval_zr(omega: ZrConfig, G, rho: float, N: int, t: float,
                  sched: RateSchedule) -> FieldSample:
    """Density fluctuation field of the zero-range state.

    N^(-1/2) sum_y (omega_y - alpha) G(y/N - t (1-rho) v'_N) over centered
    label coordinates.
    """
    if not isinstance(omega.geometry, Ring):
        raise ValueError("field evaluation expects a ring configuration")
    Kn = len(omega)
    kappa = Kn / N
    shift = t * frame_velocity_zr(rho, sched)
    _check_fits(G.center, G.support_radius, shift, kappa, N)
    alpha = theory(rho).alpha
    u = _centered_coords(Kn) / N - shift
    val = float((omega.sites.astype(np.float64) - alpha) @ G(u)) / math.sqrt(N)
    return FieldSample(val, t, shift)


def required_ring_factor(G, rho: float, sched: RateSchedule, t_end: float,
                         others=()) -> int:
    """Smallest even ring factor satisfying the experiment validity window."""
    th = theory(rho)
    v_n = frame_velocity_fep(rho, sched)
    need = 0.0
    for fn in (G, *others):
        need = max(need, abs(fn.center) + fn.support_radius)
    need += 6.0 * math.sqrt(4.0 * th.D * t_end) + abs(t_end * v_n)
    kappa = 2 * math.ceil(need + 0.5)
    return int(kappa)


# ---------------------------------------------------------------------------
# covariance estimation
# ---------------------------------------------------------------------------


def covariance_estimate(ys: np.ndarray, yt: np.ndarray) -> tuple[float, float]:
    """Sample covariance across replicas with a jackknife standard error."""
    a = np.asarray(ys, dtype=float)
    b = np.asarray(yt, dtype=float)
    n = len(a)
    if n < 30 or len(b) != n:
        raise ValueError("need >= 30 paired replicas")
    sa, sb = a.sum(), b.sum()
    sab = float(a @ b)
    cov = (sab - sa * sb / n) / (n - 1)
    # leave-one-out covariances, vectorized
    sa_i = sa - a
    sb_i = sb - b
    sab_i = sab - a * b
    cov_i = (sab_i - sa_i * sb_i / (n - 1)) / (n - 2)
    se = math.sqrt((n - 1) / n * ((cov_i - cov_i.mean()) ** 2).sum())
    return float(cov), float(se)


def run_covariance_replicas(
    rho: float,
    sched: RateSchedule,
    functions: dict,
    s_time: float,
    t_time: float,
    replicas: int,
    ring_factor: int,
    master_seed: int,
) -> dict:
    """Simulate replicas and evaluate the field at s_time and t_time.

    Returns arrays ``out[(tag, name)]`` with tag in {"s", "t"} for every
    named test function.  Replicas start from the fluctuating-count
    stationary ring state and are merged in replica order, so a fixed
    seed gives bit-identical results.
    """
    N = sched.N
    L = ring_factor * N
    kappa = float(ring_factor)
    th = theory(rho)
    v_n = frame_velocity_fep(rho, sched)
    for fn in functions.values():
        margin = abs(fn.center) + fn.support_radius + 6.0 * math.sqrt(4.0 * th.D * t_time)
        if margin + abs(t_time * v_n) >= kappa / 2.0:
            raise ValidityWindowError(
                f"ring factor {ring_factor} too small for {fn.label()} at t={t_time}"
            )
    out = {(tag, name): np.empty(replicas) for tag in ("s", "t") for name in functions}
    for i in range(replicas):
        rep = seed_split(master_seed, i)
        rng = np.random.default_rng(seed_split(rep, 1))
        eta0 = sample_ring_grand(rho, L, rng)
        sim = FepSimulation(eta0, sched, seed_split(rep, 2))
        sim.run_until(s_time)
        cfg = sim.config()
        for name, fn in functions.items():
            out[("s", name)][i] = field_eval_fep(cfg, fn, rho, N, s_time, sched).value
        sim.run_until(t_time)
        cfg = sim.config()
        for name, fn in functions.items():
            out[("t", name)][i] = field_eval_fep(cfg, fn, rho, N, t_time, sched).value
    return out


# ---------------------------------------------------------------------------
# quadratic variation
# ---------------------------------------------------------------------------


def _qv_weights(G, N: int, L: int) -> np.ndarray:
    """Per-bond weights (discrete gradient of G)^2 / N on centered coords."""
    x = _centered_coords(L).astype(float)
    g0 = G(x / N)
    g1 = G((x + 1.0) / N)
    dg = N * (g1 - g0)
    return dg * dg / N


def quadratic_variation(
    config: FepConfig,
    sched: RateSchedule,
    G,
    times,
    seed: int,
    rho: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Accumulated quadratic variation of the field martingale at ``times``.

    Integrates sum_x [(p/N^2) c_{x,x+1} + (q/N^2) c_{x+1,x}] (grad_N G)^2 / N
    exactly along the trajectory (both jump directions contribute, so the
    stationary slope is 2 sigma(rho) ||G'||^2).
    """
    if sched.s != 1:
        raise ValueError("quadratic variation applies to symmetric/weakly asymmetric runs")
    N = sched.N
    L = len(config)
    _check_fits(G.center, G.support_radius, 0.0, L / N, N)
    sim = FepSimulation(config, sched, seed, qv_weights=_qv_weights(G, N, L))
    times = np.asarray(sorted(float(t) for t in times))
    values = np.empty(len(times))
    for i, t in enumerate(times):
        sim.run_until(t)
        values[i] = sim.qv_value
    if sim.check_failures:
        raise RuntimeError("incremental bookkeeping diverged during the QV run")
    return times, values


# ---------------------------------------------------------------------------
# Boltzmann-Gibbs functional
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalFunction:
    """A local observable given by its value on every window pattern.

    ``table[idx]`` holds the value on the occupation pattern of the
    window {-radius..radius}, with the leftmost site in the highest bit.
    ``mean`` / ``mean_prime`` optionally give the stationary expectation
    and its density derivative in closed form; otherwise they are
    computed from the exact window marginal (and a central difference).
    """

    radius: int
    table: np.ndarray
    mean: object = None        # callable rho -> float, or None
    mean_prime: object = None

    def stationary_mean(self, rho: float) -> float:
        if self.mean is not None:
            return float(self.mean(rho))
        ell = 2 * self.radius + 1
        total = 0.0
        for pat in range(1 << ell):
            bits = [(pat >> (ell - 1 - i)) & 1 for i in range(ell)]
            total += window_prob(rho, bits) * float(self.table[pat])
        return total

    def stationary_mean_prime(self, rho: float, h: float = 1e-5) -> float:
        if self.mean_prime is not None:
            return float(self.mean_prime(rho))
        return (self.stationary_mean(rho + h) - self.stationary_mean(rho - h)) / (2 * h)


def builtin_h() -> LocalFunction:
    """The gradient decomposition observable h = e_{-1}e_0 + e_0e_1 - e_{-1}e_0e_1.

    Its stationary mean is the active density a(rho) and the derivative is
    the diffusion coefficient D(rho) = 1/rho^2.
    """
    table = np.zeros(8)
    for pat in range(8):
        em1, e0, e1 = (pat >> 2) & 1, (pat >> 1) & 1, pat & 1
        table[pat] = em1 * e0 + e0 * e1 - em1 * e0 * e1
    return LocalFunction(
        1, table, mean=lambda r: theory(r).a, mean_prime=lambda r: theory(r).D
    )


def bg_v_table(psi: LocalFunction, rho: float) -> np.ndarray:
    """Table of V_psi = psi - mean - mean'(rho) (eta_0 - rho) per pattern."""
    mean = psi.stationary_mean(rho)
    mprime = psi.stationary_mean_prime(rho)
    out = np.empty_like(psi.table)
    for pat in range(len(psi.table)):
        center = (pat >> psi.radius) & 1
        out[pat] = psi.table[pat] - mean - mprime * (center - rho)
    return out


def boltzmann_gibbs_functional(
    config: FepConfig,
    sched: RateSchedule,
    psi: LocalFunction,
    G,
    t_end: float,
    seed: int,
    rho: float,
) -> float:
    """Time integral of N^(-1/2) sum_x G(x/N) tau_x V_psi along one run.

    Event-exact: the integrand is piecewise constant between jumps and is
    maintained incrementally inside the engine.
    """
    N = sched.N
    L = len(config)
    if 2 * psi.radius + 1 > L:
        raise ValueError("observable support wider than the ring")
    _check_fits(G.center, G.support_radius, 0.0, L / N, N)
    weights = G(_centered_coords(L).astype(float) / N)
    sim = FepSimulation(
        config, sched, seed,
        bg_weights=weights, bg_table=bg_v_table(psi, rho), bg_radius=psi.radius,
    )
    sim.run_until(t_end)
    if sim.check_failures:
        raise RuntimeError("incremental bookkeeping diverged during the BG run")
    return sim.bg_value / math.sqrt(N)
