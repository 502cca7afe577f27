"""Event-driven simulation of the exclusion and zero-range chains.

One trajectory is owned by one simulation object; replica parallelism is
achieved by independent seeds (see :mod:`fepkit.seeding`).  Time is
macroscopic throughout: the N^2 of the diffusive scaling sits inside the
rate schedule, so experiment times are the theory's times directly.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .lattice import Classification, FepConfig, Ring, ZrConfig, classify
from .seeding import seed_split

__all__ = [
    "RateSchedule",
    "TrajectoryLog",
    "CouplingState",
    "CouplingRun",
    "FepSimulation",
    "ZrSimulation",
    "run_fep",
    "run_zr",
    "run_coupled",
    "current",
    "sup_current_moment",
    "tagged_empty_site",
]


@dataclass(frozen=True)
class RateSchedule:
    """Jump rates p = s*N^2 + N^gamma (right) and q = s*N^2 (left).

    ``gamma = -inf`` encodes the symmetric case, making p = N^2 exactly.
    The regimes studied in the theory (s=1 with gamma <= 3/2, or s=0 with
    gamma < 4/3) are advisory and deliberately not enforced.
    """

    s: int
    gamma: float
    N: int

    def __post_init__(self):
        if self.s not in (0, 1):
            raise ValueError("symmetric-part switch s must be 0 or 1")
        if self.N < 2:
            raise ValueError("scaling parameter N must be >= 2")
        if self.s == 0 and self.gamma == -math.inf:
            raise ValueError("s=0 with gamma=-inf gives zero total rate")

    @property
    def asym_rate(self) -> float:
        """N**gamma, exactly 0.0 in the symmetric case."""
        return float(self.N) ** self.gamma

    @property
    def p(self) -> float:
        return self.s * self.N**2 + self.asym_rate

    @property
    def q(self) -> float:
        return float(self.s * self.N**2)


@dataclass
class TrajectoryLog:
    """Event-ordered record of a run.

    ``currents[b]`` is the net signed number of rightward crossings of
    bond (b, b+1) over the whole run; the event arrays are populated up to
    the recording capacity (``truncated`` reports overflow).
    """

    t_end: float
    times: np.ndarray
    bonds: np.ndarray
    dirs: np.ndarray
    currents: np.ndarray
    truncated: bool = False
    snapshots: list = field(default_factory=list)

    @property
    def n_events(self) -> int:
        return len(self.times)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time,bond,direction\n")
            for t, b, d in zip(self.times, self.bonds, self.dirs):
                fh.write(f"{t!r},{b},{d}\n")


def current(log: TrajectoryLog, bond: int, t: float) -> int:
    """Net signed crossings of ``bond`` during [0, t]."""
    if not 0 <= bond < len(log.currents):
        raise ValueError(f"unknown bond {bond}")
    if t > log.t_end * (1 + 1e-12):
        raise ValueError(f"t={t} beyond end of log ({log.t_end})")
    if log.truncated and t < log.t_end:
        raise ValueError("event record was truncated; only t = t_end is answerable")
    if not log.truncated:
        n = bisect.bisect_right(log.times, t)
        sel = log.bonds[:n] == bond
        return int(log.dirs[:n][sel].sum())
    return int(log.currents[bond])


def _check_power_of_two(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError("check_every must be a power of two")
    return n


class FepSimulation:
    """Owns one exclusion trajectory on a ring.

    Between calls the chain is frozen at the current time; exponential
    clocks are memoryless so stop/resume at observation times is exact.
    Optional accumulators (set via ``qv_weights`` / ``bg_*``) integrate
    their observables exactly along the trajectory.
    """

    def __init__(
        self,
        config: FepConfig,
        sched: RateSchedule,
        seed: int,
        *,
        record_capacity: int = 0,
        qv_weights: np.ndarray | None = None,
        bg_weights: np.ndarray | None = None,
        bg_table: np.ndarray | None = None,
        bg_radius: int = 1,
        check_every: int = 1 << 16,
        require_ergodic: bool = True,
    ):
        if not isinstance(config.geometry, Ring):
            raise ValueError("the event engine runs on rings")
        if require_ergodic and classify(config) is not Classification.ERGODIC:
            raise ValueError("stationary experiments require an ergodic start")
        L = len(config)
        self.sched = sched
        self.L = L
        self.eta = config.sites.astype(np.int8)
        self.mem_r = np.empty(L, np.int64)
        self.pos_r = np.empty(L, np.int64)
        self.mem_l = np.empty(L, np.int64)
        self.pos_l = np.empty(L, np.int64)
        nr, nl = K.fep_init_sets(self.eta, self.mem_r, self.pos_r, self.mem_l, self.pos_l)
        self.imeta = np.array([nr, nl, 0, 0], np.int64)
        self.fmeta = np.zeros(1, np.float64)
        self.rng = K.seed_state(np.uint64(seed & (2**64 - 1)))
        self.currents = np.zeros(L, np.int64)
        self.ev_t = np.empty(record_capacity, np.float64)
        self.ev_bond = np.empty(record_capacity, np.int64)
        self.ev_dir = np.empty(record_capacity, np.int8)
        self.rec_meta = np.zeros(1, np.int64)
        self.check_mask = np.int64(_check_power_of_two(check_every) - 1)

        self.qv_on = qv_weights is not None
        self.qv_w = np.zeros(L) if qv_weights is None else np.asarray(qv_weights, np.float64)
        if len(self.qv_w) != L:
            raise ValueError("qv_weights must have one entry per bond")
        self.cp = sched.p / sched.N**2
        self.cq = sched.q / sched.N**2
        self.qv_state = np.zeros(2, np.float64)

        self.bg_on = bg_weights is not None
        self.bg_r = int(bg_radius)
        if self.bg_on:
            if bg_table is None or len(bg_table) != 1 << (2 * self.bg_r + 1):
                raise ValueError("bg_table must enumerate all local patterns")
            self.bg_w = np.asarray(bg_weights, np.float64)
            self.bg_table = np.asarray(bg_table, np.float64)
        else:
            self.bg_w = np.zeros(L)
            self.bg_table = np.zeros(1 << (2 * self.bg_r + 1))
        self.bg_state = np.zeros(2, np.float64)
        # make the accumulators start from the true initial sums
        _, s_qv, s_bg = K._fep_recompute(
            self.eta, self.pos_r, self.pos_l, nr, nl, self.cp, self.cq,
            self.qv_w, self.bg_on, self.bg_w, self.bg_table, self.bg_r,
        )
        self.qv_state[0] = s_qv
        self.bg_state[0] = s_bg

    def _advance(self, t_target: float, max_steps: int) -> int:
        return K.fep_advance(
            self.eta, self.mem_r, self.pos_r, self.mem_l, self.pos_l,
            self.imeta, self.fmeta, self.rng,
            self.sched.p, self.sched.q, t_target, max_steps,
            self.currents, self.ev_t, self.ev_bond, self.ev_dir, self.rec_meta,
            self.qv_on, self.qv_w, self.cp, self.cq, self.qv_state,
            self.bg_on, self.bg_w, self.bg_table, self.bg_r, self.bg_state,
            self.check_mask,
        )

    def run_until(self, t: float) -> int:
        if t < self.t:
            raise ValueError("cannot run backwards")
        return self._advance(float(t), -1)

    def run_events(self, n: int) -> int:
        return self._advance(math.inf, int(n))

    @property
    def t(self) -> float:
        return float(self.fmeta[0])

    @property
    def n_events(self) -> int:
        return int(self.imeta[K.I_TOTAL])

    @property
    def check_failures(self) -> int:
        return int(self.imeta[K.I_FAILS])

    @property
    def qv_value(self) -> float:
        return float(self.qv_state[1])

    @property
    def bg_value(self) -> float:
        """Time integral of the weighted local sum (no N^-1/2 prefactor)."""
        return float(self.bg_state[1])

    def config(self) -> FepConfig:
        return FepConfig(self.eta.astype(np.uint8), Ring(self.L))

    def log(self) -> TrajectoryLog:
        n = int(self.rec_meta[0])
        return TrajectoryLog(
            t_end=self.t,
            times=self.ev_t[:n].copy(),
            bonds=self.ev_bond[:n].copy(),
            dirs=self.ev_dir[:n].copy(),
            currents=self.currents.copy(),
            truncated=self.n_events > n,
        )


class ZrSimulation:
    """Owns one constant-rate zero-range trajectory on a ring."""

    def __init__(
        self,
        config: ZrConfig,
        sched: RateSchedule,
        seed: int,
        *,
        record_capacity: int = 0,
        track_bond: int = -1,
        drift: float = 0.0,
    ):
        if not isinstance(config.geometry, Ring):
            raise ValueError("the event engine runs on rings")
        Kn = len(config)
        self.sched = sched
        self.K = Kn
        self.w = config.sites.astype(np.int64)
        self.mem_a = np.empty(Kn, np.int64)
        self.pos_a = np.empty(Kn, np.int64)
        na = K.zr_init_sets(self.w, self.mem_a, self.pos_a)
        self.imeta = np.array([na, 0, 0, 0], np.int64)
        self.fmeta = np.zeros(1, np.float64)
        self.rng = K.seed_state(np.uint64(seed & (2**64 - 1)))
        self.currents = np.zeros(Kn, np.int64)
        self.ev_t = np.empty(record_capacity, np.float64)
        self.ev_bond = np.empty(record_capacity, np.int64)
        self.ev_dir = np.empty(record_capacity, np.int8)
        self.rec_meta = np.zeros(1, np.int64)
        self.track_bond = int(track_bond)
        self.drift = float(drift)
        self.sup_state = np.zeros(1, np.float64)

    def _advance(self, t_target: float, max_steps: int) -> int:
        return K.zr_advance(
            self.w, self.mem_a, self.pos_a, self.imeta, self.fmeta, self.rng,
            self.sched.p, self.sched.q, t_target, max_steps,
            self.currents, self.ev_t, self.ev_bond, self.ev_dir, self.rec_meta,
            self.track_bond, self.drift, self.sup_state,
        )

    def run_until(self, t: float) -> int:
        if t < self.t:
            raise ValueError("cannot run backwards")
        return self._advance(float(t), -1)

    def run_events(self, n: int) -> int:
        return self._advance(math.inf, int(n))

    @property
    def t(self) -> float:
        return float(self.fmeta[0])

    @property
    def n_events(self) -> int:
        return int(self.imeta[K.Z_TOTAL])

    @property
    def tracked_current(self) -> int:
        return int(self.imeta[K.Z_J])

    @property
    def sup_centered_sq(self) -> float:
        return float(self.sup_state[0])

    def config(self) -> ZrConfig:
        return ZrConfig(self.w.copy(), Ring(self.K))

    def log(self) -> TrajectoryLog:
        n = int(self.rec_meta[0])
        return TrajectoryLog(
            t_end=self.t,
            times=self.ev_t[:n].copy(),
            bonds=self.ev_bond[:n].copy(),
            dirs=self.ev_dir[:n].copy(),
            currents=self.currents.copy(),
            truncated=self.n_events > n,
        )


def _run_with_observers(sim, t_end, observers, snapshot_times, log_snapshots=True):
    marks = sorted(
        [(float(t), fn) for t, fn in (observers or [])]
        + [(float(t), None) for t in (snapshot_times or [])]
    )
    for t, fn in marks:
        if t > t_end:
            break
        sim.run_until(t)
        if fn is None and log_snapshots:
            sim._snap.append((t, sim.config()))
        elif fn is not None:
            fn(t, sim.config())
    sim.run_until(t_end)


def run_fep(
    config: FepConfig,
    sched: RateSchedule,
    t_end: float,
    seed: int,
    *,
    observers=None,
    snapshot_times=None,
    record_capacity: int = 0,
    check_every: int = 1 << 16,
) -> TrajectoryLog:
    """Exact-in-law exclusion trajectory over [0, t_end] on a ring.

    The start must be ergodic: non-ergodic inputs are legal for the chain
    but every stationary experiment here requires ergodicity.  An
    alternating start has zero total rate and produces an empty log.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    sim = FepSimulation(
        config, sched, seed, record_capacity=record_capacity, check_every=check_every
    )
    sim._snap = []
    _run_with_observers(sim, t_end, observers, snapshot_times)
    log = sim.log()
    log.snapshots = sim._snap
    if sim.check_failures:
        raise RuntimeError("incremental event-set bookkeeping diverged from recomputation")
    return log


def run_zr(
    config: ZrConfig,
    sched: RateSchedule,
    t_end: float,
    seed: int,
    *,
    observers=None,
    snapshot_times=None,
    record_capacity: int = 0,
) -> TrajectoryLog:
    """Constant-rate zero-range trajectory over [0, t_end] on a ring."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    sim = ZrSimulation(config, sched, seed, record_capacity=record_capacity)
    sim._snap = []
    _run_with_observers(sim, t_end, observers, snapshot_times)
    log = sim.log()
    log.snapshots = sim._snap
    return log


@dataclass(frozen=True)
class CouplingState:
    omega: ZrConfig
    xi: ZrConfig
    discrepancy: int
    time: float


@dataclass
class CouplingRun:
    states: list
    disc_initial: int
    disc_min: int
    disc_max: int
    currents_omega: np.ndarray
    currents_xi: np.ndarray
    t_end: float
    n_events: int


def run_coupled(
    omega0: ZrConfig,
    xi0: ZrConfig,
    sched: RateSchedule,
    t_end: float,
    seed: int,
    *,
    sample_times=None,
    max_events: int = -1,
) -> CouplingRun:
    """Basic coupling of two zero-range chains with shared site clocks.

    When both chains hold a particle at the firing site the same jump is
    performed in both; otherwise only the occupied one moves.  Marginally
    each chain is a constant-rate zero-range process; the discrepancy
    count sum |xi - omega| is non-increasing, and exactly constant under
    sitewise ordering.
    """
    if omega0.geometry != xi0.geometry or not isinstance(omega0.geometry, Ring):
        raise ValueError("coupled chains need identical ring geometries")
    Kn = len(omega0)
    w1 = omega0.sites.astype(np.int64)
    w2 = xi0.sites.astype(np.int64)
    mem_a = np.empty(Kn, np.int64)
    pos_a = np.empty(Kn, np.int64)
    na, disc = K.coupled_init(w1, w2, mem_a, pos_a)
    imeta = np.array([na, 0, disc, disc, disc], np.int64)
    fmeta = np.zeros(1, np.float64)
    rng = K.seed_state(np.uint64(seed & (2**64 - 1)))
    cur1 = np.zeros(Kn, np.int64)
    cur2 = np.zeros(Kn, np.int64)

    states = []

    def snap(t):
        states.append(
            CouplingState(
                ZrConfig(w1.copy(), Ring(Kn)),
                ZrConfig(w2.copy(), Ring(Kn)),
                int(np.abs(w1 - w2).sum()),
                t,
            )
        )

    marks = sorted(float(t) for t in (sample_times or []))
    for tm in marks:
        if tm > t_end:
            break
        K.coupled_advance(w1, w2, mem_a, pos_a, imeta, fmeta, rng,
                          sched.p, sched.q, tm, -1, cur1, cur2)
        snap(tm)
    K.coupled_advance(w1, w2, mem_a, pos_a, imeta, fmeta, rng,
                      sched.p, sched.q, t_end, max_events, cur1, cur2)
    snap(float(fmeta[0]))
    return CouplingRun(
        states=states,
        disc_initial=disc,
        disc_min=int(imeta[K.C_DISC_MIN]),
        disc_max=int(imeta[K.C_DISC_MAX]),
        currents_omega=cur1,
        currents_xi=cur2,
        t_end=float(fmeta[0]),
        n_events=int(imeta[K.C_TOTAL]),
    )


def sup_current_moment(
    sched: RateSchedule,
    rho: float,
    t_end: float,
    replicas: int,
    seed: int,
    *,
    ring_sites: int | None = None,
    bond: int = 0,
) -> tuple[float, float]:
    """Monte Carlo second moment of sup_{t<=T} |centered current| at a bond.

    Replica chains start from the i.i.d. geometric state (stationary on
    the ring); the centering slope is the exact mean current rate
    N^gamma (2 rho - 1)/rho.
    """
    from .measures import sample_zr_geometric, theory

    if replicas < 2:
        raise ValueError("need at least 2 replicas for a standard error")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    Kn = ring_sites if ring_sites is not None else 2 * sched.N
    drift = sched.asym_rate * theory(rho).a
    sups = np.empty(replicas)
    for i in range(replicas):
        rep = seed_split(seed, i)
        rng = np.random.default_rng(seed_split(rep, 1))
        w0 = sample_zr_geometric(rho, Kn, rng)
        sim = ZrSimulation(w0, sched, seed_split(rep, 2), track_bond=bond, drift=drift)
        sim.run_until(t_end)
        sups[i] = sim.sup_centered_sq
    mean = float(sups.mean())
    stderr = float(sups.std(ddof=1) / math.sqrt(replicas))
    return mean, stderr


def tagged_empty_site(fep_log: TrajectoryLog, eta0: FepConfig):
    """Trajectory of the tagged empty site along a recorded run.

    Replays the event stream through the cluster mapping and returns
    (times, positions) sampled at every event, starting from the initial
    tagged position.  The identity X_0(t) = X_0(0) - J_zr(-1,0)(t) is
    checked exactly during the replay.
    """
    from .mapping import replay_events

    replay = replay_events(fep_log, eta0)
    if not replay["pass"]:
        raise RuntimeError(f"replay failed at event {replay['first_violation']}")
    return replay["times"], replay["x0_series"]
