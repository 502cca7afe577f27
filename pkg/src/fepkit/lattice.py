"""Configuration types for the exclusion and zero-range chains.

Exclusion states live on a periodic ring or on a finite box with optional
fixed boundary values; zero-range states are non-negative integer site
counts on the same geometries.  The jump constraints and the
ergodic/frozen/transient classification of exclusion states live here too.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Ring",
    "Box",
    "FepConfig",
    "ZrConfig",
    "Classification",
    "classify",
    "is_alternating",
    "jump_rates",
    "apply_swap",
    "zr_apply_jump",
    "dump_config",
    "parse_config",
]


@dataclass(frozen=True)
class Ring:
    """Periodic geometry with sites 0..length-1."""

    length: int

    def __post_init__(self):
        if self.length < 2:
            raise ValueError(f"ring length must be >= 2, got {self.length}")


@dataclass(frozen=True)
class Box:
    """Finite segment first..last with optional fixed boundary occupations.

    ``left`` / ``right`` are the occupations at first-1 / last+1; ``None``
    means the value is unknown and edge checks involving it are skipped.
    Boundary values only make sense for exclusion configs.
    """

    first: int
    last: int
    left: int | None = None
    right: int | None = None

    def __post_init__(self):
        if self.last < self.first:
            raise ValueError("empty box")
        for b in (self.left, self.right):
            if b is not None and b not in (0, 1):
                raise ValueError(f"boundary value must be 0, 1 or None, got {b}")

    @property
    def length(self) -> int:
        return self.last - self.first + 1


def _as_sites(values, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("sites must be a nonempty 1-d array")
    return arr


@dataclass(frozen=True)
class FepConfig:
    """Exclusion configuration: one occupation bit per site.

    Instances are immutable; moves return new configs.  The per-event
    bookkeeping of jump-eligible sites is the simulation engine's job
    (see ``dynamics``), not this container's.
    """

    sites: np.ndarray
    geometry: Ring | Box

    def __post_init__(self):
        object.__setattr__(self, "sites", _as_sites(self.sites, np.uint8))
        if not np.all(self.sites <= 1):
            raise ValueError("exclusion occupations must be 0 or 1")
        if isinstance(self.geometry, Ring) and self.geometry.length < 4:
            raise ValueError("exclusion rings need at least 4 sites")
        if len(self.sites) != self.geometry.length:
            raise ValueError(
                f"got {len(self.sites)} sites for geometry of length {self.geometry.length}"
            )

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def n_particles(self) -> int:
        return int(self.sites.sum())

    def occupation(self, x: int) -> int:
        """Occupation at site x, resolving ring wrap or box boundaries.

        Raises ValueError on a box when x is outside and no boundary value
        covers it.
        """
        g = self.geometry
        if isinstance(g, Ring):
            return int(self.sites[x % g.length])
        if x < g.first:
            if x == g.first - 1 and g.left is not None:
                return g.left
            raise ValueError(f"site {x} not resolvable on {g}")
        if x > g.last:
            if x == g.last + 1 and g.right is not None:
                return g.right
            raise ValueError(f"site {x} not resolvable on {g}")
        return int(self.sites[x - g.first])

    def index_of(self, x: int) -> int:
        g = self.geometry
        if isinstance(g, Ring):
            return x % g.length
        if not g.first <= x <= g.last:
            raise ValueError(f"site {x} outside box {g}")
        return x - g.first


@dataclass(frozen=True)
class ZrConfig:
    """Zero-range configuration: non-negative particle count per site."""

    sites: np.ndarray
    geometry: Ring | Box

    def __post_init__(self):
        object.__setattr__(self, "sites", _as_sites(self.sites, np.int64))
        if np.any(self.sites < 0):
            raise ValueError("zero-range occupations must be >= 0")
        if len(self.sites) != self.geometry.length:
            raise ValueError(
                f"got {len(self.sites)} sites for geometry of length {self.geometry.length}"
            )

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def n_particles(self) -> int:
        return int(self.sites.sum())

    def index_of(self, y: int) -> int:
        g = self.geometry
        if isinstance(g, Ring):
            return y % g.length
        if not g.first <= y <= g.last:
            raise ValueError(f"site {y} outside box {g}")
        return y - g.first


class Classification(enum.Enum):
    ERGODIC = "ergodic"
    FROZEN = "frozen"
    TRANSIENT = "transient"


def _edge_pairs(config: FepConfig):
    """Yield the occupation pairs of every edge, including boundary edges."""
    eta = config.sites
    g = config.geometry
    if isinstance(g, Ring):
        yield from zip(eta, np.roll(eta, -1))
        return
    if g.left is not None:
        yield g.left, eta[0]
    yield from zip(eta[:-1], eta[1:])
    if g.right is not None:
        yield eta[-1], g.right


def classify(config: FepConfig) -> Classification:
    """Classify a configuration as ergodic, frozen or transient.

    Ergodic: every edge carries at least one particle (no two adjacent
    empty sites).  Frozen: every edge carries at most one particle (no
    two adjacent particles).  Alternating configurations satisfy both and
    are reported ERGODIC; use :func:`is_alternating` to detect them.
    """
    all_ge1 = True
    all_le1 = True
    for a, b in _edge_pairs(config):
        s = int(a) + int(b)
        if s < 1:
            all_ge1 = False
        if s > 1:
            all_le1 = False
        if not (all_ge1 or all_le1):
            return Classification.TRANSIENT
    if all_ge1:
        return Classification.ERGODIC
    return Classification.FROZEN


def is_alternating(config: FepConfig) -> bool:
    """True when every edge carries exactly one particle."""
    return all(int(a) + int(b) == 1 for a, b in _edge_pairs(config))


def jump_rates(config: FepConfig, x: int) -> tuple[int, int]:
    """Jump constraints at the edge (x, x+1).

    Returns ``(c_right, c_left)`` where c_right gates the particle at x
    jumping right and c_left gates the particle at x+1 jumping left:

        c_right = eta[x-1] * eta[x] * (1 - eta[x+1])
        c_left  = (1 - eta[x]) * eta[x+1] * eta[x+2]

    On a box all four sites x-1..x+2 must be resolvable.
    """
    occ = config.occupation
    em1, e0, e1, e2 = occ(x - 1), occ(x), occ(x + 1), occ(x + 2)
    c_right = em1 * e0 * (1 - e1)
    c_left = (1 - e0) * e1 * e2
    return c_right, c_left


def apply_swap(config: FepConfig, x: int, x_next: int) -> FepConfig:
    """Swap the (distinct) occupations at the edge (x, x+1).

    Swapping equal values would be a silent no-op, which only ever happens
    when an engine selected an illegal move, so it is rejected.
    """
    if x_next != x + 1:
        raise ValueError(f"apply_swap acts on an edge, got sites {x}, {x_next}")
    i = config.index_of(x)
    j = config.index_of(x_next)
    sites = config.sites.copy()
    if sites[i] == sites[j]:
        raise RuntimeError(f"swap of equal occupations at edge ({x},{x+1})")
    sites[i], sites[j] = sites[j], sites[i]
    return FepConfig(sites, config.geometry)


def zr_apply_jump(config: ZrConfig, src: int, dst: int) -> ZrConfig:
    """Move one zero-range particle from ``src`` to the adjacent ``dst``.

    The constant-rate constraint (source occupied) is the caller's job to
    respect when drawing moves; an empty source here is an engine bug.
    """
    g = config.geometry
    if isinstance(g, Ring):
        if (dst - src) % g.length not in (1, g.length - 1):
            raise ValueError(f"sites {src} and {dst} are not adjacent")
        i, j = src % g.length, dst % g.length
    else:
        if abs(dst - src) != 1:
            raise ValueError(f"sites {src} and {dst} are not adjacent")
        i, j = src - g.first, dst - g.first
        if not (0 <= i < g.length and 0 <= j < g.length):
            raise ValueError("jump outside box")
    if config.sites[i] == 0:
        raise RuntimeError(f"zero-range jump from empty site {src}")
    sites = config.sites.copy()
    sites[i] -= 1
    sites[j] += 1
    return ZrConfig(sites, g)


# ---------------------------------------------------------------------------
# plain-text dump format
# ---------------------------------------------------------------------------


def _geometry_header(g: Ring | Box) -> str:
    if isinstance(g, Ring):
        return f"geometry=ring,L={g.length}"
    bl = "-" if g.left is None else str(g.left)
    br = "-" if g.right is None else str(g.right)
    return f"geometry=box,first={g.first},last={g.last},bl={bl},br={br}"


def dump_config(config: FepConfig | ZrConfig) -> str:
    """Two-line text form: a geometry header then the site values."""
    header = _geometry_header(config.geometry)
    if isinstance(config, FepConfig):
        body = "".join("1" if v else "0" for v in config.sites)
    else:
        body = " ".join(str(int(v)) for v in config.sites)
    return f"{header}\n{body}\n"


def _parse_geometry(header: str) -> Ring | Box:
    fields = dict(part.split("=", 1) for part in header.strip().split(","))
    kind = fields.pop("geometry")
    if kind == "ring":
        return Ring(int(fields["L"]))
    if kind == "box":
        bl, br = fields["bl"], fields["br"]
        return Box(
            int(fields["first"]),
            int(fields["last"]),
            None if bl == "-" else int(bl),
            None if br == "-" else int(br),
        )
    raise ValueError(f"unknown geometry kind {kind!r}")


def parse_config(text: str) -> FepConfig | ZrConfig:
    """Inverse of :func:`dump_config`.

    A body of bare 0/1 characters parses as an exclusion config; a
    whitespace-separated integer list parses as a zero-range config.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != 2:
        raise ValueError("expected a header line and a body line")
    geometry = _parse_geometry(lines[0])
    body = lines[1].strip()
    if " " in body:
        return ZrConfig(np.array([int(tok) for tok in body.split()]), geometry)
    return FepConfig(np.array([int(ch) for ch in body]), geometry)
