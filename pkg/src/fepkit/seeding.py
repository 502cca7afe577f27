"""Deterministic seed derivation for replica streams.

``seed_split`` is a splitmix64 step: the master seed plus (index+1) times
the 64-bit golden ratio, pushed through the splitmix finalizer.  The
finalizer is a bijection of Z/2^64 and the pre-mix values are distinct
for distinct indices, so distinct indices provably give distinct seeds.
The derivation is part of the reproducibility contract and must not
change between releases.
"""

from __future__ import annotations

__all__ = ["seed_split", "MASK64"]

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def seed_split(master_seed: int, index: int) -> int:
    """Derive the per-replica seed for ``index`` from ``master_seed``."""
    if index < 0:
        raise ValueError("replica index must be >= 0")
    return _mix((master_seed + (index + 1) * _GOLDEN) & MASK64)
