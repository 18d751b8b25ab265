"""Seeded stateless hashing for procedural content.

Everything procedural in this package derives randomness from
(seed, integer coordinates) through a splitmix64-style mixer, so results
never depend on evaluation order or on global RNG state.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)

_U64 = np.uint64


def mix64(x: np.ndarray | int) -> np.ndarray:
    """splitmix64 finalizer; wraps modulo 2^64."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> _U64(30))) * _MIX_A
        z = (z ^ (z >> _U64(27))) * _MIX_B
        return z ^ (z >> _U64(31))


def hash_ints(seed: int, *coords: np.ndarray | int) -> np.ndarray:
    """Hash a seed plus integer coordinates into uint64 values.

    Coordinates broadcast against each other, so mixed scalars and arrays
    are fine. Negative integers are folded in via two's complement.
    """
    h = mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    for c in coords:
        c64 = np.asarray(c, dtype=np.int64).astype(np.uint64)
        h = mix64(h ^ c64)
    return h


def unit_floats(h: np.ndarray) -> np.ndarray:
    """Map uint64 hashes to floats in [0, 1)."""
    return (np.asarray(h, dtype=np.uint64) >> _U64(11)).astype(np.float64) * (2.0**-53)


def hash_unit(seed: int, *coords: np.ndarray | int) -> np.ndarray:
    """Convenience: hash_ints then map to [0, 1)."""
    return unit_floats(hash_ints(seed, *coords))


def derive_seed(seed: int, tag: str) -> int:
    """Derive an independent integer seed for a named sub-stream."""
    tag_code = int.from_bytes(tag.encode("utf-8")[:8].ljust(8, b"\0"), "little")
    return int(hash_ints(seed, tag_code))
