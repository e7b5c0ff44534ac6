"""Deterministic randomness.

Every random draw in the toolkit flows from a single master seed through
``derive_seed(master, *path)``, where the path names the consumer, e.g.
``derive_seed(seed, "init", layer)`` for weight init or
``derive_seed(seed, "shuffle", epoch)`` for batch shuffling.  The derivation
is a splitmix64 byte mixer, so identical (seed, path) pairs give identical
streams on every platform.

Consumers either draw from ``SplitMix64`` directly (power iteration start
vectors) or hand the derived seed to a ``numpy.random.Generator``.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """64-bit splitmix PRNG; tiny, seedable, and platform independent."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK
        return _mix(self._state)

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform_signed(self, n: int) -> np.ndarray:
        """Array of n uniforms in [-1, 1)."""
        return np.array([2.0 * self.uniform() - 1.0 for _ in range(n)])


def derive_seed(master: int, *path: int | str) -> int:
    """Mix a master seed with a label path into an independent 64-bit seed."""
    h = _mix(master & _MASK ^ 0x9E3779B97F4A7C15)
    for item in path:
        if isinstance(item, str):
            data = item.encode("utf-8")
        else:
            data = int(item).to_bytes(8, "little", signed=True)
        for byte in data:
            h = _mix(h ^ byte)
    return h


def generator(master: int, *path: int | str) -> np.random.Generator:
    """numpy Generator seeded from the derived (master, path) seed."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, *path)))
