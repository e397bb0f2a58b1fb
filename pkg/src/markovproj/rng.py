"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, particle, step, slot)``, so
any subset of particles can be advanced by any worker in any order and still
see the same numbers.  The block function is Philox4x32-10, vectorized over
numpy ``uint64`` arrays holding 32-bit words.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function.

    Parameters
    ----------
    counter : sequence of 4 array_like of uint32 values
        Counter words; they broadcast against each other.
    key : sequence of 2 ints
        Key words.

    Returns
    -------
    tuple of 4 ndarray of dtype uint64, each holding a 32-bit output word.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in counter))
    c0, c1, c2, c3 = (c & _MASK for c in (c0, c1, c2, c3))
    k0 = np.uint64(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint64(int(key[1]) & 0xFFFFFFFF)
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT) ^ c1 ^ k0,
            p1 & _MASK,
            (p0 >> _SHIFT) ^ c3 ^ k1,
            p0 & _MASK,
        )
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


class CounterStreams:
    """Keyed uniform/normal draws indexed by particle, step and slot.

    ``stream`` separates independent uses (Brownian increments, thinning
    proposals, factor switches, initial conditions) so that two simulators
    sharing a stream id and seed see identical numbers.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be in [0, 2**64), got {seed}")
        self.seed = seed
        self._key = (seed & 0xFFFFFFFF, seed >> 32)

    def uniform2(self, stream, particles, step, slot=0):
        """Two independent uniforms on the open interval (0, 1) per particle.

        Each pair uses one Philox block; 53-bit resolution, never 0 or 1.
        """
        x0, x1, x2, x3 = philox4x32(
            (particles, np.uint64(step), np.uint64(slot), np.uint64(stream)), self._key
        )
        scale = 1.0 / 9007199254740992.0  # 2**-53
        u = ((x0 >> np.uint64(5)) * np.uint64(67108864) + (x1 >> np.uint64(6))).astype(np.float64)
        v = ((x2 >> np.uint64(5)) * np.uint64(67108864) + (x3 >> np.uint64(6))).astype(np.float64)
        return (u + 0.5) * scale, (v + 0.5) * scale

    def uniform(self, stream, particles, step, slot=0):
        return self.uniform2(stream, particles, step, slot)[0]

    def normal(self, stream, particles, step, slot=0):
        """Standard normals by inversion of the first uniform of the block."""
        return ndtri(self.uniform(stream, particles, step, slot))
