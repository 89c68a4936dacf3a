"""Counter-derived random streams for walk kernels.

Two RNG families are used throughout the package and recorded in result
metadata:

* distribution-level draws (Poisson counts, shuffles, diagnostics) use
  ``numpy.random.Generator`` on a Philox bit generator keyed by
  ``(master_seed, stream_id)`` -- Philox is counter-based, so distinct keys
  give statistically independent streams;
* raw walk steps inside numba kernels use xoshiro256++ seeded through a
  splitmix64 chain from the same ``(master_seed, stream_id)`` pair.

Both are fully deterministic: a (master_seed, stream_id) pair always
reproduces the same realization, independent of thread scheduling.
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64

_MASK = uint64(0xFFFFFFFFFFFFFFFF)
_SPLITMIX_GAMMA = uint64(0x9E3779B97F4A7C15)
_STREAM_SALT = uint64(0xA0761D6478BD642F)


@njit(cache=True, inline="always")
def splitmix64(z):
    """One splitmix64 scrambling round (uint64 in, uint64 out)."""
    z = (z + _SPLITMIX_GAMMA) & _MASK
    z = ((z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)) & _MASK
    z = ((z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)) & _MASK
    return z ^ (z >> uint64(31))


@njit(cache=True)
def seed_state(master_seed, stream_id):
    """xoshiro256++ state vector derived from (master_seed, stream_id)."""
    s = np.empty(4, dtype=np.uint64)
    z = splitmix64(uint64(master_seed) ^ _STREAM_SALT)
    z = splitmix64(z ^ uint64(stream_id))
    for i in range(4):
        z = splitmix64(z)
        s[i] = z
    return s


@njit(cache=True, inline="always")
def _rotl(x, k):
    return ((x << uint64(k)) | (x >> uint64(64 - k))) & _MASK


@njit(cache=True, inline="always")
def next_u64(s):
    """Advance a xoshiro256++ state in place and return 64 random bits."""
    out = (_rotl((s[0] + s[3]) & _MASK, 23) + s[0]) & _MASK
    t = (s[1] << uint64(17)) & _MASK
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return out


@njit(cache=True, inline="always")
def next_unit(s):
    """Uniform double in [0, 1) with 53 random bits."""
    return float(next_u64(s) >> uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, inline="always")
def next_direction(s, two_d):
    """Uniform draw from {0, ..., 2d-1}, exact (rejection sampling).

    Directions encode axis = dir >> 1 and sign = +1 for even, -1 for odd.
    """
    if two_d == 4:
        return int(next_u64(s) & uint64(3))
    # smallest power of two >= two_d
    nbits = 1
    while (1 << nbits) < two_d:
        nbits += 1
    mask = uint64((1 << nbits) - 1)
    while True:
        u = next_u64(s)
        # a 64-bit word yields 64 // nbits candidate draws
        for _ in range(64 // nbits):
            v = int(u & mask)
            if v < two_d:
                return v
            u = u >> uint64(nbits)
    return 0  # pragma: no cover


def philox_generator(master_seed: int, stream_id: int = 0) -> np.random.Generator:
    """numpy Generator on a Philox stream keyed by (master_seed, stream_id)."""
    key = np.array([master_seed & 0xFFFFFFFFFFFFFFFF, stream_id & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_stream(stream_id: int, index: int) -> int:
    """Deterministic child stream id (splitmix64 hash of parent and index).

    Used to hand independent streams to sub-tasks (per-trial, per-run,
    per-stage) without coordination; collisions are ~2^-64.
    """
    z = (stream_id * 0x9E3779B97F4A7C15 + 0x632BE59BD9B4E019) & 0xFFFFFFFFFFFFFFFF
    z ^= (index + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    # keep ids comfortably inside int64 so (stream + trial) never overflows
    return int(splitmix64(np.uint64(z))) & 0x3FFFFFFFFFFFFFFF
