"""Algorithm coins: a counter-based 64-bit generator kept in reliable words.

The state is two words, a key and a counter.  Output j is the splitmix64
finalizer applied to ``key + j * gamma``, so the stream is reproducible from
the seed alone and never touches faulty memory.
"""

import numpy as np
from numba import njit

COIN_WORDS = 2
_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def coin_state(seed):
    """Fresh generator state for ``seed`` (any Python int)."""
    key = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(0xD1B54A32D192ED03)
    return np.array([key.view(np.int64), 0], dtype=np.int64)


@njit(cache=True)
def coin_next(R):
    z = np.uint64(R[0]) + np.uint64(R[1]) * _GAMMA
    R[1] += 1
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def coin_bounded(R, n):
    """Integer in [0, n) by a 64x64 -> high-64 multiply (no rejection loop).

    The bias is below n / 2**64, far below anything a test can see.
    """
    z = coin_next(R)
    lo_z = z & np.uint64(0xFFFFFFFF)
    hi_z = z >> np.uint64(32)
    un = np.uint64(n)
    lo_n = un & np.uint64(0xFFFFFFFF)
    hi_n = un >> np.uint64(32)
    # high word of the 128-bit product z * n
    t = lo_z * lo_n
    mid1 = hi_z * lo_n + (t >> np.uint64(32))
    mid2 = lo_z * hi_n + (mid1 & np.uint64(0xFFFFFFFF))
    hi = hi_z * hi_n + (mid1 >> np.uint64(32)) + (mid2 >> np.uint64(32))
    return np.int64(hi)
