"""In-place randomized resilient selection.

Quickselect whose bounds lb and ub live in reliable registers.  Every pivot
is clamped into [lb, ub] before partitioning, so a corrupted cell can steer
the search off course only by as many ranks as there were corruptions.  No
faulty memory is used beyond the input range.
"""

import numpy as np
from numba import njit

from . import _core as core
from ._core import NEG_INF, POS_INF, read
from .coins import COIN_WORDS, coin_bounded, coin_state
from .memory import ReliableStore
from .primitives import partition_kernel

# l, r, lb, ub, x_p, k and the two partition counts
_SELECT_WORDS = 8

# stats slots
RS_ITERATIONS = 0
RS_WENT_LEFT = 1
RS_WENT_RIGHT = 2
N_RS = 3


@njit(cache=True)
def rand_select_kernel(M, lo, n, k, R, stats, hist):
    """k-th smallest (1-based) of [lo, lo+n).  ``hist`` receives (lb, ub)
    after each iteration while it has room."""
    M = core.unmanaged(M)
    l = lo
    r = lo + n
    lb = NEG_INF
    ub = POS_INF
    while True:
        if r - l <= 1:
            v = read(M, l)
            return min(max(v, lb), ub)
        stats[RS_ITERATIONS] += 1
        xp = read(M, l + coin_bounded(R, r - l))
        xp = min(max(xp, lb), ub)
        leq, less = partition_kernel(M, 0, 1, 0, l, r, xp)
        if less < k <= leq:
            return xp
        # Every value in the window lies beyond a bound.  Each further pivot
        # would clamp to that bound, so the answer is the bound itself.
        if leq == 0 and xp == ub:
            return ub
        if less == r - l and xp == lb:
            return lb
        if k <= less:
            r = l + less
            ub = xp
            stats[RS_WENT_LEFT] += 1
        else:
            k -= leq
            l += leq
            lb = xp
            stats[RS_WENT_RIGHT] += 1
        t = stats[RS_ITERATIONS] - 1
        if t < hist.shape[0]:
            hist[t, 0] = lb
            hist[t, 1] = ub


def randomized_select(mem, n, k, rng_seed=0, *, lo=0, store=None, stats=None, history=0):
    """Resilient k-th smallest (1-based) of the n cells starting at ``lo``.

    Correct with probability 1: the result lies in the alpha-rank of k in
    the initial contents whatever the corruption schedule.  Expected
    O(n + alpha) steps.  ``history`` > 0 records up to that many (lb, ub)
    pairs into ``stats["bounds"]``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    store = store or ReliableStore()
    store.reserve_words(_SELECT_WORDS + COIN_WORDS)
    R = coin_state(rng_seed)
    st = np.zeros(N_RS, np.int64)
    hist = np.zeros((history, 2), np.int64)
    try:
        e = rand_select_kernel(mem.machine, lo, n, k, R, st, hist)
    finally:
        store.release(_SELECT_WORDS + COIN_WORDS)
    if stats is not None:
        stats.update(iterations=int(st[RS_ITERATIONS]), went_left=int(st[RS_WENT_LEFT]),
                     went_right=int(st[RS_WENT_RIGHT]))
        if history:
            used = min(history, int(st[RS_WENT_LEFT] + st[RS_WENT_RIGHT]))
            stats["bounds"] = [tuple(map(int, row)) for row in hist[:used]]
    return int(e)
