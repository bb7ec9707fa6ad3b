"""Deterministic resilient selection (median of medians with a counter).

Each call of size n > 50 first looks for a pivot whose rank lies in
[f, n - f], with f = floor(3n/10) - floor(n/11) - 6, by recursing on the
medians of groups of five.  It then recurses on a padded subarray of size
exactly n - f and accepts the returned element if a fresh rank scan puts it
within n_v of k.  A failure at either stage repeats the whole call and adds
to a reliable counter; once the counter reaches n the run stops with the
current candidate, since at that point any element is an acceptable answer.

The fault bound is never consulted.
"""

import numpy as np
from numba import njit

from . import _core as core
from ._core import NEG_INF, POS_INF, read, write
from .memory import BS_USED, ReliableStore
from .primitives import partition_kernel, rank_kernel
from .recursion_stack import (
    BASE_CASE,
    FIRST,
    FRAME_BITS,
    G_DEPTH,
    G_MAX_DEPTH,
    G_N,
    G_X,
    N_G,
    SECOND,
    RecursionStack,
    child_size,
    f_cut,
    stack_close,
    stack_init,
    stack_pop,
    stack_push,
    stack_capacity,
)

N0 = BASE_CASE

# kernel program counter
_START = 0
_FIRST_PHASE = 1
_AFTER_FIRST = 2
_AFTER_SECOND = 3
_RETURN = 4

# stats slots
ST_COUNTER = 0
ST_FIRST_REPEATS = 1
ST_SECOND_REPEATS = 2
ST_HALTED = 3
ST_NODES = 4
ST_MAX_DEPTH = 5
ST_BASE_CASES = 6
N_STATS = 7

# registers the kernel keeps besides the stack's own and the base-case buffer
_KERNEL_WORDS = 10


@njit(cache=True, inline="always")
def _clamp(x, lb, ub):
    if x < lb:
        return lb
    if x > ub:
        return ub
    return x


@njit(cache=True)
def _median_group(M, lo, m, buf):
    """Lower median of the m <= 5 cells at lo, by insertion into registers."""
    M = core.unmanaged(M)
    for j in range(m):
        v = read(M, lo + j)
        i = j
        while i > 0 and buf[i - 1] > v:
            buf[i] = buf[i - 1]
            i -= 1
        buf[i] = v
    return buf[(m + 1) // 2 - 1]


@njit(cache=True)
def _write_medians(M, x, n, dst, buf):
    M = core.unmanaged(M)
    groups = (n + 4) // 5
    for g in range(groups):
        lo = x + 5 * g
        m = min(5, x + n - lo)
        write(M, dst + g, _median_group(M, lo, m, buf))


@njit(cache=True)
def _base_case(M, x, n, k, buf):
    M = core.unmanaged(M)
    for j in range(n):
        v = read(M, x + j)
        i = j
        while i > 0 and buf[i - 1] > v:
            buf[i] = buf[i - 1]
            i -= 1
        buf[i] = v
    return buf[k - 1]


@njit(cache=True)
def select_kernel(M, G, bits, meta, x0, n, k, use_counter, stats, buf):
    M = core.unmanaged(M)
    lb = NEG_INF
    ub = POS_INF
    stats[ST_NODES] += 1
    if n <= N0:
        stats[ST_BASE_CASES] += 1
        return _base_case(M, x0, n, k, buf)
    stack_init(M, G, x0, n, k, lb, ub)
    c = 0
    e = 0
    pc = _START
    while True:
        nu = G[G_N]
        xu = G[G_X]
        if pc == _START:
            if nu <= N0:
                stats[ST_BASE_CASES] += 1
                e = _clamp(_base_case(M, xu, nu, k, buf), lb, ub)
                pc = _RETURN
            else:
                pc = _FIRST_PHASE
        elif pc == _FIRST_PHASE:
            m = (nu + 4) // 5
            kv = (m + 1) // 2
            xs = stack_push(M, G, bits, meta, FIRST, -1, kv, NEG_INF, POS_INF)
            _write_medians(M, xu, nu, xs, buf)
            k = kv
            lb = NEG_INF
            ub = POS_INF
            stats[ST_NODES] += 1
            pc = _START
        elif pc == _AFTER_FIRST:
            xp = _clamp(e, lb, ub)
            leq, less = partition_kernel(M, 0, 1, 0, xu, xu + nu, xp)
            f = f_cut(nu)
            if leq >= f and less <= nu - f:
                if less < k <= leq:
                    e = xp
                    pc = _RETURN
                elif k <= less:
                    stack_push(M, G, bits, meta, SECOND, xu, k, lb, xp)
                    ub = xp
                    stats[ST_NODES] += 1
                    pc = _START
                else:
                    stack_push(M, G, bits, meta, SECOND, xu + f, k - f, xp, ub)
                    k -= f
                    lb = xp
                    stats[ST_NODES] += 1
                    pc = _START
            else:
                stats[ST_FIRST_REPEATS] += 1
                if use_counter:
                    c += nu // 33
                    if c >= n:
                        e = xp
                        break
                pc = _FIRST_PHASE
        elif pc == _AFTER_SECOND:
            nv = child_size(SECOND, nu)
            leq, less = rank_kernel(M, xu, xu + nu, e)
            lo = min(less + 1, leq)
            if lo <= k + nv and leq >= k - nv:
                e = _clamp(e, lb, ub)
                pc = _RETURN
            else:
                stats[ST_SECOND_REPEATS] += 1
                if use_counter:
                    c += nv
                    if c >= n:
                        break
                pc = _FIRST_PHASE
        else:
            if G[G_DEPTH] == 0:
                break
            kind, k, lb, ub = stack_pop(M, G, bits, meta)
            # decoded values may be garbage after heavy damage; keep them usable
            nu = G[G_N]
            if k < 1:
                k = 1
            elif k > nu:
                k = nu
            if lb > ub:
                lb, ub = ub, lb
            pc = _AFTER_FIRST if kind == FIRST else _AFTER_SECOND
    if G[G_DEPTH] != 0:
        stats[ST_HALTED] = 1
        e = _clamp(e, lb, ub)
        meta[BS_USED] -= FRAME_BITS * G[G_DEPTH]
        G[G_DEPTH] = 0
    stats[ST_COUNTER] = c
    stats[ST_MAX_DEPTH] = G[G_MAX_DEPTH]
    stack_close(M, G)
    return e


def _check_args(n, k):
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")


def median_of_five(mem, lo, hi):
    """The ceil(m/2)-th smallest of the m = hi - lo <= 5 cells, one read each."""
    m = hi - lo
    if not 1 <= m <= 5:
        raise ValueError("a group holds 1 to 5 cells")
    return int(_median_group(mem.machine, lo, m, np.zeros(5, np.int64)))


def base_case_select(mem, lo, hi, k, store=None):
    """k-th smallest of at most N0 cells, sorted inside reliable registers."""
    n = hi - lo
    if n > N0:
        raise ValueError(f"base case holds at most {N0} cells")
    _check_args(n, k)
    store = store or ReliableStore()
    buf = store.buffer(n)
    try:
        return int(_base_case(mem.machine, lo, n, k, buf))
    finally:
        store.release(buf)


def deterministic_select(mem, n, k, *, lo=0, store=None, counter=True, stats=None):
    """Resilient k-th smallest (1-based) of the n cells starting at ``lo``.

    The result is within the alpha-rank of k in the initial contents under
    every corruption schedule.  With ``counter`` on (the default) the step
    count is linear in n regardless of how many corruptions occur.  Pass a
    dict as ``stats`` to receive counters of the run.
    """
    _check_args(n, k)
    store = store or ReliableStore()
    cells, depth = stack_capacity(n, N0)
    mem.reserve(cells, regions=3 * (depth + 2))
    buf = store.buffer(N0)
    store.reserve_words(N_G + _KERNEL_WORDS)
    G = np.zeros(N_G, np.int64)
    st = np.zeros(N_STATS, np.int64)
    try:
        e = select_kernel(mem.machine, G, store.bitstack, store.meta, lo, n, k,
                          bool(counter), st, buf)
    finally:
        store.release(buf)
        store.release(N_G + _KERNEL_WORDS)
    if stats is not None:
        stats.update(
            counter=int(st[ST_COUNTER]),
            first_repeats=int(st[ST_FIRST_REPEATS]),
            second_repeats=int(st[ST_SECOND_REPEATS]),
            halted=bool(st[ST_HALTED]),
            nodes=int(st[ST_NODES]),
            max_depth=int(st[ST_MAX_DEPTH]),
            base_cases=int(st[ST_BASE_CASES]),
            peak_bits=store.peak_bits,
        )
    return int(e)


__all__ = [
    "N0",
    "RecursionStack",
    "base_case_select",
    "deterministic_select",
    "median_of_five",
]
