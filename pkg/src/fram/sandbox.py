"""Sandboxed execution of non-resilient algorithms, and resilient splitting.

A non-resilient algorithm that only moves data by atomic swaps can be
interrupted anywhere without losing input values.  :func:`run_sandboxed`
runs such an algorithm under a hard step budget, confined to its input range
and a scratch area, then checks its work with a resilient verifier.  A round
that overruns, strays, or fails verification is discarded (scratch zeroed,
input left as is) and the next round starts from the current contents.

:func:`generic_resilient_split` narrows the split point down to a window of
about 2*delta cells with two resilient selections and hands only that window
to the sandbox.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numba import njit

from . import _core as core
from ._core import SandboxTimeout, SandboxViolation, read, swap, write
from .coins import COIN_WORDS, coin_bounded, coin_state
from .deterministic_select import deterministic_select
from .memory import ReliableStore, UnknownDelta
from .primitives import partition_kernel
from .randomized_select import randomized_select

DETERMINISTIC = "deterministic"
RANDOMIZED = "randomized"
VARIANTS = (DETERMINISTIC, RANDOMIZED)

FRAME_WORDS = 3   # lo, hi, k of a suspended median-of-medians call

# expected-time constant of the randomized inner select, in steps per cell
RAND_STEPS_PER_CELL = 8


@dataclass(frozen=True)
class SandboxConfig:
    """Limits of one sandboxed round.

    ``region`` is the input range the inner algorithm works on; ``scratch``
    is its flushable working area (None for in-place algorithms).  Both,
    and the budget, live in simulator registers while the round runs.
    """

    step_budget: int
    region: tuple
    scratch: Optional[tuple] = None


@dataclass
class RoundOutcome:
    verified: bool
    rounds_used: int
    output: object = None
    timeouts: int = 0
    violations: int = 0
    rejected: int = 0
    steps_per_round: list = field(default_factory=list)


def run_sandboxed(mem, inner: Callable, verifier: Callable, cfg: SandboxConfig,
                  *, between=None, max_rounds=None):
    """Repeat {inner under the sandbox; verifier} until the verifier accepts.

    ``inner()`` runs confined to ``cfg.region`` and ``cfg.scratch`` for at most
    ``cfg.step_budget`` steps; a timeout or an access outside those cells
    ends the round early.  ``verifier()`` then runs outside the sandbox and
    returns True to accept.  ``between(round_no)`` is called before every
    round (tests use it to inject faults).  ``max_rounds`` is a safety valve
    that raises RuntimeError; None means no limit.
    """
    out = RoundOutcome(verified=False, rounds_used=0)
    while True:
        if max_rounds is not None and out.rounds_used >= max_rounds:
            raise RuntimeError(f"no verified round within {max_rounds} rounds")
        out.rounds_used += 1
        if between is not None:
            between(out.rounds_used)
        start = mem.steps
        result = None
        try:
            with mem.sandbox(cfg.region, cfg.step_budget, cfg.scratch):
                result = inner()
        except SandboxTimeout:
            out.timeouts += 1
        except SandboxViolation:
            out.violations += 1
        out.steps_per_round.append(mem.steps - start)
        if verifier():
            out.verified = True
            out.output = result
            return out
        out.rejected += 1
        if cfg.scratch is not None:
            lo, hi = cfg.scratch
            core.fill(mem.machine, lo, hi, 0)


# -- non-resilient inner algorithms ---------------------------------------------


@njit(cache=True)
def quickselect_kernel(M, lo, hi, k, R):
    """Plain randomized quickselect by swaps; leaves [lo, hi) split after
    its k-th smallest.  Registers only."""
    M = core.unmanaged(M)
    l = lo
    r = hi
    while r - l > 1:
        xp = read(M, l + coin_bounded(R, r - l))
        leq, less = partition_kernel(M, 0, 1, 0, l, r, xp)
        if less < k <= leq:
            return xp
        if k <= less:
            r = l + less
        else:
            k -= leq
            l += leq
    return read(M, l)


@njit(cache=True, inline="always")
def _sort_small(M, a, m):
    # insertion sort of the m <= 5 cells at a, by adjacent swaps
    for j in range(1, m):
        i = j
        while i > 0 and read(M, a + i - 1) > read(M, a + i):
            swap(M, a + i - 1, a + i)
            i -= 1


@njit(cache=True)
def mom_select_kernel(M, lo, hi, k, S):
    """Plain median-of-medians selection in place; leaves [lo, hi) split
    after its k-th smallest.  Suspended calls are kept as (lo, hi, k) frames
    in the faulty scratch area starting at S."""
    M = core.unmanaged(M)
    sp = 0
    descend = True
    while True:
        if descend:
            n = hi - lo
            if n <= 5:
                _sort_small(M, lo, n)
                descend = False
                if sp == 0:
                    return read(M, lo + k - 1)
                sp -= 1
                f = S + FRAME_WORDS * sp
                lo = read(M, f)
                hi = read(M, f + 1)
                k = read(M, f + 2)
                continue
            groups = (n + 4) // 5
            for g in range(groups):
                a = lo + 5 * g
                m = min(5, hi - a)
                _sort_small(M, a, m)
                med = a + (m + 1) // 2 - 1
                if med != lo + g:
                    swap(M, med, lo + g)
            f = S + FRAME_WORDS * sp
            write(M, f, lo)
            write(M, f + 1, hi)
            write(M, f + 2, k)
            sp += 1
            hi = lo + groups
            k = (groups + 1) // 2
        else:
            # the medians call has returned: its answer sits at its k-th cell
            groups = (hi - lo + 4) // 5
            xp = read(M, lo + (groups + 1) // 2 - 1)
            leq, less = partition_kernel(M, 0, 1, 0, lo, hi, xp)
            if less < k <= leq:
                if sp == 0:
                    return xp
                sp -= 1
                f = S + FRAME_WORDS * sp
                lo = read(M, f)
                hi = read(M, f + 1)
                k = read(M, f + 2)
            elif k <= less:
                hi = lo + less
                descend = True
            else:
                k -= leq
                lo += leq
                descend = True


def mom_frames(n):
    """Frames the median-of-medians kernel can hold at once on n cells."""
    depth = 1
    while n > 5:
        n = (n + 4) // 5
        depth += 1
    return depth


@lru_cache(maxsize=None)
def mom_step_bound(n):
    """Worst-case fault-free steps of :func:`mom_select_kernel` on n cells.

    Group sorting costs at most 38 steps per group of five (ten comparisons
    of two reads and a swap, four failing comparisons) plus one swap to the
    front; a partition costs 2n; a frame costs 3 writes and 3 reads.  The
    partition leaves at most 7n/10 + 6 cells on the side that continues.
    """
    if n <= 5:
        return 38 + 1
    groups = (n + 4) // 5
    own = 39 * groups + 6 + 1 + 2 * n
    rest = min(n - 1, (7 * n) // 10 + 6)
    return own + mom_step_bound(groups) + mom_step_bound(rest)


def rand_step_budget(n):
    """Twice the expected-time allowance of the randomized inner select."""
    return 2 * (RAND_STEPS_PER_CELL * n + 16)


def nonresilient_select_det(mem, lo, hi, k, scratch):
    """Median-of-medians k-th smallest of [lo, hi), frames at ``scratch``.

    Not resilient: meant to run inside a sandbox.  Moves data only by swaps,
    so an interruption keeps the range's multiset.
    """
    return int(mom_select_kernel(mem.machine, lo, hi, k, scratch))


def nonresilient_select_rand(mem, lo, hi, k, seed=0, coins=None):
    """Quickselect k-th smallest of [lo, hi) in place, by swaps only.

    Not resilient: meant to run inside a sandbox.  ``coins`` (a state from
    :func:`fram.coins.coin_state`) continues an existing coin stream.
    """
    R = coin_state(seed) if coins is None else coins
    return int(quickselect_kernel(mem.machine, lo, hi, k, R))


# -- verification -----------------------------------------------------------------


@njit(cache=True)
def split_check_kernel(M, lo, hi, s):
    M = core.unmanaged(M)
    left_max = core.NEG_INF
    right_min = core.POS_INF
    for i in range(lo, lo + s):
        v = read(M, i)
        if v > left_max:
            left_max = v
    for i in range(lo + s, hi):
        v = read(M, i)
        if v < right_min:
            right_min = v
    return left_max <= right_min


def verify_split(mem, lo, hi, s):
    """One resilient scan: accept iff the largest value among the first s
    cells of [lo, hi) is at most the smallest value among the rest.

    An untainted pair out of order makes the scan see max >= a > b >= min,
    so an accepted split is correct for every untainted value.
    """
    if s <= 0 or s >= hi - lo:
        return True
    return bool(split_check_kernel(mem.machine, lo, hi, s))


# -- splitting ---------------------------------------------------------------------


def sandboxed_split(mem, lo, hi, s, variant=DETERMINISTIC, *, seed=0, store=None,
                    between=None, max_rounds=None):
    """Split [lo, hi) after its s-th smallest cell, sandboxed.

    On return every untainted value among the first s cells is at most every
    untainted value among the rest.  The deterministic variant uses a small
    scratch stack and needs at most alpha + 1 rounds; the randomized one
    works in place and needs about 2 alpha + 1 rounds on average.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    n = hi - lo
    if n <= 1 or s <= 0 or s >= n:
        return RoundOutcome(verified=True, rounds_used=1)
    store = store or ReliableStore()

    def verifier():
        return verify_split(mem, lo, hi, s)

    if variant == DETERMINISTIC:
        frames = mom_frames(n)
        base = mem.alloc(FRAME_WORDS * frames)
        scratch = (base, base + FRAME_WORDS * frames)
        cfg = SandboxConfig(mom_step_bound(n), (lo, hi), scratch)
        # registers: lo, hi, k, sp, scan counters
        store.reserve_words(8)
        try:
            return run_sandboxed(mem, lambda: nonresilient_select_det(mem, lo, hi, s, base),
                                 verifier, cfg, between=between, max_rounds=max_rounds)
        finally:
            store.release(8)
            mem.free(base)
    coins = coin_state(seed)
    cfg = SandboxConfig(rand_step_budget(n), (lo, hi))
    store.reserve_words(6 + COIN_WORDS)
    try:
        return run_sandboxed(mem, lambda: nonresilient_select_rand(mem, lo, hi, s, coins=coins),
                             verifier, cfg, between=between, max_rounds=max_rounds)
    finally:
        store.release(6 + COIN_WORDS)


def _select(mem, lo, n, k, variant, seed, store):
    if variant == DETERMINISTIC:
        return deterministic_select(mem, n, k, lo=lo, store=store)
    return randomized_select(mem, n, k, seed, lo=lo, store=store)


def _subseed(seed, j):
    return (seed * 0x9E3779B97F4A7C15 + j) & ((1 << 62) - 1)


def generic_resilient_split(mem, lo, hi, s, delta=None, variant=RANDOMIZED, *, seed=0,
                            store=None, stats=None):
    """Resilient split of [lo, hi) after position s (s cells on the left).

    Selects the (s - delta)-th smallest and partitions around it, then the
    (s + delta)-th of what remains right of the first pivot and partitions
    again; only the window between the two pivots, about 2*delta + O(alpha)
    cells, goes through :func:`sandboxed_split`.  A target that falls outside
    the window would only select its minimum or maximum, so that stage is
    skipped; for ranges of at most 2*delta cells everything goes straight to
    the sandbox.

    ``delta`` defaults to the memory's known fault bound.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if delta is None:
        delta = mem.delta
    if delta is None or delta < 0:
        raise UnknownDelta("generic split needs the fault bound")
    n = hi - lo
    info = {"stage": 0, "window": (0, n), "rounds": 0}
    if stats is not None:
        stats.update(info)
    if n <= 1 or s <= 0 or s >= n:
        return
    store = store or ReliableStore()
    # window [a, b) (relative to lo) still containing the split point
    a, b = 0, n
    for stage in (1, 2):
        m = b - a
        t = s - delta if stage == 1 else (s - a) + delta
        if t < 1 or t > m:
            # a clamped target selects a window extreme: nothing to narrow
            continue
        e = _select(mem, lo + a, m, t, variant, _subseed(seed, stage), store)
        leq, less = partition_kernel(mem.machine, 0, 1, 0, lo + a, lo + b, e)
        if a + less <= s <= a + leq:
            info.update(stage=stage, window=(a, b))
            if stats is not None:
                stats.update(info)
            return
        if s > a + leq:
            a += leq
        else:
            b = a + less
    info.update(stage=3, window=(a, b))
    out = sandboxed_split(mem, lo + a, lo + b, s - a, variant,
                          seed=_subseed(seed, 3), store=store)
    info["rounds"] = out.rounds_used
    if stats is not None:
        stats.update(info)
