"""Resilient building blocks: clamping, ranking, partitioning and replicated
values stored as 2g+1 copies with majority decoding."""

from dataclasses import dataclass
from typing import NamedTuple

from numba import njit

from . import _core as core
from ._core import read, swap_records


class RankResult(NamedTuple):
    k: int       # values <= e seen by the scan (rank^c)
    less: int    # values < e seen by the same scan


def clamp(x, lb, ub):
    if lb > ub:
        raise AssertionError(f"clamp bounds inverted: {lb} > {ub}")
    return min(max(x, lb), ub)


@njit(cache=True)
def rank_kernel(M, lo, hi, e):
    M = core.unmanaged(M)
    less = 0
    leq = 0
    for i in range(lo, hi):
        v = read(M, i)
        if v <= e:
            leq += 1
            if v < e:
                less += 1
    return leq, less


@njit(cache=True)
def partition_kernel(M, base, stride, key, lo, hi, e):
    """Three-way in-place partition of records lo..hi-1 around e.

    Record j starts at ``base + j*stride``; its key is ``key`` cells in.  One
    read per record, one atomic record swap per move.  Returns the number of
    records <= e and < e as seen by the scan.
    """
    M = core.unmanaged(M)
    lt = lo
    i = lo
    gt = hi
    while i < gt:
        v = read(M, base + i * stride + key)
        if v < e:
            if lt != i:
                swap_records(M, base + lt * stride, base + i * stride, stride)
            lt += 1
            i += 1
        elif v > e:
            gt -= 1
            if gt != i:
                swap_records(M, base + i * stride, base + gt * stride, stride)
        else:
            i += 1
    return gt - lo, lt - lo


@njit(cache=True)
def majority_kernel(M, lo, hi):
    """Single-pass majority vote (Boyer-Moore) over cells lo..hi-1."""
    M = core.unmanaged(M)
    cand = 0
    count = 0
    for i in range(lo, hi):
        v = read(M, i)
        if count == 0:
            cand = v
            count = 1
        elif v == cand:
            count += 1
        else:
            count -= 1
    return cand


def resilient_rank(mem, lo, hi, e):
    """Count the values <= e in one left-to-right scan of [lo, hi).

    ``e`` lives in a reliable register for the duration.  Exactly ``hi - lo``
    reads.  Each corruption during the scan moves the count by at most one.
    """
    leq, less = rank_kernel(mem.machine, lo, hi, e)
    return RankResult(int(leq), int(less))


def resilient_partition(mem, lo, hi, e):
    """Reorder [lo, hi) into ``< e | == e | > e`` in place and return the
    scan's counts.  Untainted values below e end up left of untainted values
    above e under every corruption schedule."""
    leq, less = partition_kernel(mem.machine, 0, 1, 0, lo, hi, e)
    return RankResult(int(leq), int(less))


def partition_records(mem, base, stride, key, lo, hi, e):
    """Record-wise variant of :func:`resilient_partition` (records of
    ``stride`` cells, compared on cell ``key``)."""
    leq, less = partition_kernel(mem.machine, base, stride, key, lo, hi, e)
    return RankResult(int(leq), int(less))


@dataclass(frozen=True)
class ReplicatedValue:
    lo: int       # first copy
    copies: int   # 2g + 1

    @property
    def hi(self):
        return self.lo + self.copies

    @property
    def protection(self):
        return self.copies // 2


def allocate_replicated(mem, g):
    """Reserve 2g+1 faulty cells for one value tolerating g corruptions."""
    copies = 2 * g + 1
    rv = ReplicatedValue(mem.alloc(copies), copies)
    mem.register_region(rv.lo, rv.hi)
    return rv


def replicated_write(mem, rv, v):
    if rv.copies % 2 == 0:
        raise ValueError("replica count must be odd")
    core.fill(mem.machine, rv.lo, rv.hi, v)


def replicated_read(mem, rv):
    """Majority of the copies; the written value whenever at most
    ``rv.protection`` copies were corrupted since the write."""
    return int(majority_kernel(mem.machine, rv.lo, rv.hi))
