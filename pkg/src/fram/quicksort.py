"""Resilient quicksort by level-order splitting of power-of-two blocks.

The array is padded (virtually) to the next power of two P.  At level d the
padded array is cut into blocks of P / 2**d cells and each block is split at
its midpoint with :func:`~fram.sandbox.generic_resilient_split`.  Padding
cells hold +inf, so a block whose real part fits in its left half is already
split, and a block that straddles the end of the input is split at the same
offset within its real prefix.  Nothing is materialized for the padding.
"""

from .memory import ReliableStore
from .sandbox import RANDOMIZED, VARIANTS, _subseed, generic_resilient_split


class VirtualArray:
    """Index map from the padded power-of-two array onto the real range."""

    def __init__(self, lo, n):
        self.lo = lo
        self.n = n
        self.padded_len = 1 << max(0, (n - 1).bit_length())

    @property
    def levels(self):
        return self.padded_len.bit_length() - 1

    def real_part(self, start, size):
        """Real cells of padded block [start, start+size) as (lo, count)."""
        count = max(0, min(self.n, start + size) - start)
        return self.lo + start, count


def resilient_quicksort(mem, n, delta=None, variant=RANDOMIZED, *, lo=0, seed=0,
                        store=None, stats=None):
    """Sort the n cells at ``lo`` so that untainted values end up in order.

    O(n log n + alpha * delta) steps (expected for the randomized variant,
    which also works in place).  ``delta`` defaults to the memory's known
    fault bound.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if n < 1:
        raise ValueError("n must be at least 1")
    if delta is None:
        delta = mem.delta
    store = store or ReliableStore()
    va = VirtualArray(lo, n)
    splits = 0
    sandboxed = 0
    rounds = 0
    for d in range(va.levels):
        size = va.padded_len >> d
        half = size // 2
        for start in range(0, va.padded_len, size):
            if start >= n:
                break
            base, count = va.real_part(start, size)
            if count <= half:
                continue   # every real cell is already left of the midpoint
            info = {}
            generic_resilient_split(mem, base, base + count, half, delta, variant,
                                    seed=_subseed(seed, splits), store=store, stats=info)
            splits += 1
            if info.get("stage") == 3:
                sandboxed += 1
                rounds += info["rounds"]
    if stats is not None:
        stats.update(levels=va.levels, padded_len=va.padded_len, splits=splits,
                     sandboxed=sandboxed, sandbox_rounds=rounds)
