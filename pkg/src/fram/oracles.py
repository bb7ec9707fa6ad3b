"""Ground-truth checks.  These read simulator state directly and charge no steps;
algorithms never call them."""

import numpy as np


def _values(mem_or_values):
    if hasattr(mem_or_values, "machine"):
        return mem_or_values.snapshot0
    return np.asarray(mem_or_values)


def oracle_true_rank(snapshot0, e):
    """Number of pristine input values <= e."""
    return int(np.count_nonzero(_values(snapshot0) <= e))


def oracle_alpha_rank_check(snapshot0, e, k, alpha):
    """Is ``e`` in the alpha-rank of ``k`` with respect to the pristine input?

    For duplicate values the rank of a present value is the interval
    [#less + 1, #less-or-equal]; a value absent from the input has the single
    rank #less-or-equal.  On distinct inputs this is exactly the ``<=``-count.
    """
    x = _values(snapshot0)
    n = len(x)
    if alpha >= n:
        return True
    leq = int(np.count_nonzero(x <= e))
    less = int(np.count_nonzero(x < e))
    lo = min(less + 1, leq)
    return lo <= k + alpha and leq >= k - alpha


def rank_error(snapshot0, e, k):
    """Distance from k to the rank interval of e (0 when e is an exact k-th)."""
    x = _values(snapshot0)
    leq = int(np.count_nonzero(x <= e))
    less = int(np.count_nonzero(x < e))
    lo = min(less + 1, leq)
    if k < lo:
        return lo - k
    if k > leq:
        return k - leq
    return 0


def _view(mem, lo, hi):
    hi = mem.n if hi is None else hi
    return mem.values(lo, hi), mem.tainted(lo, hi)


def oracle_uncorrupted_sorted(mem, lo=0, hi=None):
    """Untainted cells, read left to right, are nondecreasing."""
    vals, taint = _view(mem, lo, hi)
    clean = vals[~taint]
    return bool(np.all(clean[:-1] <= clean[1:])) if len(clean) > 1 else True


def oracle_split(mem, lo, hi, s):
    """Every untainted value in the first ``s`` cells of [lo, hi) is <= every
    untainted value in the rest."""
    vals, taint = _view(mem, lo, hi)
    left = vals[:s][~taint[:s]]
    right = vals[s:][~taint[s:]]
    if len(left) == 0 or len(right) == 0:
        return True
    return bool(left.max() <= right.min())


def oracle_pairwise_order(mem, lo=0, hi=None):
    """Exhaustive pair check: for untainted a < b from distinct input words,
    a sits before b.  Quadratic; meant for small arrays."""
    vals, taint = _view(mem, lo, hi)
    origins = mem.origins(lo, lo + len(vals))
    idx = np.flatnonzero(~taint)
    for a in range(len(idx)):
        ia = idx[a]
        for b in range(a + 1, len(idx)):
            ib = idx[b]
            if origins[ia] != origins[ib] and vals[ia] > vals[ib]:
                return False
    return True


def multiset_preserved(mem, lo, hi, before_values):
    """Untainted values of [lo, hi) now are a sub-multiset of the values there
    before (non-destructiveness check)."""
    vals, taint = _view(mem, lo, hi)
    now = np.sort(vals[~taint])
    was = np.sort(np.asarray(before_values))
    i = j = 0
    while i < len(now):
        while j < len(was) and was[j] < now[i]:
            j += 1
        if j == len(was) or was[j] != now[i]:
            return False
        i += 1
        j += 1
    return True
