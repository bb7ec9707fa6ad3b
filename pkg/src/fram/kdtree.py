"""Resilient k-d tree over points stored as records in faulty memory.

The tree is an implicit complete binary tree of depth D = ceil(log2(n / cap))
with cap = max(1, b * delta) points per leaf.  Internal node i keeps its split
coordinate as 2*delta + 1 copies.  Leaf slot j (at depth D) owns the points
between boundaries j and j + 1 of a boundary array, also stored as
2*delta + 1 copies per entry, so any node's point range is two majority
decodes away: node i at depth d spans leaf slots [i' * 2**(D-d),
(i' + 1) * 2**(D-d)) where i' is its index within its level.  Neither build
nor query needs a recursion stack.

A node whose range holds at most ``cap`` points is a leaf even above depth D.
Queries descend with decoded splits (left holds coordinates <= split, right
holds >= split), scan every leaf they reach, and report the points inside the
query box.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _core as core
from ._core import read
from .deterministic_select import deterministic_select
from .memory import FaultyMemory, ReliableStore
from .primitives import majority_kernel, partition_records


@dataclass(frozen=True)
class KdConfig:
    dims: int = 2
    b: int = 4
    delta: int = 0

    def __post_init__(self):
        if self.dims < 1 or self.b < 1 or self.delta < 0:
            raise ValueError("need dims >= 1, b >= 1, delta >= 0")

    @property
    def leaf_capacity(self):
        return max(1, self.b * self.delta)

    @property
    def copies(self):
        return 2 * self.delta + 1


@dataclass
class KdTree:
    mem: FaultyMemory
    cfg: KdConfig
    n: int
    depth: int        # D: depth of the leaf slots
    points: int       # first cell of the point records
    splits: int       # first cell of the split-value blocks
    bounds: int       # first cell of the boundary blocks
    build_steps: int = 0

    @property
    def leaf_slots(self):
        return 1 << self.depth

    def layout(self):
        return {"n": self.n, "dims": self.cfg.dims, "depth": self.depth,
                "leaf_capacity": self.cfg.leaf_capacity, "copies": self.cfg.copies,
                "points": self.points, "splits": self.splits, "bounds": self.bounds}


def tree_depth(n, cap):
    if n <= cap:
        return 0
    return math.ceil(math.log2(n / cap))


# -- replicated words ---------------------------------------------------------------


def put_replicated(M, lo, copies, v):
    core.fill(M, lo, lo + copies, v)


def get_replicated(M, lo, copies):
    return majority_kernel(M, lo, lo + copies)


@njit(cache=True)
def gather_key(M, base, dims, axis, a, b, dst):
    """Copy coordinate ``axis`` of records [a, b) to cells dst.."""
    M = core.unmanaged(M)
    for j in range(a, b):
        core.move(M, base + j * dims + axis, dst + j - a)


# -- build ---------------------------------------------------------------------------


def kd_build(mem, n, cfg, *, lo=0, store=None):
    """Build the tree over the n point records (``cfg.dims`` cells each) at ``lo``.

    Level by level, every range larger than the leaf capacity is split at the
    median of the current axis (resilient selection, then a record-wise
    three-way partition).  O(n log n) steps whatever the corruptions.
    """
    store = store or ReliableStore()
    start = mem.steps
    dims, g, cap = cfg.dims, cfg.copies, cfg.leaf_capacity
    D = tree_depth(n, cap)
    L = 1 << D
    splits = mem.alloc(((1 << D) - 1) * g)
    bounds = mem.alloc((L + 1) * g)
    for node in range((1 << D) - 1):
        mem.register_region(splits + node * g, splits + (node + 1) * g)
    for j in range(L + 1):
        mem.register_region(bounds + j * g, bounds + (j + 1) * g)
    tree = KdTree(mem, cfg, n, D, lo, splits, bounds)
    put_replicated(mem.machine, bounds, g, 0)
    put_replicated(mem.machine, bounds + L * g, g, n)
    # registers: node, level, a, b, m, k, e, leq, less, p
    store.reserve_words(10)
    try:
        tmp = mem.alloc(n) if n else mem.size
        for d in range(D):
            span = L >> d
            axis = d % dims
            for i in range(1 << d):
                s_lo, s_hi = i * span, (i + 1) * span
                mid = s_lo + span // 2
                M = mem.machine
                a = int(get_replicated(M, bounds + s_lo * g, g))
                b = int(get_replicated(M, bounds + s_hi * g, g))
                m = b - a
                if m <= cap or not (0 <= a <= b <= n):
                    # leaf above the bottom: its inner boundaries collapse to b
                    p = m if 0 <= a <= b <= n else 0
                    e = 0
                else:
                    gather_key(M, lo, dims, axis, a, b, tmp)
                    e = deterministic_select(mem, m, (m + 1) // 2, lo=tmp, store=store)
                    r = partition_records(mem, lo, dims, axis, a, b, e)
                    p = min(max(m // 2, r.less), r.k)
                node = (1 << d) - 1 + i
                put_replicated(mem.machine, splits + node * g, g, e)
                put_replicated(mem.machine, bounds + mid * g, g, a + p)
        mem.free(tmp)
    finally:
        store.release(10)
    tree.build_steps = mem.steps - start
    return tree


# -- query ---------------------------------------------------------------------------

Q_VISITED = 0
Q_LEAVES = 1
Q_SCANNED = 2
Q_REPORTED = 3
N_Q = 4


@njit(cache=True)
def query_kernel(M, points, dims, n, D, splits, bounds, g, cap, qlo, qhi, out, st):
    """Stackless depth-first range search; writes reported record indices to
    ``out`` (the output tape) and returns how many."""
    M = core.unmanaged(M)
    L = 1 << D
    node = 0
    depth = 0
    came_from = -1     # -1: arrived from the parent; else the child we left
    t = 0
    while True:
        level_start = (1 << depth) - 1
        idx = node - level_start
        span = L >> depth
        go_up = False
        if came_from == -1:
            st[Q_VISITED] += 1
            a = majority_kernel(M, bounds + idx * span * g, bounds + (idx * span + 1) * g)
            b = majority_kernel(M, bounds + (idx + 1) * span * g, bounds + ((idx + 1) * span + 1) * g)
            a = min(max(a, 0), n)
            b = min(max(b, a), n)
            if depth == D or b - a <= cap:
                st[Q_LEAVES] += 1
                for j in range(a, b):
                    st[Q_SCANNED] += 1
                    inside = True
                    for c in range(dims):
                        v = read(M, points + j * dims + c)
                        if v < qlo[c] or v > qhi[c]:
                            inside = False
                    if inside:
                        out[t] = j
                        t += 1
                go_up = True
            else:
                v = majority_kernel(M, splits + node * g, splits + (node + 1) * g)
                axis = depth % dims
                if qlo[axis] <= v:
                    node = 2 * node + 1
                    depth += 1
                elif qhi[axis] >= v:
                    node = 2 * node + 2
                    depth += 1
                else:
                    go_up = True
        elif came_from == 2 * node + 1:
            v = majority_kernel(M, splits + node * g, splits + (node + 1) * g)
            axis = depth % dims
            if qhi[axis] >= v:
                node = 2 * node + 2
                depth += 1
                came_from = -1
            else:
                go_up = True
        else:
            go_up = True
        if go_up:
            if node == 0:
                break
            came_from = node
            node = (node - 1) // 2
            depth -= 1
    st[Q_REPORTED] = t
    return t


def kd_range_query(tree, rect, *, stats=None, store=None):
    """Points (as tuples) inside the closed box ``rect``.

    ``rect`` is (lo_1, ..., lo_dims, hi_1, ..., hi_dims), held in reliable
    registers for the query.  Every untainted point in the box is reported
    provided no replicated split or boundary took more than delta hits.
    ``stats`` receives visited/leaf/scanned counts, the record indices
    reported and the steps spent.
    """
    dims = tree.cfg.dims
    rect = [int(v) for v in rect]
    if len(rect) != 2 * dims:
        raise ValueError(f"a box needs {2 * dims} numbers")
    qlo = np.array(rect[:dims], np.int64)
    qhi = np.array(rect[dims:], np.int64)
    store = store or ReliableStore()
    store.reserve_words(2 * dims + 8)
    mem = tree.mem
    start = mem.steps
    out = np.zeros(max(tree.n, 1), np.int64)
    st = np.zeros(N_Q, np.int64)
    try:
        if np.any(qhi < qlo) or tree.n == 0:
            t = 0
        else:
            t = query_kernel(mem.machine, tree.points, dims, tree.n, tree.depth, tree.splits,
                             tree.bounds, tree.cfg.copies, tree.cfg.leaf_capacity, qlo, qhi, out, st)
    finally:
        store.release(2 * dims + 8)
    positions = out[:t].copy()
    vals = mem.values(tree.points, tree.points + tree.n * dims).reshape(-1, dims)
    result = [tuple(int(c) for c in vals[j]) for j in positions]
    if stats is not None:
        stats.update(visited=int(st[Q_VISITED]), leaves=int(st[Q_LEAVES]),
                     scanned=int(st[Q_SCANNED]), reported=int(t),
                     positions=positions, steps=mem.steps - start)
    return result


# -- point files ----------------------------------------------------------------------


def read_points_csv(path, dims=None):
    """One point per line, comma separated integers."""
    with open(path, newline="") as fh:
        rows = [[int(float(c)) for c in row] for row in csv.reader(fh) if row]
    pts = np.array(rows, dtype=np.int64)
    if pts.size == 0:
        return np.zeros((0, dims or 2), np.int64)
    if dims is not None and pts.shape[1] != dims:
        raise ValueError(f"expected {dims} columns, found {pts.shape[1]}")
    return pts


def read_points_binary(path, dims):
    """Little-endian 64-bit signed coordinates, point after point."""
    raw = np.fromfile(path, dtype="<i8")
    if raw.size % dims:
        raise ValueError("file length is not a whole number of points")
    return raw.astype(np.int64).reshape(-1, dims)


def write_points_csv(path, pts):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(np.asarray(pts).tolist())


def write_points_binary(path, pts):
    np.asarray(pts, dtype="<i8").tofile(path)


def points_memory(pts, delta=0, adversary=None, **kw):
    """A FaultyMemory holding the points as consecutive records."""
    pts = np.asarray(pts, dtype=np.int64)
    return FaultyMemory(pts.ravel(), delta, adversary, **kw)


def untainted_points(mem, n, dims, lo=0):
    """Record indices whose cells are all untainted (oracle, no steps)."""
    taint = mem.tainted(lo, lo + n * dims).reshape(-1, dims)
    return np.flatnonzero(~taint.any(axis=1))


def brute_force_query(mem, n, dims, rect, lo=0):
    """Record indices inside ``rect`` by current contents (oracle, no steps)."""
    vals = mem.values(lo, lo + n * dims).reshape(-1, dims)
    rect = np.asarray(rect, dtype=np.int64)
    inside = np.all((vals >= rect[:dims]) & (vals <= rect[dims:]), axis=1)
    return np.flatnonzero(inside)
