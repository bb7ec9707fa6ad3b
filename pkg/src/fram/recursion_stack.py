"""Two-stack recursion for the deterministic selector.

The reliable stack keeps 9 bits per call: a type bit plus the residues of the
caller's size (``n mod 5`` for a medians call, ``n mod 10`` and ``n mod 11``
for a padded-subarray call).  Everything else lives in faulty memory: each
frame holds the child's subarray followed by ``2n+1`` copies each of its k,
lb and ub.  On return the caller's size is recomputed exactly from the
child's size and the residues, and its k, lb, ub are majority-decoded.

The core operations are compiled so the selector can drive the stack from
inside one kernel; :class:`RecursionStack` wraps them for direct use.
"""

import numpy as np
from numba import njit

from . import _core as core
from ._core import read, write
from .memory import BS_USED, push_bits, pop_bits
from .primitives import majority_kernel

FIRST = 0    # median-of-medians call
SECOND = 1   # padded-subarray call
FRAME_BITS = 9
BASE_CASE = 50

# stack registers (reliable words)
G_N = 0        # size of the current node
G_X = 1        # start of the current node's subarray
G_REP = 2      # start of the current node's replica block
G_DEPTH = 3
G_BASE = 4     # first cell of the stack (root replicas)
G_ROOT_X = 5
G_ROOT_N = 6
G_MAX_DEPTH = 7
N_G = 8


class InversionFault(AssertionError):
    """No size matches the stored residues: reliable data was damaged."""


@njit(cache=True)
def f_cut(n):
    return (3 * n) // 10 - n // 11 - 6


@njit(cache=True)
def child_size(kind, n):
    if kind == FIRST:
        return (n + 4) // 5
    return n - f_cut(n)


@njit(cache=True)
def frame_cells(n):
    return n + 3 * (2 * n + 1)


@njit(cache=True)
def invert_size_first(nv, r5):
    if r5 < 0 or r5 >= 5:
        raise InversionFault("residue out of range")
    if r5 == 0:
        return 5 * nv
    return 5 * (nv - 1) + r5


@njit(cache=True)
def crt_10_11(r10, r11):
    # 11 = 1 (mod 10) and 100 = 1 (mod 11)
    return (11 * r10 + 100 * r11) % 110


@njit(cache=True)
def invert_size_second(nv, r10, r11):
    if r10 < 0 or r10 >= 10 or r11 < 0 or r11 >= 11:
        raise InversionFault("residue out of range")
    guess = int(np.round((110.0 / 87.0) * (nv - 6)))
    x = crt_10_11(r10, r11)
    n = guess - 110 + (x - (guess - 110)) % 110
    while n <= guess + 110:
        if n >= 1 and n - f_cut(n) == nv:
            return n
        n += 110
    raise InversionFault("no size matches the residues")


@njit(cache=True)
def encode_frame(kind, n):
    if kind == FIRST:
        return FIRST | ((n % 5) << 1)
    return SECOND | ((n % 10) << 1) | ((n % 11) << 5)


@njit(cache=True)
def decode_size(bits, nv):
    """Caller size from a popped 9-bit frame and the child's size."""
    if bits & 1 == FIRST:
        return invert_size_first(nv, (bits >> 1) & 0xF)
    return invert_size_second(nv, (bits >> 1) & 0xF, (bits >> 5) & 0xF)


def stack_capacity(n, base_case=BASE_CASE):
    """Faulty cells and frame count that a selector run on n elements can
    ever hold at once.  The padded-subarray chain dominates every path."""
    cells = 3 * (2 * n + 1)
    depth = 0
    cur = n
    while cur > base_case:
        cur = int(child_size(SECOND, cur))
        cells += int(frame_cells(cur))
        depth += 1
    return cells, depth


@njit(cache=True, inline="always")
def _replicate(M, lo, copies, v):
    for i in range(lo, lo + copies):
        write(M, i, v)
    core.add_region(M, lo, lo + copies)


@njit(cache=True)
def _write_vars(M, rep, n, k, lb, ub):
    M = core.unmanaged(M)
    g = 2 * n + 1
    _replicate(M, rep, g, k)
    _replicate(M, rep + g, g, lb)
    _replicate(M, rep + 2 * g, g, ub)


@njit(cache=True)
def _read_vars(M, rep, n):
    M = core.unmanaged(M)
    g = 2 * n + 1
    k = majority_kernel(M, rep, rep + g)
    lb = majority_kernel(M, rep + g, rep + 2 * g)
    ub = majority_kernel(M, rep + 2 * g, rep + 3 * g)
    return k, lb, ub


@njit(cache=True)
def stack_init(M, G, x0, n, k, lb, ub):
    """Open a stack whose root is the subarray [x0, x0+n) in place."""
    M = core.unmanaged(M)
    base = core.alloc_cells(M, 3 * (2 * n + 1))
    G[G_N] = n
    G[G_X] = x0
    G[G_REP] = base
    G[G_DEPTH] = 0
    G[G_BASE] = base
    G[G_ROOT_X] = x0
    G[G_ROOT_N] = n
    G[G_MAX_DEPTH] = 0
    _write_vars(M, base, n, k, lb, ub)


@njit(cache=True)
def stack_push(M, G, bits, meta, kind, src, k, lb, ub):
    """Call a child.  With ``src >= 0`` the child's subarray is copied from
    [src, src+n_v); with ``src < 0`` the caller fills it afterwards."""
    M = core.unmanaged(M)
    n = G[G_N]
    push_bits(bits, meta, encode_frame(kind, n), FRAME_BITS)
    nv = child_size(kind, n)
    end = G[G_REP] + 3 * (2 * n + 1)
    xs = core.alloc_cells(M, frame_cells(nv))
    if xs != end:
        raise core.SimulationFault("faulty stack is not contiguous")
    if src >= 0:
        core.copy_range(M, src, xs, nv)
    _write_vars(M, xs + nv, nv, k, lb, ub)
    G[G_N] = nv
    G[G_X] = xs
    G[G_REP] = xs + nv
    G[G_DEPTH] += 1
    if G[G_DEPTH] > G[G_MAX_DEPTH]:
        G[G_MAX_DEPTH] = G[G_DEPTH]
    return xs


@njit(cache=True)
def stack_pop(M, G, bits, meta):
    """Return to the caller: restore its size and location, release the
    child's frame and majority-decode the caller's k, lb, ub."""
    M = core.unmanaged(M)
    if G[G_DEPTH] == 0:
        raise core.SimulationFault("pop on an empty recursion stack")
    frame = pop_bits(bits, meta, FRAME_BITS)
    kind = frame & 1
    xs = G[G_X]
    n = decode_size(frame, G[G_N])
    core.free_cells(M, xs)
    G[G_DEPTH] -= 1
    if G[G_DEPTH] == 0:
        if n != G[G_ROOT_N]:
            raise InversionFault("root size mismatch")
        rep = G[G_BASE]
        x = G[G_ROOT_X]
    else:
        rep = xs - 3 * (2 * n + 1)
        x = rep - n
    G[G_N] = n
    G[G_X] = x
    G[G_REP] = rep
    k, lb, ub = _read_vars(M, rep, n)
    return kind, k, lb, ub


@njit(cache=True)
def stack_close(M, G):
    core.free_cells(M, G[G_BASE])


@njit(cache=True)
def _peek_bits(bits, start, nbits):
    value = 0
    for b in range(nbits):
        pos = start + b
        if bits[pos >> 6] & (np.uint64(1) << np.uint64(pos & 63)):
            value |= 1 << b
    return value


class RecursionStack:
    """Python handle on a recursion stack living in ``mem`` and ``store``.

    Tests and the debug dump use this; the selector drives the same compiled
    operations from inside its kernel.
    """

    def __init__(self, mem, store, lo, n, k, lb, ub, base_case=BASE_CASE):
        cells, depth = stack_capacity(n, base_case)
        mem.reserve(cells, regions=3 * (depth + 2))
        store.reserve_words(N_G)
        self.mem = mem
        self.store = store
        self.G = np.zeros(N_G, np.int64)
        stack_init(mem.machine, self.G, lo, n, k, lb, ub)

    @property
    def n(self):
        return int(self.G[G_N])

    @property
    def x(self):
        return int(self.G[G_X])

    @property
    def depth(self):
        return int(self.G[G_DEPTH])

    def push(self, kind, k, lb, ub, source=None):
        """Push a child; returns the start of its subarray."""
        src = -1 if source is None else source
        s = self.store
        return int(stack_push(self.mem.machine, self.G, s.bitstack, s.meta, kind, src, k, lb, ub))

    def pop(self):
        """Return ``(n_u, k_u, lb_u, ub_u)`` of the caller, now current."""
        s = self.store
        _, k, lb, ub = stack_pop(self.mem.machine, self.G, s.bitstack, s.meta)
        return self.n, int(k), int(lb), int(ub)

    def close(self):
        # frames above the root are abandoned as well
        s = self.store
        s.meta[BS_USED] -= FRAME_BITS * self.depth
        stack_close(self.mem.machine, self.G)
        self.store.release(N_G)

    def layout(self):
        """Frame offsets and stored residues, root first (no steps charged)."""
        G = self.G
        s = self.store
        start = int(s.meta[BS_USED]) - FRAME_BITS * self.depth
        n = int(G[G_ROOT_N])
        x = int(G[G_ROOT_X])
        rep = int(G[G_BASE])
        frames = [{"depth": 0, "n": n, "x": x, "replicas": rep}]
        for d in range(self.depth):
            bits = int(_peek_bits(s.bitstack, start + FRAME_BITS * d, FRAME_BITS))
            kind = bits & 1
            residues = ({"n_mod_5": (bits >> 1) & 0xF} if kind == FIRST
                        else {"n_mod_10": (bits >> 1) & 0xF, "n_mod_11": (bits >> 5) & 0xF})
            x = rep + 3 * (2 * n + 1)
            n = int(child_size(kind, n))
            rep = x + n
            frames[-1]["call"] = "first" if kind == FIRST else "second"
            frames[-1].update(residues)
            frames.append({"depth": d + 1, "n": n, "x": x, "replicas": rep})
        return frames
