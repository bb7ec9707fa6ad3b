"""Compiled core of the faulty-memory simulator.

All algorithm-visible memory traffic goes through :func:`read`, :func:`write`,
:func:`swap` and :func:`move`.  Each of them charges exactly one step, gives the
adversary a chance to fire first, and enforces bounds and sandbox confinement.
Kernels elsewhere in the package are plain numba loops built on these four.

The whole machine is one int64 array: a header of counters and offsets
followed by segments for cell values, origins, taint flags, the replica
region table, the adversary schedule and the trace.  A single flat array keeps
the per-access cost at a couple of nanoseconds; a tuple of arrays costs two
orders of magnitude more because every field access is reference counted.
Kernels entered from Python also drop the array's reference-count handle
(:func:`unmanaged`); otherwise numba brackets every inlined access with an
atomic increment and decrement.
"""

import numpy as np
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

NEG_INF = np.iinfo(np.int64).min
POS_INF = np.iinfo(np.int64).max

ADVERSARIAL = -1
FRESH = -2
NEVER = 1 << 62
NO_OP = -1

# header slots
STEPS = 0
ALPHA = 1
BUDGET = 2
NEXT_FIRE = 3
LAST_INDEX = 4
LAST_OP = 5
SIZE = 6
BOX = 7
BOX_LO = 8
BOX_HI = 9
BOX_LO2 = 10
BOX_HI2 = 11
BOX_END = 12
N_REGIONS = 13
TRACE = 14
TRACE_LEN = 15
SCHED_POS = 16
PEAK = 17
STRATEGY = 18
PERIOD = 19
VLO = 20
VHI = 21
N_SCHED = 22
RATE = 23        # firing probability scaled by 2**53
RNG = 24         # splitmix64 state, stored as int64 bits
CAP = 25
OFF_VAL = 26
OFF_ORIGIN = 27
OFF_TAINT = 28
OFF_REGIONS = 29
REGION_CAP = 30
OFF_SCHED = 31
OFF_TRACE = 32
TRACE_CAP = 33
LAST_AUX = 34    # second operand of the last access (swap/move target)
ADV_NEXT = 35    # step of the adversary's next move
HEADER = 40

RATE_SCALE = 1 << 53

S_NONE = 0
S_UNIFORM = 1
S_TARGETED = 2
S_REPLICA = 3
S_SCHEDULED = 4

OP_READ = 0
OP_WRITE = 1
OP_SWAP = 2
OP_MOVE = 3
OP_CORRUPT = 4
OP_NAMES = ("read", "write", "swap", "move", "corrupt")

# value modes of schedule rows
V_LITERAL = 0
V_RANDOM = 1
V_INVERT = 2

SCHED_WIDTH = 4
TRACE_WIDTH = 5


class SimulationFault(Exception):
    """Out-of-range cell access: a programming error that aborts the run."""


class SandboxViolation(Exception):
    """Sandboxed code touched a cell outside its confinement region."""


class SandboxTimeout(Exception):
    """Sandboxed code exhausted its step budget."""


class ReliableCapacityError(RuntimeError):
    """The reliable store would overflow (or underflow)."""


@intrinsic
def unmanaged(typingctx, arr):
    """The same array without its reference-count handle.

    Every kernel entered from Python rebinds its machine argument through
    this first.  The caller keeps the array alive, and numba's per-access
    reference counting (an atomic add and subtract around every inlined
    access) folds away because the handle is a null constant.
    """

    def codegen(context, builder, sig, args):
        src = context.make_array(arr)(context, builder, args[0])
        dst = context.make_array(arr)(context, builder)
        for name in ("nitems", "itemsize", "data", "shape", "strides"):
            setattr(dst, name, getattr(src, name))
        dst.meminfo = cgutils.get_null_value(dst.meminfo.type)
        dst.parent = cgutils.get_null_value(dst.parent.type)
        return dst._getvalue()

    return arr(arr), codegen


# -- layout (Python side) -----------------------------------------------------


def build_machine(cap, region_cap, sched_rows, trace_cap, old=None):
    """Allocate a machine array; copy header and live segments from ``old``."""
    sched_rows = np.asarray(sched_rows, dtype=np.int64).reshape(-1, SCHED_WIDTH)
    off_val = HEADER
    off_origin = off_val + cap
    off_taint = off_origin + cap
    off_regions = off_taint + cap
    off_sched = off_regions + 2 * region_cap
    off_trace = off_sched + SCHED_WIDTH * len(sched_rows)
    total = off_trace + TRACE_WIDTH * trace_cap
    A = np.zeros(total, np.int64)
    A[off_origin:off_taint] = FRESH
    if old is not None:
        A[:HEADER] = old[:HEADER]
        keep = min(int(old[CAP]), cap)
        for off_new, off_old in ((off_val, OFF_VAL), (off_origin, OFF_ORIGIN), (off_taint, OFF_TAINT)):
            o = int(old[off_old])
            A[off_new:off_new + keep] = old[o:o + keep]
        o = int(old[OFF_REGIONS])
        keep = 2 * min(int(old[REGION_CAP]), region_cap)
        A[off_regions:off_regions + keep] = old[o:o + keep]
        o = int(old[OFF_TRACE])
        keep = TRACE_WIDTH * min(int(old[TRACE_CAP]), trace_cap)
        A[off_trace:off_trace + keep] = old[o:o + keep]
    A[CAP] = cap
    A[OFF_VAL] = off_val
    A[OFF_ORIGIN] = off_origin
    A[OFF_TAINT] = off_taint
    A[OFF_REGIONS] = off_regions
    A[REGION_CAP] = region_cap
    A[OFF_SCHED] = off_sched
    A[N_SCHED] = len(sched_rows)
    A[off_sched:off_trace] = sched_rows.ravel()
    A[OFF_TRACE] = off_trace
    A[TRACE_CAP] = trace_cap
    return A


def segment(A, off_slot, lo, hi):
    o = int(A[off_slot])
    return A[o + lo:o + hi]


# -- random numbers (splitmix64) ------------------------------------------------


@njit(cache=True)
def next_u64(A):
    z = np.uint64(A[RNG]) + np.uint64(0x9E3779B97F4A7C15)
    A[RNG] = np.int64(z)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def bounded(A, n):
    """Uniform integer in [0, n) by multiply-shift, no rejection loop."""
    z = next_u64(A)
    if n <= 0xFFFFFFFF:
        return np.int64(((z >> np.uint64(32)) * np.uint64(n)) >> np.uint64(32))
    return np.int64(z % np.uint64(n))


@njit(cache=True)
def uniform01(A):
    return np.float64(next_u64(A) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _geometric(A):
    p = A[RATE] / RATE_SCALE
    if p >= 1.0:
        return 1
    if p <= 0.0:
        return NEVER
    u = uniform01(A)
    return np.int64(np.floor(np.log1p(-u) / np.log1p(-p))) + 1


# -- adversary --------------------------------------------------------------


@njit(cache=True)
def _record(A, op, i, v, corrupt):
    t = A[TRACE_LEN]
    if t < A[TRACE_CAP]:
        o = A[OFF_TRACE] + TRACE_WIDTH * t
        A[o] = A[STEPS]
        A[o + 1] = op
        A[o + 2] = i
        A[o + 3] = v
        A[o + 4] = corrupt
        A[TRACE_LEN] = t + 1


@njit(cache=True)
def flush_trace(A):
    """Record the last access if it is still pending."""
    op = A[LAST_OP]
    if A[TRACE] == 0 or op == NO_OP:
        return
    i = A[LAST_INDEX]
    if op == OP_READ or op == OP_WRITE:
        v = A[A[OFF_VAL] + i]
    else:
        v = A[LAST_AUX]
    t = A[TRACE_LEN]
    if t < A[TRACE_CAP]:
        o = A[OFF_TRACE] + TRACE_WIDTH * t
        A[o] = A[STEPS] - 1
        A[o + 1] = op
        A[o + 2] = i
        A[o + 3] = v
        A[o + 4] = 0
        A[TRACE_LEN] = t + 1
    A[LAST_OP] = NO_OP


@njit(cache=True)
def corrupt(A, i, v):
    """Adversarial overwrite of cell i; returns False once the budget is spent."""
    if A[BUDGET] <= 0 or i < 0 or i >= A[SIZE]:
        return False
    flush_trace(A)
    A[A[OFF_VAL] + i] = v
    A[A[OFF_TAINT] + i] = 1
    A[A[OFF_ORIGIN] + i] = ADVERSARIAL
    A[ALPHA] += 1
    A[BUDGET] -= 1
    if A[TRACE] != 0:
        _record(A, OP_CORRUPT, i, v, 1)
    return True


@njit(cache=True)
def _random_value(A):
    lo = A[VLO]
    return lo + bounded(A, A[VHI] - lo + 1)


@njit(cache=True)
def _inverted_value(A, i):
    # push the cell to the opposite extreme of the adversary's value range
    lo = A[VLO]
    hi = A[VHI]
    if A[A[OFF_VAL] + i] > lo + (hi - lo) // 2:
        return lo
    return hi


@njit(cache=True)
def _adversary_move(A):
    s = A[STRATEGY]
    if s == S_NONE or A[BUDGET] <= 0 or A[SIZE] == 0:
        A[ADV_NEXT] = NEVER
        return
    if s == S_UNIFORM:
        corrupt(A, bounded(A, A[SIZE]), _random_value(A))
        A[ADV_NEXT] = A[STEPS] + _geometric(A)
    elif s == S_TARGETED:
        i = A[LAST_INDEX] + 1
        if i < 0 or i >= A[SIZE]:
            i = 0
        corrupt(A, i, _inverted_value(A, i))
        A[ADV_NEXT] = A[STEPS] + A[PERIOD]
    elif s == S_REPLICA:
        nreg = A[N_REGIONS]
        if nreg == 0:
            corrupt(A, bounded(A, A[SIZE]), _random_value(A))
        else:
            r = A[OFF_REGIONS] + 2 * bounded(A, nreg)
            lo = A[r]
            hi = A[r + 1]
            need = (hi - lo) // 2 + 1
            v = _random_value(A)
            for j in range(need):
                if not corrupt(A, lo + j, v):
                    break
        A[ADV_NEXT] = A[STEPS] + A[PERIOD]
    elif s == S_SCHEDULED:
        pos = A[SCHED_POS]
        base = A[OFF_SCHED]
        while pos < A[N_SCHED] and A[base + SCHED_WIDTH * pos] <= A[STEPS]:
            row = base + SCHED_WIDTH * pos
            i = A[row + 1]
            if i < 0:
                i = bounded(A, A[SIZE])
            if i < A[SIZE]:
                mode = A[row + 3]
                if mode == V_RANDOM:
                    v = _random_value(A)
                elif mode == V_INVERT:
                    v = _inverted_value(A, i)
                else:
                    v = A[row + 2]
                corrupt(A, i, v)
            pos += 1
        A[SCHED_POS] = pos
        if pos < A[N_SCHED]:
            A[ADV_NEXT] = max(A[base + SCHED_WIDTH * pos], A[STEPS])
        else:
            A[ADV_NEXT] = NEVER
    if A[BUDGET] <= 0:
        A[ADV_NEXT] = NEVER


@njit(cache=True)
def _fire(A):
    """Rare path of every access: trace bookkeeping and the adversary."""
    flush_trace(A)
    if A[STEPS] >= A[ADV_NEXT]:
        _adversary_move(A)
    if A[TRACE] != 0:
        # come back at the next access to record this one
        A[NEXT_FIRE] = min(A[ADV_NEXT], A[STEPS] + 1)
    else:
        A[NEXT_FIRE] = A[ADV_NEXT]


# -- memory operations --------------------------------------------------------


@njit(cache=True, inline="always")
def _check(A, i, width):
    # cells i .. i+width-1 must lie inside memory and inside one sandbox area
    last = i + width - 1
    if A[BOX] != 0:
        if not ((A[BOX_LO] <= i and last < A[BOX_HI])
                or (A[BOX_LO2] <= i and last < A[BOX_HI2])):
            raise SandboxViolation()
    if i < 0 or last >= A[SIZE]:
        raise SimulationFault("cell index out of range")


# Tracing piggybacks on the rare path: with tracing on, _fire runs before every
# access and records the previous one.  Nothing trace-related sits on the hot
# path, which keeps an access at a few nanoseconds.


@njit(cache=True, inline="always")
def _tick(A, op, i, j, width):
    if A[BOX] != 0 and A[STEPS] >= A[BOX_END]:
        raise SandboxTimeout()
    if A[STEPS] >= A[NEXT_FIRE]:
        _fire(A)
    _check(A, i, width)
    if op >= OP_SWAP:
        _check(A, j, width)
    A[STEPS] += 1
    A[LAST_INDEX] = i
    A[LAST_OP] = op
    A[LAST_AUX] = j


@njit(cache=True, inline="always")
def read(A, i):
    _tick(A, OP_READ, i, 0, 1)
    return A[A[OFF_VAL] + i]


@njit(cache=True, inline="always")
def write(A, i, v):
    _tick(A, OP_WRITE, i, 0, 1)
    A[A[OFF_VAL] + i] = v
    A[A[OFF_ORIGIN] + i] = FRESH
    A[A[OFF_TAINT] + i] = 0


@njit(cache=True, inline="always")
def _exchange(A, a, b):
    o = A[OFF_VAL]
    t = A[o + a]
    A[o + a] = A[o + b]
    A[o + b] = t
    o = A[OFF_ORIGIN]
    t = A[o + a]
    A[o + a] = A[o + b]
    A[o + b] = t
    o = A[OFF_TAINT]
    t = A[o + a]
    A[o + a] = A[o + b]
    A[o + b] = t


@njit(cache=True, inline="always")
def swap(A, i, j):
    """Atomic exchange of two cells, lineage included; one step."""
    _tick(A, OP_SWAP, i, j, 1)
    _exchange(A, i, j)


@njit(cache=True, inline="always")
def swap_records(A, i, j, width):
    """Atomic exchange of two ``width``-cell records starting at i and j."""
    _tick(A, OP_SWAP, i, j, width)
    for d in range(width):
        _exchange(A, i + d, j + d)


@njit(cache=True, inline="always")
def move(A, src, dst):
    """Copy one cell with its lineage; one step."""
    _tick(A, OP_MOVE, src, dst, 1)
    A[A[OFF_VAL] + dst] = A[A[OFF_VAL] + src]
    A[A[OFF_ORIGIN] + dst] = A[A[OFF_ORIGIN] + src]
    A[A[OFF_TAINT] + dst] = A[A[OFF_TAINT] + src]


# Python-callable single operations.  The inline versions above are for kernels.


@njit(cache=True)
def read_one(A, i):
    return read(A, i)


@njit(cache=True)
def write_one(A, i, v):
    write(A, i, v)


@njit(cache=True)
def swap_one(A, i, j):
    swap(A, i, j)


@njit(cache=True)
def move_one(A, src, dst):
    move(A, src, dst)


@njit(cache=True)
def fill(A, lo, hi, v):
    A = unmanaged(A)
    for i in range(lo, hi):
        write(A, i, v)


@njit(cache=True)
def copy_range(A, src, dst, count):
    A = unmanaged(A)
    for j in range(count):
        move(A, src + j, dst + j)


# -- allocation inside kernels ---------------------------------------------------
# Python reserves capacity up front (FaultyMemory.reserve); kernels then grow and
# shrink the live size without reallocating.


@njit(cache=True)
def alloc_cells(A, count):
    A = unmanaged(A)
    base = A[SIZE]
    need = base + count
    if need > A[CAP]:
        raise SimulationFault("reserved capacity exhausted")
    for i in range(base, need):
        A[A[OFF_VAL] + i] = 0
        A[A[OFF_ORIGIN] + i] = FRESH
        A[A[OFF_TAINT] + i] = 0
    A[SIZE] = need
    if need > A[PEAK]:
        A[PEAK] = need
    return base


@njit(cache=True)
def free_cells(A, base):
    if base < A[SIZE]:
        A[SIZE] = base
    nreg = A[N_REGIONS]
    while nreg > 0 and A[A[OFF_REGIONS] + 2 * (nreg - 1)] >= base:
        nreg -= 1
    A[N_REGIONS] = nreg


@njit(cache=True)
def add_region(A, lo, hi):
    nreg = A[N_REGIONS]
    if nreg >= A[REGION_CAP]:
        raise SimulationFault("region table full")
    r = A[OFF_REGIONS] + 2 * nreg
    A[r] = lo
    A[r + 1] = hi
    A[N_REGIONS] = nreg + 1
