"""Faulty memory, reliable store and run reports."""

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _core as core
from ._core import (
    ADVERSARIAL,
    FRESH,
    NEG_INF,
    POS_INF,
    ReliableCapacityError,
    SandboxTimeout,
    SandboxViolation,
    SimulationFault,
)
from .adversary import NoAdversary

WORD_BITS = 64

__all__ = [
    "ADVERSARIAL",
    "FRESH",
    "NEG_INF",
    "POS_INF",
    "WORD_BITS",
    "ExecReport",
    "FaultyMemory",
    "ReliableCapacityError",
    "ReliableStore",
    "SandboxTimeout",
    "SandboxViolation",
    "SimulationFault",
    "UnknownDelta",
]


class UnknownDelta(ValueError):
    """An algorithm that needs the fault bound was run with it hidden."""


class FaultyMemory:
    """A word array the adversary may corrupt while an algorithm runs.

    The first ``n`` cells hold the input.  Algorithms that need working space
    call :meth:`alloc`, which extends the array (stack discipline; release with
    :meth:`free`).  ``snapshot0`` keeps the pristine input for the oracles.

    ``delta`` is the fault budget the adversary is held to.  With
    ``delta_known=False`` the budget still binds the adversary but reading
    :attr:`delta` raises :class:`UnknownDelta`.

    ``machine`` is the flat array the compiled kernels operate on.  It is
    replaced when capacity grows, so always fetch it afresh.
    """

    def __init__(self, values, delta=0, adversary=None, *, delta_known=True,
                 trace=False, trace_capacity=1 << 20, capacity=None):
        values = np.asarray(values, dtype=np.int64).ravel()
        if values.size and (values.min() == NEG_INF or values.max() == POS_INF):
            raise ValueError("input values must lie strictly between the sentinels")
        if delta < 0:
            raise ValueError("delta must be non-negative")
        n = len(values)
        cap = max(16, n if capacity is None else capacity)
        A = core.build_machine(cap, 64, np.zeros((0, 4)), trace_capacity if trace else 0)
        core.segment(A, core.OFF_VAL, 0, n)[:] = values
        core.segment(A, core.OFF_ORIGIN, 0, n)[:] = np.arange(n)
        A[core.SIZE] = n
        A[core.PEAK] = n
        A[core.BUDGET] = delta
        A[core.NEXT_FIRE] = core.NEVER
        A[core.ADV_NEXT] = core.NEVER
        A[core.LAST_INDEX] = -1
        A[core.LAST_OP] = core.NO_OP
        A[core.TRACE] = int(bool(trace))
        if n:
            lo, hi = int(values.min()), int(values.max())
        else:
            lo, hi = 0, 0
        span = hi - lo + 1
        A[core.VLO] = max(lo - span, NEG_INF + 1)
        A[core.VHI] = min(hi + span, POS_INF - 1)
        self.machine = A
        self.n = n
        self._delta = delta
        self.delta_known = delta_known
        self.snapshot0 = values.copy()
        self.snapshot0.setflags(write=False)
        self.adversary = adversary or NoAdversary()
        self.adversary.bind(self)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def delta(self):
        if not self.delta_known:
            raise UnknownDelta("this run hides the fault bound")
        return self._delta

    @property
    def budget(self):
        """True fault budget (adversary side; algorithms use :attr:`delta`)."""
        return self._delta

    @property
    def steps(self):
        return int(self.machine[core.STEPS])

    @property
    def alpha(self):
        return int(self.machine[core.ALPHA])

    @property
    def size(self):
        return int(self.machine[core.SIZE])

    @property
    def peak_size(self):
        return int(self.machine[core.PEAK])

    @property
    def extra_cells(self):
        """Peak number of cells ever allocated beyond the input."""
        return self.peak_size - self.n

    def values(self, lo=0, hi=None):
        """Oracle view of current contents (no step charged)."""
        hi = self.size if hi is None else hi
        return core.segment(self.machine, core.OFF_VAL, lo, hi).copy()

    def tainted(self, lo=0, hi=None):
        hi = self.size if hi is None else hi
        return core.segment(self.machine, core.OFF_TAINT, lo, hi) != 0

    def origins(self, lo=0, hi=None):
        hi = self.size if hi is None else hi
        return core.segment(self.machine, core.OFF_ORIGIN, lo, hi).copy()

    def regions(self):
        """Registered replica blocks as (lo, hi) rows."""
        m = self.machine
        nreg = int(m[core.N_REGIONS])
        return core.segment(m, core.OFF_REGIONS, 0, 2 * nreg).reshape(-1, 2).copy()

    def _set_schedule(self, rows):
        m = self.machine
        self.machine = core.build_machine(int(m[core.CAP]), int(m[core.REGION_CAP]),
                                          rows, int(m[core.TRACE_CAP]), old=m)

    # -- allocation ----------------------------------------------------------

    def reserve(self, count, regions=0):
        """Make room for ``count`` more cells and ``regions`` more region
        entries without changing the live size.  Kernels that allocate on
        their own need this first."""
        m = self.machine
        need = int(m[core.SIZE]) + count
        cap = int(m[core.CAP])
        nreg = int(m[core.N_REGIONS]) + regions
        reg_cap = int(m[core.REGION_CAP])
        if need > cap or nreg > reg_cap:
            n_sched = int(m[core.N_SCHED])
            rows = core.segment(m, core.OFF_SCHED, 0, core.SCHED_WIDTH * n_sched).copy()
            self.machine = core.build_machine(
                max(need, 2 * cap) if need > cap else cap,
                max(nreg, 2 * reg_cap) if nreg > reg_cap else reg_cap,
                rows, int(m[core.TRACE_CAP]), old=m)

    def alloc(self, count):
        """Extend memory by ``count`` zeroed cells and return their base index."""
        self.reserve(count)
        return int(core.alloc_cells(self.machine, count))

    def free(self, base):
        """Release every cell from ``base`` up (LIFO)."""
        if base < self.n:
            raise SimulationFault("cannot free input cells")
        core.free_cells(self.machine, base)

    def register_region(self, lo, hi):
        """Publish a replicated block.  Layout is public knowledge: an adversary
        that knows the code knows where replicas live."""
        self.reserve(0, regions=1)
        core.add_region(self.machine, lo, hi)

    # -- single operations ----------------------------------------------------

    def read(self, i):
        return int(core.read_one(self.machine, i))

    def write(self, i, v):
        core.write_one(self.machine, i, v)

    def swap(self, i, j):
        core.swap_one(self.machine, i, j)

    def move(self, src, dst):
        core.move_one(self.machine, src, dst)

    def corrupt(self, i, v):
        """Adversarial write from outside the schedule (tests, scripted attacks)."""
        return bool(core.corrupt(self.machine, i, v))

    # -- sandbox ----------------------------------------------------------------

    @contextmanager
    def sandbox(self, region, step_budget, scratch=None):
        """Confine all accesses to ``region`` (and ``scratch``) for at most
        ``step_budget`` steps.  Limits live in simulator registers."""
        m = self.machine
        m[core.BOX_LO], m[core.BOX_HI] = region
        m[core.BOX_LO2], m[core.BOX_HI2] = scratch if scratch else (0, 0)
        m[core.BOX_END] = m[core.STEPS] + step_budget
        m[core.BOX] = 1
        try:
            yield
        finally:
            self.machine[core.BOX] = 0

    # -- trace ------------------------------------------------------------------

    def trace_records(self):
        m = self.machine
        core.flush_trace(m)
        count = int(m[core.TRACE_LEN])
        rows = core.segment(m, core.OFF_TRACE, 0, core.TRACE_WIDTH * count).reshape(-1, core.TRACE_WIDTH)
        out = []
        for step, op, i, v, corrupt in rows.tolist():
            if op == core.OP_SWAP:
                rec = {"step": step, "op": "swap", "index": i, "other": v}
            elif op == core.OP_MOVE:
                rec = {"step": step, "op": "move", "index": i, "dest": v}
            else:
                rec = {"step": step, "op": core.OP_NAMES[op], "index": i, "value": v}
            if corrupt:
                rec["corruption"] = True
            out.append(rec)
        return out

    def export_trace(self, path):
        with open(path, "w") as fh:
            for rec in self.trace_records():
                fh.write(json.dumps(rec) + "\n")

    def report(self, output=None, **repetitions):
        return ExecReport(steps=self.steps, alpha=self.alpha, output=output,
                          repetitions=dict(repetitions))


@dataclass
class ExecReport:
    steps: int
    alpha: int
    output: object = None
    repetitions: dict = field(default_factory=dict)
    verified: bool | None = None


class RegisterFile:
    """A named group of reliable words.  Unknown names are rejected."""

    def __init__(self, names):
        object.__setattr__(self, "_names", frozenset(names))
        for name in names:
            object.__setattr__(self, name, 0)

    def __setattr__(self, name, value):
        if name not in self._names:
            raise AttributeError(f"no reliable register named {name!r}")
        object.__setattr__(self, name, value)


class ReliableStore:
    """The adversary-proof region: named registers plus a bit stack.

    Capacity is audited: registers in words, the bit stack in bits.  The bit
    stack defaults to 16 words' worth of bits.  Its backing array and
    occupancy counters are plain numpy arrays so compiled kernels can push
    and pop frames directly.
    """

    def __init__(self, word_bits=WORD_BITS, stack_words=16, register_words=96):
        if word_bits != 64:
            raise ValueError("the bit stack is packed into 64-bit words")
        self.word_bits = word_bits
        self.register_capacity = register_words
        self.words_in_use = 0
        self.peak_words = 0
        self.bitstack = np.zeros(stack_words, np.uint64)
        self.meta = np.zeros(3, np.int64)
        self.meta[BS_CAPACITY] = stack_words * word_bits

    @property
    def bit_capacity(self):
        return int(self.meta[BS_CAPACITY])

    @property
    def bits_in_use(self):
        return int(self.meta[BS_USED])

    @property
    def peak_bits(self):
        return int(self.meta[BS_PEAK])

    def _charge(self, words):
        if self.words_in_use + words > self.register_capacity:
            raise ReliableCapacityError(
                f"reliable registers exhausted ({self.words_in_use}+{words} > {self.register_capacity})")
        self.words_in_use += words
        self.peak_words = max(self.peak_words, self.words_in_use)

    def registers(self, *names):
        self._charge(len(names))
        return RegisterFile(names)

    def buffer(self, words):
        """A block of reliable words (e.g. for a constant-size base case)."""
        self._charge(words)
        return np.zeros(words, np.int64)

    def reserve_words(self, words):
        """Charge ``words`` registers used inside a compiled kernel."""
        self._charge(words)

    def release(self, words_or_regs):
        if isinstance(words_or_regs, RegisterFile):
            words = len(words_or_regs._names)
        elif hasattr(words_or_regs, "__len__"):
            words = len(words_or_regs)
        else:
            words = words_or_regs
        self.words_in_use -= words

    def push_bits(self, value, nbits):
        if value >> nbits:
            raise ValueError("value does not fit in the requested bits")
        push_bits(self.bitstack, self.meta, value, nbits)

    def pop_bits(self, nbits):
        return int(pop_bits(self.bitstack, self.meta, nbits))


BS_USED = 0
BS_PEAK = 1
BS_CAPACITY = 2


@njit(cache=True)
def push_bits(stack, meta, value, nbits):
    used = meta[BS_USED]
    if used + nbits > meta[BS_CAPACITY]:
        raise ReliableCapacityError("reliable bit stack full")
    for b in range(nbits):
        if (value >> b) & 1:
            pos = used + b
            stack[pos >> 6] |= np.uint64(1) << np.uint64(pos & 63)
    meta[BS_USED] = used + nbits
    if used + nbits > meta[BS_PEAK]:
        meta[BS_PEAK] = used + nbits


@njit(cache=True)
def pop_bits(stack, meta, nbits):
    used = meta[BS_USED]
    if nbits > used:
        raise ReliableCapacityError("reliable bit stack underflow")
    start = used - nbits
    value = 0
    for b in range(nbits):
        pos = start + b
        w = pos >> 6
        bit = np.uint64(1) << np.uint64(pos & 63)
        if stack[w] & bit:
            value |= 1 << b
            stack[w] &= ~bit
    meta[BS_USED] = start
    return value
