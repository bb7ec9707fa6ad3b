"""Adversary strategies.

An adversary is a small parameter record.  Binding it to a
:class:`~fram.memory.FaultyMemory` writes its parameters into the compiled
machine, where the firing logic runs before every algorithm access.  The
adversary sees faulty memory, the access cursor and its own RNG; it never sees
the reliable store or the algorithm's coins.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _core as core


@dataclass
class Adversary:
    seed: int = 0

    strategy = core.S_NONE
    name = "none"

    def _params(self):
        """Return (period, rate, schedule rows, first firing step)."""
        return 0, 0.0, np.zeros((0, 4), np.int64), core.NEVER

    def bind(self, mem):
        period, rate, rows, first = self._params()
        mem._set_schedule(rows)
        m = mem.machine
        m[core.STRATEGY] = self.strategy
        m[core.PERIOD] = max(1, period)
        m[core.RATE] = int(round(min(max(rate, 0.0), 1.0) * core.RATE_SCALE))
        m[core.RNG] = np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF).view(np.int64)
        m[core.SCHED_POS] = 0
        m[core.ADV_NEXT] = first if self.strategy != core.S_NONE else core.NEVER
        # with tracing on, the rare path also runs before every access
        m[core.NEXT_FIRE] = 0 if m[core.TRACE] else m[core.ADV_NEXT]

    def describe(self):
        return self.name


@dataclass
class NoAdversary(Adversary):
    name = "none"


@dataclass
class UniformRandom(Adversary):
    """Before each access, with probability ``rate``, corrupt a random cell."""

    rate: float = 0.01

    strategy = core.S_UNIFORM
    name = "uniform_random"

    def _params(self):
        # first firing drawn with the same geometric law the core uses
        rng = np.random.default_rng(self.seed ^ 0x5DEECE66D)
        first = int(rng.geometric(self.rate)) - 1 if self.rate > 0 else core.NEVER
        return 1, float(self.rate), np.zeros((0, 4), np.int64), first

    def describe(self):
        return f"uniform_random({self.rate:g})"


@dataclass
class TargetedPivot(Adversary):
    """Every ``period`` steps, flip the cell just ahead of the access cursor
    to the opposite extreme.  Scans, median groups and pivot reads all walk
    forward, so this hits the values about to steer the next pivot decision."""

    period: int = 16

    strategy = core.S_TARGETED
    name = "targeted_pivot"

    def _params(self):
        return self.period, 0.0, np.zeros((0, 4), np.int64), self.period

    def describe(self):
        return f"targeted_pivot({self.period})"


@dataclass
class ReplicaAttacker(Adversary):
    """Every ``period`` steps, overwrite a strict majority of one live
    replicated-value block with a single random value (budget permitting)."""

    period: int = 64

    strategy = core.S_REPLICA
    name = "replica_attacker"

    def _params(self):
        return self.period, 0.0, np.zeros((0, 4), np.int64), self.period

    def describe(self):
        return f"replica_attacker({self.period})"


@dataclass
class Scripted(Adversary):
    """Fixed schedule of ``(step, index, value)`` or ``(step, index, value, mode)``.

    ``index`` -1 picks a random cell; mode is one of the ``V_*`` constants of
    the core (literal, random value, inverted extreme).
    """

    schedule: Sequence = field(default_factory=list)

    strategy = core.S_SCHEDULED
    name = "scripted"

    def _params(self):
        rows = np.zeros((len(self.schedule), 4), np.int64)
        for r, row in enumerate(self.schedule):
            rows[r, : len(row)] = row
        if len(rows):
            rows = rows[np.argsort(rows[:, 0], kind="stable")]
        first = int(rows[0, 0]) if len(rows) else core.NEVER
        return 1, 0.0, rows, first


@dataclass
class Burst(Scripted):
    """At each listed step, corrupt ``size`` random cells with random values."""

    times: Sequence[int] = ()
    size: int = 1

    name = "burst"

    def __post_init__(self):
        self.schedule = [(t, -1, 0, core.V_RANDOM) for t in self.times for _ in range(self.size)]

    def describe(self):
        return f"burst({len(self.times)}x{self.size})"


def scripted_worst(values, k, delta, seed=0):
    """Schedule that, before the first access, lifts the ``delta`` smallest
    input cells (or the largest ones when ``k`` is in the upper half) to the
    far extreme.  The k-th smallest of what the algorithm then sees has rank
    exactly ``k + delta`` (resp. ``k - delta``) in the pristine input, the edge
    of the admissible interval."""
    values = np.asarray(values)
    n = len(values)
    delta = min(delta, n)
    order = np.argsort(values, kind="stable")
    span = int(values.max()) - int(values.min()) + 1 if n else 1
    if k <= n // 2:
        target = order[:delta]
        v = min(int(values.max()) + span, core.POS_INF - 1)
    else:
        target = order[n - delta :]
        v = max(int(values.min()) - span, core.NEG_INF + 1)
    adv = Scripted(seed=seed, schedule=[(0, int(i), v, core.V_LITERAL) for i in target])
    adv.name = "scripted_worst"
    return adv


def make_adversary(spec: str, seed: int = 0, **context) -> Adversary:
    """Parse ``name[:param]`` as used on the command line.

    ``scripted-worst`` needs ``values``, ``k`` and ``delta`` in ``context``.
    """
    name, _, arg = spec.partition(":")
    name = name.replace("-", "_")
    if name == "none":
        return NoAdversary(seed=seed)
    if name in ("uniform", "uniform_random"):
        return UniformRandom(seed=seed, rate=float(arg) if arg else 0.01)
    if name in ("targeted", "targeted_pivot"):
        return TargetedPivot(seed=seed, period=int(arg) if arg else 16)
    if name in ("replica", "replica_attacker"):
        return ReplicaAttacker(seed=seed, period=int(arg) if arg else 64)
    if name == "burst":
        times = [int(t) for t in arg.split(",") if t] if arg else [0]
        return Burst(seed=seed, times=times, size=int(context.get("size", 1)))
    if name == "scripted_worst":
        return scripted_worst(context["values"], context["k"], context["delta"], seed=seed)
    raise ValueError(f"unknown adversary {spec!r}")


ADVERSARY_NAMES = ("none", "uniform_random", "targeted_pivot", "replica_attacker", "burst", "scripted_worst")
