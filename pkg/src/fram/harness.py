"""Trial runner: builds inputs and adversaries, runs an algorithm, checks the
result against the brute-force oracles and aggregates step counts.

Every trial is a pure function of (spec, trial seed), so any row can be
replayed exactly, with tracing switched on for failures.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adversary import make_adversary
from .deterministic_select import deterministic_select
from .kdtree import (
    KdConfig,
    brute_force_query,
    kd_build,
    kd_range_query,
    points_memory,
    read_points_binary,
    read_points_csv,
    untainted_points,
)
from .memory import FaultyMemory
from .oracles import (
    oracle_alpha_rank_check,
    oracle_split,
    oracle_uncorrupted_sorted,
    rank_error,
)
from .quicksort import resilient_quicksort
from .randomized_select import randomized_select
from .sandbox import RANDOMIZED, VARIANTS, generic_resilient_split

ALGORITHMS = ("rand-select", "det-select", "split", "quicksort", "kd-build", "kd-query")
KD_ALGORITHMS = ("kd-build", "kd-query")
COORD_RANGE = 1 << 30


class SpecError(ValueError):
    """A trial specification that cannot be run."""


@dataclass(frozen=True)
class TrialSpec:
    algorithm: str
    n: int
    k: int | None = None          # rank for selects, split point for split
    delta: int = 0
    adversary: str = "none"
    trials: int = 1
    seed: int = 0
    input: str = "random-permutation"
    variant: str = RANDOMIZED     # split and quicksort
    dims: int = 2                 # kd-tree
    b: int = 4
    queries: int = 20             # kd-query: boxes per trial

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise SpecError(f"unknown algorithm {self.algorithm!r}; pick one of {', '.join(ALGORITHMS)}")
        if self.trials < 1:
            raise SpecError("trials must be at least 1")
        if self.delta < 0:
            raise SpecError("delta must be non-negative")
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}")
        kind, _ = parse_input(self.input)
        if kind != "file" and self.n < 1:
            raise SpecError("n must be at least 1")
        if self.k is not None and kind != "file" and self.algorithm in ("rand-select", "det-select", "split"):
            lo = 0 if self.algorithm == "split" else 1
            if not lo <= self.k <= self.n:
                raise SpecError(f"k={self.k} outside [{lo}, {self.n}]")

    def rank(self, n):
        if self.k is not None:
            return self.k
        return (n + 1) // 2 if self.algorithm != "split" else n // 2


@dataclass
class TrialRow:
    seed: int
    alpha: int
    steps: int
    output: object
    rank_error: int
    passed: bool
    extra_cells: int = 0
    info: dict = field(default_factory=dict)


@dataclass
class TrialResult:
    spec: TrialSpec
    rows: list

    @property
    def pass_rate(self):
        return sum(r.passed for r in self.rows) / len(self.rows)

    @property
    def mean_steps(self):
        return float(np.mean([r.steps for r in self.rows]))

    @property
    def max_steps(self):
        return int(max(r.steps for r in self.rows))

    @property
    def failing_seeds(self):
        return [r.seed for r in self.rows if not r.passed]

    def fitted(self):
        """Steps divided by the algorithm's leading term, averaged."""
        n = self.rows[0].info.get("n", self.spec.n)
        return {"per_unit": self.mean_steps / leading_term(self.spec.algorithm, n)}

    def summary(self):
        return {"algorithm": self.spec.algorithm, "n": self.spec.n, "delta": self.spec.delta,
                "adversary": self.spec.adversary, "variant": self.spec.variant,
                "trials": len(self.rows), "pass_rate": self.pass_rate,
                "mean_steps": self.mean_steps, "max_steps": self.max_steps,
                "mean_alpha": float(np.mean([r.alpha for r in self.rows])),
                "max_rank_error": int(max(r.rank_error for r in self.rows)),
                **self.fitted()}

    def to_dict(self):
        return {"spec": asdict(self.spec), "summary": self.summary(),
                "rows": [_row_dict(r) for r in self.rows]}


def _row_dict(r):
    d = asdict(r)
    d["info"] = {k: v for k, v in r.info.items() if k != "positions"}
    return d


def leading_term(algorithm, n):
    n = max(n, 2)
    if algorithm in ("quicksort", "kd-build"):
        return n * math.log2(n)
    if algorithm == "kd-query":
        return math.sqrt(n)
    return n


# -- inputs --------------------------------------------------------------------------


def parse_input(text):
    """``random-permutation``, ``reverse``, ``duplicates(p)`` / ``duplicates:p``
    or ``file:PATH``.  Returns (kind, argument)."""
    if text.startswith("file:"):
        return "file", text[5:]
    if text in ("random-permutation", "reverse"):
        return text, None
    if text.startswith("duplicates"):
        arg = text[len("duplicates"):].strip("():")
        p = float(arg) if arg else 0.5
        if not 0 <= p <= 1:
            raise SpecError("duplicates(p) needs 0 <= p <= 1")
        return "duplicates", p
    raise SpecError(f"unknown input {text!r}")


def read_values(path):
    """Whitespace or comma separated integers."""
    with open(path) as fh:
        text = fh.read().replace(",", " ")
    return np.array([int(t) for t in text.split()], dtype=np.int64)


def make_values(spec, seed):
    kind, arg = parse_input(spec.input)
    rng = np.random.default_rng(seed)
    n = spec.n
    if kind == "file":
        return read_values(arg)
    if kind == "reverse":
        return np.arange(n, 0, -1, dtype=np.int64)
    x = rng.permutation(n).astype(np.int64) + 1
    if kind == "duplicates":
        # each cell, with probability p, copies a value from a small pool
        pool = rng.integers(1, max(2, n // 10) + 1, size=n)
        hit = rng.random(n) < arg
        x[hit] = pool[hit]
    return x


def make_points(spec, seed):
    kind, arg = parse_input(spec.input)
    if kind == "file":
        if arg.endswith(".csv"):
            return read_points_csv(arg, spec.dims)
        return read_points_binary(arg, spec.dims)
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, COORD_RANGE, size=(spec.n, spec.dims))
    if kind == "duplicates":
        pool = rng.integers(0, COORD_RANGE, size=(max(1, spec.n // 10), spec.dims))
        hit = rng.random(spec.n) < arg
        pts[hit] = pool[rng.integers(0, len(pool), size=int(hit.sum()))]
    elif kind == "reverse":
        pts = np.sort(pts, axis=0)[::-1].copy()
    return pts


def random_boxes(rng, count, dims):
    """Boxes with uniformly drawn corners, as 2*dims numbers each."""
    c = np.sort(rng.integers(0, COORD_RANGE, size=(count, 2, dims)), axis=1)
    return [tuple(c[q, 0].tolist() + c[q, 1].tolist()) for q in range(count)]


def _adversary(spec, seed, values, k):
    return make_adversary(spec.adversary, seed=seed ^ 0xA5A5, values=values, k=k, delta=spec.delta)


# -- single trials -------------------------------------------------------------------


def run_one(spec, seed, *, trace=False):
    """One trial.  Returns (row, memory) so failures can be traced."""
    if spec.algorithm in KD_ALGORITHMS:
        return _run_kd(spec, seed, trace)
    x = make_values(spec, seed)
    n = len(x)
    if n < 1:
        raise SpecError("empty input")
    k = spec.rank(n)
    mem = FaultyMemory(x, spec.delta, _adversary(spec, seed, x, max(k, 1)), trace=trace)
    in_place = True
    err = 0
    info = {"n": n}
    if spec.algorithm in ("rand-select", "det-select"):
        if not 1 <= k <= n:
            raise SpecError(f"k={k} outside [1, {n}]")
        if spec.algorithm == "rand-select":
            out = randomized_select(mem, n, k, seed)
            in_place = mem.extra_cells == 0
        else:
            out = deterministic_select(mem, n, k)
        ok = oracle_alpha_rank_check(mem, out, k, mem.alpha)
        err = rank_error(mem, out, k)
    elif spec.algorithm == "split":
        generic_resilient_split(mem, 0, n, k, spec.delta, spec.variant, seed=seed, stats=info)
        out = k
        ok = oracle_split(mem, 0, n, k)
        in_place = spec.variant != RANDOMIZED or mem.extra_cells == 0
    else:
        resilient_quicksort(mem, n, spec.delta, spec.variant, seed=seed, stats=info)
        out = None
        ok = oracle_uncorrupted_sorted(mem)
        in_place = spec.variant != RANDOMIZED or mem.extra_cells == 0
    info["in_place"] = in_place
    row = TrialRow(seed, mem.alpha, mem.steps, _plain(out), err, bool(ok and in_place),
                   mem.extra_cells, info)
    return row, mem


def _run_kd(spec, seed, trace):
    pts = make_points(spec, seed)
    n = len(pts)
    mem = points_memory(pts, spec.delta, _adversary(spec, seed, pts[:, 0], max(1, (n + 1) // 2)),
                        trace=trace)
    cfg = KdConfig(spec.dims, spec.b, spec.delta)
    tree = kd_build(mem, n, cfg)
    info = {"n": n, "depth": tree.depth, "build_steps": tree.build_steps}
    rng = np.random.default_rng(seed ^ 0x5151)
    if spec.algorithm == "kd-build":
        boxes = [tuple([0] * spec.dims + [COORD_RANGE] * spec.dims)]
    else:
        boxes = random_boxes(rng, spec.queries, spec.dims)
    missed = 0
    exact = True
    visited = []
    reported = []
    steps = 0
    for box in boxes:
        st = {}
        kd_range_query(tree, box, stats=st)
        got = set(st["positions"].tolist())
        truth = brute_force_query(mem, n, spec.dims, box)
        clean = set(untainted_points(mem, n, spec.dims).tolist()) & set(truth.tolist())
        missed += len(clean - got)
        if mem.alpha == 0 and got != set(truth.tolist()):
            exact = False
        visited.append(st["visited"])
        reported.append(st["reported"])
        steps += st["steps"]
    info.update(missed=missed, exact=exact, visited=visited, reported=reported, query_steps=steps)
    total = tree.build_steps if spec.algorithm == "kd-build" else steps
    row = TrialRow(seed, mem.alpha, total, int(sum(reported)), missed, missed == 0 and exact,
                   mem.extra_cells, info)
    return row, mem


def _plain(v):
    return v if v is None else int(v)


def _trial(args):
    spec, seed = args
    return run_one(spec, seed)[0]


def trace_dir():
    return os.environ.get("FRAM_TRACE_DIR", "traces")


def dump_trace(spec, seed, directory=None):
    """Replay a trial with tracing on and write its access trace as JSON lines."""
    directory = directory or trace_dir()
    os.makedirs(directory, exist_ok=True)
    _, mem = run_one(spec, seed, trace=True)
    path = os.path.join(directory, f"{spec.algorithm}-n{spec.n}-d{spec.delta}-s{seed}.jsonl")
    mem.export_trace(path)
    return path


def run_trials(spec, *, workers=1, trace_failures=True, trace_all=False, directory=None):
    """Run ``spec.trials`` independent trials (seeds spec.seed, spec.seed+1, ...).

    With ``workers`` > 1 the trials run in worker processes; rows come back
    sorted by seed either way.  Failing seeds are replayed with tracing and
    their traces written under :func:`trace_dir`.
    """
    seeds = [spec.seed + i for i in range(spec.trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_trial, [(spec, s) for s in seeds]))
    else:
        rows = [_trial((spec, s)) for s in seeds]
    rows.sort(key=lambda r: r.seed)
    result = TrialResult(spec, rows)
    result.traces = []
    for r in rows:
        if trace_all or (trace_failures and not r.passed):
            result.traces.append(dump_trace(spec, r.seed, directory))
    return result


# -- envelopes -----------------------------------------------------------------------


@dataclass
class ScalingRow:
    n: int
    delta: int
    mean_steps: float
    mean_alpha: float
    mean_t: float = 0.0
    predicted: float = 0.0

    @property
    def residual(self):
        return self.mean_steps / self.predicted if self.predicted else float("nan")


@dataclass
class ScalingReport:
    algorithm: str
    model: str
    constants: dict
    rows: list

    @property
    def max_residual(self):
        return max(r.residual for r in self.rows)

    @property
    def spread(self):
        """Largest over smallest residual."""
        res = [r.residual for r in self.rows]
        return max(res) / min(res)

    def table(self):
        head = f"{'n':>8} {'delta':>6} {'mean steps':>14} {'alpha':>8} {'predicted':>14} {'ratio':>7}"
        lines = [f"{self.algorithm}: {self.model}  " +
                 "  ".join(f"{k}={v:.4g}" for k, v in self.constants.items()), head]
        for r in self.rows:
            lines.append(f"{r.n:>8} {r.delta:>6} {r.mean_steps:>14.1f} {r.mean_alpha:>8.1f} "
                         f"{r.predicted:>14.1f} {r.residual:>7.3f}")
        return "\n".join(lines)

    def to_dict(self):
        return {"algorithm": self.algorithm, "model": self.model, "constants": self.constants,
                "rows": [dict(asdict(r), residual=r.residual) for r in self.rows]}


def fit_envelope(algorithm, rows):
    """Fit the algorithm's step envelope on the smallest cells and fill in
    predictions for all rows.

    Selection and split: a*n.  Quicksort: c1*n*log2(n) + c2*alpha*delta, c1 from
    the smallest fault-free cell and c2 from the smallest faulty one.
    kd-build: c*n*log2(n).  kd-query (steps per query): c*(sqrt(n*max(delta, 1)) + t).
    """
    rows = sorted(rows, key=lambda r: (r.n, r.delta))
    if algorithm in ("rand-select", "det-select", "split"):
        model = "a*n"
        a = rows[0].mean_steps / rows[0].n
        consts = {"a": a}
        pred = lambda r: a * r.n  # noqa: E731
    elif algorithm == "kd-build":
        model = "c*n*log2(n)"
        c = rows[0].mean_steps / leading_term(algorithm, rows[0].n)
        consts = {"c": c}
        pred = lambda r: c * leading_term(algorithm, r.n)  # noqa: E731
    elif algorithm == "kd-query":
        model = "c*(sqrt(n*max(delta,1)) + t)"
        term = lambda r: math.sqrt(r.n * max(r.delta, 1)) + r.mean_t  # noqa: E731
        c = rows[0].mean_steps / term(rows[0])
        consts = {"c": c}
        pred = lambda r: c * term(r)  # noqa: E731
    else:
        model = "c1*n*log2(n) + c2*alpha*delta"
        n0 = min(r.n for r in rows)
        base = [r for r in rows if r.n == n0]
        clean = [r for r in base if r.mean_alpha * r.delta == 0] or base[:1]
        c1 = clean[0].mean_steps / leading_term(algorithm, n0)
        faulty = [r for r in base if r.mean_alpha * r.delta > 0]
        c2 = 0.0
        if faulty:
            f = faulty[0]
            c2 = max(0.0, (f.mean_steps - c1 * leading_term(algorithm, n0)) / (f.mean_alpha * f.delta))
        consts = {"c1": c1, "c2": c2}
        pred = lambda r: c1 * leading_term(algorithm, r.n) + c2 * r.mean_alpha * r.delta  # noqa: E731
    for r in rows:
        r.predicted = pred(r)
    return ScalingReport(algorithm, model, consts, rows)


def scaling_report(algorithm, sizes, deltas=(0,), *, trials=3, seed=0, adversary="none",
                   variant=RANDOMIZED, workers=1, **spec_kw):
    """Measure mean steps over ``sizes`` x ``deltas`` and fit the envelope."""
    if len(sizes) < 2:
        raise SpecError("a scaling report needs at least two sizes")
    rows = []
    for n in sizes:
        for d in deltas:
            spec = TrialSpec(algorithm, n, delta=d, adversary=adversary if d else "none",
                             trials=trials, seed=seed, variant=variant, **spec_kw)
            res = run_trials(spec, workers=workers, trace_failures=False)
            if algorithm == "kd-query":
                # per-query steps: visited nodes times their decode cost plus the scans
                per_query = [r.steps / len(r.info["reported"]) for r in res.rows]
                t = [v for r in res.rows for v in r.info["reported"]]
                rows.append(ScalingRow(n, d, float(np.mean(per_query)),
                                       float(np.mean([r.alpha for r in res.rows])), float(np.mean(t))))
            else:
                rows.append(ScalingRow(n, d, res.mean_steps, float(np.mean([r.alpha for r in res.rows]))))
    return fit_envelope(algorithm, rows)


def with_trials(spec, trials):
    return replace(spec, trials=trials)
