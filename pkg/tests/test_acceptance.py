"""Acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (shown even
under pytest's output capture) and then asserts.  Run just this file with

    pytest -v tests/test_acceptance.py

or ``python tests/test_acceptance.py`` for the lines alone.
"""

import itertools
import math
import sys
import time

import numpy as np
import pytest

from fram.adversary import Scripted, make_adversary
from fram.deterministic_select import deterministic_select
from fram.harness import ScalingRow, fit_envelope
from fram.kdtree import (
    KdConfig,
    brute_force_query,
    kd_build,
    kd_range_query,
    points_memory,
    untainted_points,
)
from fram.memory import FaultyMemory, ReliableStore
from fram.oracles import (
    oracle_alpha_rank_check,
    oracle_pairwise_order,
    oracle_split,
    oracle_uncorrupted_sorted,
)
from fram.primitives import allocate_replicated, replicated_read, replicated_write
from fram.quicksort import resilient_quicksort
from fram.randomized_select import randomized_select
from fram.recursion_stack import (
    BASE_CASE,
    FIRST,
    FRAME_BITS,
    SECOND,
    RecursionStack,
    child_size,
    invert_size_first,
    invert_size_second,
    stack_capacity,
)
from fram.sandbox import (
    DETERMINISTIC,
    RANDOMIZED,
    generic_resilient_split,
    sandboxed_split,
)

SELECTS = {"det-select": lambda mem, n, k, seed: deterministic_select(mem, n, k),
           "rand-select": lambda mem, n, k, seed: randomized_select(mem, n, k, seed)}
ADVERSARIES = ("uniform", "targeted", "replica", "scripted-worst")

# in-place audit results gathered by criteria 1, 2 and 7, checked by 10
AUDIT = {"runs": 0, "violations": []}


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    return emit


def _perm(n, seed):
    return np.random.default_rng(seed).permutation(n) + 1


def _audit(name, mem, seed):
    AUDIT["runs"] += 1
    if mem.extra_cells != 0:
        AUDIT["violations"].append((name, seed, mem.extra_cells))


def _adversary(name, seed, x, k, delta):
    if name == "scripted-worst":
        return make_adversary(name, seed=seed, values=x, k=k, delta=delta)
    return make_adversary(name, seed=seed)


def test_criterion_1_fault_free_exactness(report):
    start = time.time()
    bad = []
    runs = 0
    for n in (100, 1000, 10_000):
        for trial in range(100):
            x = _perm(n, trial)
            ks = np.random.default_rng(10_000 + trial).integers(1, n + 1, size=10)
            for k in ks.tolist():
                for name, select in SELECTS.items():
                    mem = FaultyMemory(x, 0)
                    e = select(mem, n, k, trial)
                    runs += 1
                    if e != k:
                        bad.append((name, n, trial, k, e))
                    if name == "rand-select":
                        _audit(name, mem, trial)
    took = time.time() - start
    ok = not bad and took < 60
    report(1, ok, f"{runs} runs, {len(bad)} wrong, {took:.1f}s (limit 60s)")
    assert not bad
    assert took < 60


def test_criterion_2_alpha_rank_resilience(report):
    n, trials = 10_000, 500
    start = time.time()
    bad = []
    runs = 0
    for name, select in SELECTS.items():
        for adv in ADVERSARIES:
            for delta in (1, 16, 256, n):
                for seed in range(trials):
                    x = _perm(n, seed)
                    k = int(np.random.default_rng(seed + 7).integers(1, n + 1))
                    mem = FaultyMemory(x, delta, _adversary(adv, seed, x, k, delta))
                    e = select(mem, n, k, seed)
                    runs += 1
                    if not oracle_alpha_rank_check(mem, e, k, mem.alpha):
                        bad.append((name, adv, delta, seed))
                    if name == "rand-select":
                        _audit(name, mem, seed)
    took = time.time() - start
    ok = not bad and took < 600
    report(2, ok, f"{runs} runs, {len(bad)} outside the alpha-rank, {took:.1f}s (limit 600s)")
    assert not bad
    assert took < 600


def test_criterion_3_deterministic_linear_worst_case(report):
    n = 100_000
    clean = FaultyMemory(_perm(n, 0))
    deterministic_select(clean, n, n // 2)
    c0 = clean.steps / n
    schedules = [(adv, delta, seed)
                 for adv in ("uniform:0.001", "targeted:16", "targeted:256", "replica:16",
                             "scripted-worst")
                 for delta in (256, 10_000, n)
                 for seed in range(2)]
    # dedicated counter-halt schedule: ten corruptions per cell on average
    schedules.append(("uniform:0.02", 10 * n, 5))
    worst = (0.0, None)
    halted = False
    for adv, delta, seed in schedules:
        x = _perm(n, seed)
        k = n // 2
        mem = FaultyMemory(x, delta, _adversary(adv, seed, x, k, delta))
        stats = {}
        e = deterministic_select(mem, n, k, stats=stats)
        assert oracle_alpha_rank_check(mem, e, k, mem.alpha)
        halted |= bool(stats["halted"] and mem.alpha >= n)
        ratio = mem.steps / (c0 * n)
        if ratio > worst[0]:
            worst = (ratio, (adv, delta, seed, mem.alpha))
    ok = halted and worst[0] <= 3
    report(3, ok, f"C0={c0:.1f} steps/n; worst steps/(C0 n)={worst[0]:.2f} (limit 3) at "
                  f"{worst[1]}; halt path exercised={halted}")
    assert halted
    assert worst[0] <= 3


def test_criterion_4_recursion_stack_round_trip(report):
    bad = []
    for n in range(BASE_CASE, 1_000_001):
        nv = child_size(FIRST, n)
        if invert_size_first(nv, n % 5) != n:
            bad.append(("first", n))
        nv = child_size(SECOND, n)
        if invert_size_second(nv, n % 10, n % 11) != n:
            bad.append(("second", n))
    # bit audit: the longest chain from 10^6 and a mixed chain, counted in reliable bits
    worst = 0.0
    for kinds in ([SECOND], [FIRST, SECOND], [SECOND, SECOND, FIRST]):
        store = ReliableStore()
        n0 = 1_000_000 if kinds == [SECOND] else 20_000
        mem = FaultyMemory(np.ones(n0, dtype=np.int64))
        rs = RecursionStack(mem, store, 0, n0, 1, 0, 1)
        for kind in itertools.cycle(kinds):
            if rs.n <= BASE_CASE:
                break
            rs.push(kind, 1, 0, 1, source=rs.x if kind == SECOND else None)
            worst = max(worst, store.bits_in_use / (FRAME_BITS * rs.depth))
        assert store.peak_bits <= store.bit_capacity
    _, cap_depth = stack_capacity(1_000_000)
    ok = not bad and worst <= 1.0
    report(4, ok, f"n in [{BASE_CASE}, 10^6]: {len(bad)} inversion failures; "
                  f"max bits/(9*depth)={worst:.2f}; capacity depth at 10^6={cap_depth}")
    assert not bad
    assert worst <= 1.0


def test_criterion_5_majority_decoding(report):
    patterns = 0
    bad = []
    for g in range(5):
        copies = 2 * g + 1
        mem = FaultyMemory([0], delta=10**9)
        rv = allocate_replicated(mem, g)
        for hits in range(g + 1):
            for where in itertools.combinations(range(copies), hits):
                # bad values drawn from a small alphabet: equal, distinct and mixed
                for values in itertools.product((-1, 43, 7), repeat=hits):
                    replicated_write(mem, rv, 42)
                    for i, v in zip(where, values):
                        mem.corrupt(rv.lo + i, v)
                    patterns += 1
                    got = replicated_read(mem, rv)
                    if got != 42:
                        bad.append((g, where, values, got))
    report(5, not bad, f"{patterns} corruption patterns over g<=4, {len(bad)} misdecoded")
    assert not bad


def _spoiling_schedule(rng, lo, hi, rounds_steps, faults):
    """Random corruptions inside [lo, hi) spread over the expected run."""
    steps = np.sort(rng.integers(0, rounds_steps, size=faults))
    cells = rng.integers(lo, hi, size=faults)
    vals = rng.integers(-50, 250, size=faults)
    return [(int(s), int(c), int(v)) for s, c, v in zip(steps, cells, vals)]


def test_criterion_6_sandbox_rounds(report):
    n = 200
    # spread the faults over the length of a fault-free run so most of them land
    probe = FaultyMemory(_perm(n, 0))
    sandboxed_split(probe, 0, n, n // 2, DETERMINISTIC)
    horizon = 2 * probe.steps
    det_bad = []
    det_alpha = []
    det_rounds = []
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        faults = int(rng.integers(0, 9))
        sched = _spoiling_schedule(rng, 0, n, horizon, faults)
        mem = FaultyMemory(_perm(n, seed), faults, Scripted(schedule=sched))
        out = sandboxed_split(mem, 0, n, n // 2, DETERMINISTIC)
        det_alpha.append(mem.alpha)
        det_rounds.append(out.rounds_used)
        if not (out.verified and oracle_split(mem, 0, n, n // 2)) or out.rounds_used > mem.alpha + 1:
            det_bad.append((seed, out.rounds_used, mem.alpha))
    rounds = []
    alphas = []
    rand_bad = 0
    for seed in range(1000):
        mem = FaultyMemory(_perm(n, seed), 8, make_adversary("uniform:0.002", seed=seed))
        out = sandboxed_split(mem, 0, n, n // 2, RANDOMIZED, seed=seed)
        rand_bad += not oracle_split(mem, 0, n, n // 2)
        rounds.append(out.rounds_used)
        alphas.append(mem.alpha)
    rounds = np.array(rounds, dtype=float)
    mean, se = rounds.mean(), rounds.std(ddof=1) / math.sqrt(len(rounds))
    limit = 2 * float(np.mean(alphas)) + 1 + 3 * se
    ok = not det_bad and not rand_bad and mean <= limit
    report(6, ok, f"deterministic: {len(det_bad)}/1000 schedules over alpha+1 rounds "
                  f"(mean alpha {np.mean(det_alpha):.2f}, up to {max(det_rounds)} rounds); randomized: mean rounds {mean:.3f} "
                  f"<= 2*alpha+1+3se = {limit:.3f}")
    assert not det_bad and not rand_bad
    assert mean <= limit


QS_ADVERSARIES = ("uniform:0.0005", "targeted:16", "replica:16", "burst")


def _quicksort_grid():
    cells = {}
    for variant in (DETERMINISTIC, RANDOMIZED):
        for n in (1 << 10, 1 << 12):
            for delta in (0, 32, 128):
                rows = []
                for seed in range(300):
                    x = _perm(n, seed)
                    adv = QS_ADVERSARIES[seed % 4] if delta else "none"
                    mem = FaultyMemory(x, delta, make_adversary(adv, seed=seed))
                    resilient_quicksort(mem, n, variant=variant, seed=seed)
                    rows.append((seed, mem.steps, mem.alpha, oracle_uncorrupted_sorted(mem)))
                    if variant == RANDOMIZED:
                        _audit("rand-quicksort", mem, seed)
                cells[variant, n, delta] = rows
    return cells


_GRID = {}


def _grid():
    if not _GRID:
        _GRID.update(_quicksort_grid())
    return _GRID


def test_criterion_7_sorting_resilience(report):
    start = time.time()
    cells = _grid()
    failed = [(key, seed) for key, rows in cells.items() for seed, _, _, ok in rows if not ok]
    pair_bad = 0
    pair_runs = 0
    for variant in (DETERMINISTIC, RANDOMIZED):
        for seed in range(100):
            adv = QS_ADVERSARIES[seed % 4]
            x = np.random.default_rng(seed).integers(0, 48, size=64)
            mem = FaultyMemory(x, 8, make_adversary(adv, seed=seed))
            resilient_quicksort(mem, 64, variant=variant, seed=seed)
            pair_runs += 1
            pair_bad += not oracle_pairwise_order(mem)
    # randomized split on its own, for the in-place audit
    for seed in range(200):
        mem = FaultyMemory(_perm(2000, seed), 32, make_adversary("targeted:8", seed=seed))
        generic_resilient_split(mem, 0, 2000, 1000, variant=RANDOMIZED, seed=seed)
        assert oracle_split(mem, 0, 2000, 1000)
        _audit("rand-split", mem, seed)
    runs = sum(len(r) for r in cells.values())
    ok = not failed and not pair_bad
    report(7, ok, f"{runs} sorts, {len(failed)} unsorted; pairwise order at n=64: "
                  f"{pair_bad}/{pair_runs} violations; {time.time() - start:.0f}s")
    assert not failed
    assert not pair_bad


def test_criterion_8_sorting_envelope(report):
    cells = _grid()
    worst = {}
    for variant in (DETERMINISTIC, RANDOMIZED):
        rows = []
        for (v, n, delta), trials in cells.items():
            if v == variant:
                rows.append(ScalingRow(n, delta, float(np.mean([t[1] for t in trials])),
                                       float(np.mean([t[2] for t in trials]))))
        # constants from the two smallest cells: n=2^10 with delta 0 and 32
        fit = fit_envelope("quicksort", [r for r in rows if r.n == 1 << 10 and r.delta <= 32])
        c1, c2 = fit.constants["c1"], fit.constants["c2"]
        ratio = 0.0
        for (v, n, delta), trials in cells.items():
            if v != variant:
                continue
            for _, steps, alpha, _ in trials:
                ratio = max(ratio, steps / (c1 * n * math.log2(n) + c2 * alpha * delta))
        worst[variant] = (ratio, c1, c2)
    ok = all(r <= 2 for r, _, _ in worst.values())
    detail = "; ".join(f"{v}: max steps/fit={r:.3f} (c1={c1:.2f}, c2={c2:.3f})"
                       for v, (r, c1, c2) in worst.items())
    report(8, ok, detail + " (limit 2)")
    assert ok


def test_criterion_9_kd_tree(report):
    dims = 2
    build = {}
    query_rows = []
    node_rows = []
    missed = 0
    inexact = 0
    for n in (1 << 10, 1 << 12):
        for delta in (0, 16):
            rng = np.random.default_rng(n + delta)
            pts = rng.integers(0, 1 << 30, size=(n, dims))
            adv = make_adversary("uniform:0.0001", seed=n) if delta else None
            mem = points_memory(pts, delta, adv)
            tree = kd_build(mem, n, KdConfig(dims, 4, delta))
            build[n, delta] = tree.build_steps / (n * math.log2(n))
            visited, reported, steps = [], [], []
            lo = rng.integers(0, 1 << 30, size=(200, dims))
            hi = rng.integers(0, 1 << 30, size=(200, dims))
            for box in np.hstack([np.minimum(lo, hi), np.maximum(lo, hi)]):
                st = {}
                kd_range_query(tree, box, stats=st)
                got = set(st["positions"].tolist())
                truth = brute_force_query(mem, n, dims, box).tolist()
                clean = set(untainted_points(mem, n, dims).tolist())
                missed += len((clean & set(truth)) - got)
                if delta == 0 and got != set(truth):
                    inexact += 1
                visited.append(st["visited"])
                reported.append(st["reported"])
                steps.append(st["steps"])
            query_rows.append(ScalingRow(n, delta, float(np.mean(steps)), float(mem.alpha),
                                         float(np.mean(reported))))
            node_rows.append(ScalingRow(n, delta, float(np.mean(visited)), float(mem.alpha),
                                        float(np.mean(reported))))
    spread = max(build.values()) / min(build.values())
    # each visited node costs O(delta) decode reads, so sqrt(n delta) + t bounds
    # the query's steps; raw node counts are printed against the same form
    q_spread = fit_envelope("kd-query", query_rows).spread
    node_spread = fit_envelope("kd-query", node_rows).spread
    ok = spread <= 2 and missed == 0 and inexact == 0 and q_spread <= 2
    report(9, ok, f"build steps/(n log n) {min(build.values()):.1f}..{max(build.values()):.1f} "
                  f"(spread {spread:.2f}); missed {missed}; inexact fault-free queries {inexact}; "
                  f"query steps/(c(sqrt(n delta)+t)) spread {q_spread:.2f} (limit 2); "
                  f"visited nodes against the same form: spread {node_spread:.1f}")
    assert spread <= 2
    assert missed == 0 and inexact == 0
    assert q_spread <= 2


def test_criterion_10_in_place_audits(report):
    # criteria 1, 2 and 7 record every randomized run; rerun them if this test runs alone
    if AUDIT["runs"] == 0:
        pytest.skip("needs criteria 1, 2 and 7 in the same session")
    ok = not AUDIT["violations"]
    report(10, ok, f"{AUDIT['runs']} randomized runs audited, {len(AUDIT['violations'])} "
                   f"allocated cells beyond the input")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main(["-q", __file__]))
