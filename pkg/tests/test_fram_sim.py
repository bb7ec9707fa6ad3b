import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fram.adversary import (
    Burst,
    NoAdversary,
    ReplicaAttacker,
    Scripted,
    TargetedPivot,
    UniformRandom,
    make_adversary,
    scripted_worst,
)
from fram.memory import (
    ADVERSARIAL,
    FRESH,
    NEG_INF,
    POS_INF,
    FaultyMemory,
    ReliableCapacityError,
    ReliableStore,
    SandboxTimeout,
    SandboxViolation,
    SimulationFault,
    UnknownDelta,
)
from fram.oracles import (
    oracle_alpha_rank_check,
    oracle_true_rank,
    oracle_uncorrupted_sorted,
)
from fram.randomized_select import randomized_select


def test_read_without_faults():
    mem = FaultyMemory([5])
    assert mem.read(0) == 5
    assert mem.steps == 1
    assert mem.alpha == 0


def test_scripted_corruption_before_first_access():
    mem = FaultyMemory([5], delta=1, adversary=Scripted(schedule=[(0, 0, 9)]))
    assert mem.read(0) == 9
    assert mem.alpha == 1
    assert mem.tainted()[0]
    assert mem.origins()[0] == ADVERSARIAL


def test_scripted_corruption_at_later_step():
    mem = FaultyMemory([5], delta=1, adversary=Scripted(schedule=[(1, 0, 9)]))
    assert mem.read(0) == 5
    assert mem.read(0) == 9


def test_zero_budget_blocks_every_adversary():
    for adv in (UniformRandom(seed=1, rate=1.0), TargetedPivot(period=1), ReplicaAttacker(period=1),
                Scripted(schedule=[(0, 0, 9)])):
        mem = FaultyMemory([1, 2, 3], delta=0, adversary=adv)
        for _ in range(20):
            assert [mem.read(i) for i in range(3)] == [1, 2, 3]
        assert mem.alpha == 0


def test_write_then_read():
    mem = FaultyMemory([0])
    mem.write(0, 7)
    assert mem.read(0) == 7
    assert mem.origins()[0] == FRESH


def test_swap_exchanges_taint_and_origin():
    mem = FaultyMemory([1, 2], delta=1)
    mem.corrupt(0, 7)
    mem.swap(0, 1)
    assert mem.values().tolist() == [2, 7]
    assert mem.tainted().tolist() == [False, True]
    assert mem.origins().tolist() == [1, ADVERSARIAL]


def test_move_propagates_lineage():
    mem = FaultyMemory([4, 0], delta=1)
    mem.corrupt(0, 9)
    mem.move(0, 1)
    assert mem.values().tolist() == [9, 9]
    assert mem.tainted().tolist() == [True, True]


def test_write_clears_taint():
    mem = FaultyMemory([1], delta=1)
    mem.corrupt(0, 5)
    mem.write(0, 3)
    assert not mem.tainted()[0]


def test_corrupt_respects_budget():
    mem = FaultyMemory([1, 2], delta=1)
    assert mem.corrupt(0, 5)
    assert not mem.corrupt(1, 5)
    assert mem.alpha == 1
    assert mem.values().tolist() == [5, 2]


def test_out_of_bounds_is_a_simulation_fault():
    mem = FaultyMemory([1, 2])
    with pytest.raises(SimulationFault):
        mem.read(2)
    with pytest.raises(SimulationFault):
        mem.write(-1, 0)


def test_sentinels_rejected_as_input():
    with pytest.raises(ValueError):
        FaultyMemory([POS_INF])
    with pytest.raises(ValueError):
        FaultyMemory([NEG_INF, 1])


def test_snapshot_is_immutable():
    mem = FaultyMemory([3, 1, 2])
    mem.swap(0, 1)
    assert mem.snapshot0.tolist() == [3, 1, 2]
    with pytest.raises(ValueError):
        mem.snapshot0[0] = 9


def test_unknown_delta_hidden_from_algorithms():
    mem = FaultyMemory([1, 2, 3], delta=4, delta_known=False)
    with pytest.raises(UnknownDelta):
        mem.delta
    assert mem.budget == 4


def test_sandbox_timeout_leaves_swap_unapplied():
    mem = FaultyMemory([1, 2])
    with pytest.raises(SandboxTimeout):
        with mem.sandbox((0, 2), 0):
            mem.swap(0, 1)
    assert mem.values().tolist() == [1, 2]


def test_sandbox_swap_completes_or_not_at_all():
    # the budget can run out before or after the swap, never inside it
    for budget in range(3):
        mem = FaultyMemory([1, 2])
        try:
            with mem.sandbox((0, 2), budget):
                mem.read(0)
                mem.swap(0, 1)
        except SandboxTimeout:
            pass
        assert sorted(mem.values().tolist()) == [1, 2]


def test_sandbox_confinement():
    mem = FaultyMemory([1, 2, 3])
    with pytest.raises(SandboxViolation):
        with mem.sandbox((0, 2), 100):
            mem.read(2)
    # limits are lifted afterwards
    assert mem.read(2) == 3


def test_sandbox_scratch_area_allowed():
    mem = FaultyMemory([1, 2, 3])
    base = mem.alloc(2)
    with mem.sandbox((0, 1), 100, (base, base + 2)):
        mem.write(base + 1, 4)
        mem.read(0)
    assert mem.read(base + 1) == 4


def test_alloc_and_free_are_lifo():
    mem = FaultyMemory([1, 2])
    a = mem.alloc(3)
    b = mem.alloc(2)
    assert (a, b) == (2, 5)
    assert mem.size == 7
    mem.free(a)
    assert mem.size == 2
    assert mem.extra_cells == 5
    with pytest.raises(SimulationFault):
        mem.free(0)


def test_trace_records_accesses_and_corruptions(tmp_path):
    adv = Scripted(schedule=[(1, 1, 50)])
    mem = FaultyMemory([3, 4], delta=1, adversary=adv, trace=True)
    mem.read(0)
    mem.swap(0, 1)
    mem.write(1, 8)
    recs = mem.trace_records()
    ops = [r["op"] for r in recs]
    assert ops == ["read", "corrupt", "swap", "write"]
    assert recs[1]["corruption"] and recs[1]["value"] == 50
    assert recs[3]["value"] == 8
    path = tmp_path / "t.jsonl"
    mem.export_trace(path)
    lines = [json.loads(s) for s in path.read_text().splitlines()]
    assert lines == recs


def test_oracle_true_rank_examples():
    assert oracle_true_rank([3, 1, 2], 2) == 2
    assert oracle_true_rank([3, 1, 2], 0) == 0
    assert oracle_true_rank([5, 5, 5], 5) == 3


def test_oracle_alpha_rank_examples():
    x = list(range(1, 11))
    assert oracle_alpha_rank_check(x, 4, 4, 0)
    assert not oracle_alpha_rank_check(x, 6, 4, 1)
    assert oracle_alpha_rank_check(x, -100, 4, 10)


def test_oracle_uncorrupted_sorted_examples():
    mem = FaultyMemory([1, 0, 2, 3], delta=1)
    mem.corrupt(1, 9)
    assert oracle_uncorrupted_sorted(mem)
    assert not oracle_uncorrupted_sorted(FaultyMemory([2, 1]))
    mem = FaultyMemory([2, 1], delta=2)
    mem.corrupt(0, 5)
    mem.corrupt(1, 4)
    assert oracle_uncorrupted_sorted(mem)


def test_reliable_bit_stack_capacity():
    store = ReliableStore(stack_words=1)
    for _ in range(64):
        store.push_bits(1, 1)
    with pytest.raises(ReliableCapacityError):
        store.push_bits(1, 1)
    assert store.pop_bits(1) == 1
    assert store.bits_in_use == 63


def test_reliable_registers_audited():
    store = ReliableStore(register_words=4)
    regs = store.registers("a", "b", "c")
    with pytest.raises(ReliableCapacityError):
        store.registers("d", "e")
    store.release(regs)
    store.registers("d", "e")


def test_make_adversary_names():
    assert isinstance(make_adversary("none"), NoAdversary)
    assert make_adversary("uniform:0.5").rate == 0.5
    assert make_adversary("targeted-pivot:8").period == 8
    assert make_adversary("replica").period == 64
    assert isinstance(make_adversary("burst:3,9"), Burst)
    adv = make_adversary("scripted-worst", values=[3, 1, 2], k=1, delta=1)
    assert adv.name == "scripted_worst"
    with pytest.raises(ValueError):
        make_adversary("gremlins")


def test_scripted_worst_hits_rank_edge():
    x = np.arange(1, 101)
    adv = scripted_worst(x, 10, 5)
    mem = FaultyMemory(x, 5, adv)
    e = randomized_select(mem, 100, 10, 3)
    assert mem.alpha == 5
    assert oracle_true_rank(x, e) == 15


def test_burst_spends_budget_at_once():
    mem = FaultyMemory(np.arange(50), 4, Burst(seed=2, times=[3], size=4))
    for i in range(10):
        mem.read(i)
    assert mem.alpha == 4


def _run(adv_name, seed):
    x = np.random.default_rng(seed).permutation(500) + 1
    mem = FaultyMemory(x, 20, make_adversary(adv_name, seed=seed))
    e = randomized_select(mem, 500, 200, seed)
    return e, mem.steps, mem.alpha, mem.values().tolist(), mem.tainted().tolist()


@pytest.mark.parametrize("adv", ["uniform:0.01", "targeted:8", "replica:4", "burst:5,50"])
def test_runs_are_deterministic(adv):
    assert _run(adv, 7) == _run(adv, 7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 30), st.sampled_from(["uniform:0.05", "targeted:3", "replica:2", "burst:0,10,20"]),
       st.integers(0, 10_000))
def test_budget_safety(delta, adv, seed):
    x = np.random.default_rng(seed).permutation(200) + 1
    mem = FaultyMemory(x, delta, make_adversary(adv, seed=seed))
    randomized_select(mem, 200, 100, seed)
    assert mem.alpha <= delta
    assert mem.tainted().sum() <= mem.alpha


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_no_taint_without_adversary(seed):
    x = np.random.default_rng(seed).integers(-50, 50, size=64)
    mem = FaultyMemory(x, 10)
    randomized_select(mem, 64, 32, seed)
    assert mem.alpha == 0
    assert not mem.tainted().any()


def test_report_fields():
    mem = FaultyMemory([2, 1])
    mem.read(0)
    rep = mem.report(output=2, first_phase=0)
    assert (rep.steps, rep.alpha, rep.output) == (1, 0, 2)
    assert rep.repetitions == {"first_phase": 0}
    assert rep.verified is None


def test_trace_matches_untraced_run():
    x = np.random.default_rng(3).permutation(300) + 1
    plain = FaultyMemory(x, 10, UniformRandom(seed=4, rate=0.02))
    traced = FaultyMemory(x, 10, UniformRandom(seed=4, rate=0.02), trace=True)
    a = randomized_select(plain, 300, 150, 9)
    b = randomized_select(traced, 300, 150, 9)
    assert a == b
    assert plain.steps == traced.steps
    recs = traced.trace_records()
    assert sum(1 for r in recs if r.get("corruption")) == traced.alpha
    assert sum(1 for r in recs if not r.get("corruption")) == traced.steps
