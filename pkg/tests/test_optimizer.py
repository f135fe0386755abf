import random
from fractions import Fraction as F

import pytest

from dusec.model import (
    ClassProfile,
    LoadAssignment,
    ProblemInstance,
    ProfileMode,
    StructureError,
    iter_class_masks,
    validate,
)
from dusec.optimizer import (
    InfeasibleRearrangement,
    RearrangeDelta,
    assign_loads,
    critical_conditions_hold,
    cutset_bounds,
    optimal_time,
    rearrange,
)
from dusec.oracle import lp_oracle
from dusec.storage import profile_from_alpha


def _worked_example():
    inst = ProblemInstance.from_alpha(F(2), (F(1), F(2), F(5), F(5)))
    return inst, profile_from_alpha(F(2), 4)


def test_worked_example_closed_form():
    inst, prof = _worked_example()
    res = optimal_time(inst, prof)
    assert res.c_star == F(15, 208)
    assert res.n_star == 4
    assert res.per_worker_time == (F(15, 208),) * 4


def test_worked_example_construction_trace():
    inst, prof = _worked_example()
    trace = []
    asg, res = assign_loads(inst, prof, trace=trace)
    tentative = [t for t in trace if t[0] == "tentative"]
    merges = [t[1] for t in trace if t[0] == "merge"]
    assert [t[2] for t in tentative] == [F(1, 16), F(1, 16), F(1, 20), F(1, 10)]
    # equal neighbours merge with a zero move, then two real moves follow
    assert [rd.delta for rd in merges] == [F(0), F(1, 8), F(3, 104)]
    assert merges[1].group_time == F(3, 40)
    assert (merges[1].receiver_start, merges[1].donor_end) == (3, 4)
    assert merges[2].group_time == F(15, 208)
    assert (merges[2].receiver_start, merges[2].receiver_end) == (1, 2)
    assert (merges[2].donor_start, merges[2].donor_end) == (3, 4)

    assert res.c_star == F(15, 208)
    assert res.n_star == 4
    assert asg.per_worker_loads() == (F(15, 208), F(15, 104), F(75, 208), F(75, 208))
    assert validate(inst, prof, asg) == []


def test_rearrange_replays_the_merges():
    inst, prof = _worked_example()
    trace = []
    final, _ = assign_loads(inst, prof, trace=trace)
    # start from the tentative split: every class sits on its fastest member
    shares = {}
    for mask in iter_class_masks(4):
        shares[(mask.bit_length(), mask)] = prof.a(mask)
    asg = LoadAssignment(n_workers=4, redundancy=1, shares=shares)
    for entry in trace:
        if entry[0] == "merge":
            asg = rearrange(asg, entry[1], prof)
    assert dict(asg.shares) == dict(final.shares)


def test_rearrange_zero_delta_is_identity():
    inst, prof = _worked_example()
    asg, _ = assign_loads(inst, prof)
    rd = RearrangeDelta(
        delta=F(0), receiver_start=1, receiver_end=2,
        donor_start=3, donor_end=4, group_time=F(15, 208),
    )
    assert dict(rearrange(asg, rd, prof).shares) == dict(asg.shares)


def test_rearrange_rejects_negative_delta():
    inst, prof = _worked_example()
    asg, _ = assign_loads(inst, prof)
    with pytest.raises(StructureError):
        rearrange(
            asg,
            RearrangeDelta(
                delta=F(-1, 100), receiver_start=1, receiver_end=2,
                donor_start=3, donor_end=4, group_time=F(1),
            ),
            prof,
        )


def test_rearrange_delta_shape_checked():
    with pytest.raises(StructureError):
        RearrangeDelta(
            delta=F(1, 8), receiver_start=1, receiver_end=1,
            donor_start=3, donor_end=4, group_time=F(1, 2),
        )


def test_no_merge_instance():
    inst = ProblemInstance.from_alpha(F(2), (F(1), F(4), F(16)))
    prof = profile_from_alpha(F(2), 3)
    trace = []
    asg, res = assign_loads(inst, prof, trace=trace)
    assert not [t for t in trace if t[0] == "merge"]
    assert res.c_star == F(1, 8)
    assert res.n_star == 1
    assert res.per_worker_time == (F(1, 8), F(1, 16), F(1, 32))
    assert validate(inst, prof, asg) == []


def test_tie_prefers_largest_group():
    inst = ProblemInstance.from_alpha(F(2), (F(1), F(2)))
    prof = profile_from_alpha(F(2), 2)
    res = optimal_time(inst, prof)
    assert res.c_star == F(1, 4)
    assert res.n_star == 2  # 1/4 is attained at n=1 and n=2; report the larger


def test_zero_storage_solves_to_zero():
    inst = ProblemInstance.from_alpha(F(1), (F(1), F(3)))
    prof = profile_from_alpha(F(1), 2)
    asg, res = assign_loads(inst, prof)
    assert res.c_star == 0
    assert asg.per_worker_loads() == (F(0), F(0))


def _disjoint_profile():
    # two workers with disjoint storage: nothing can move between them
    sizes = [F(0)] * 3
    sizes[0b01 - 1] = F(1, 4)
    sizes[0b10 - 1] = F(3, 4)
    return ClassProfile(
        mode=ProfileMode.EXACT, n_workers=2, alpha=None, beta=F(0),
        class_sizes=tuple(sizes),
    )


def test_rearrange_infeasible_without_shared_classes():
    prof = _disjoint_profile()
    shares = {(1, 0b01): F(1, 4), (2, 0b10): F(3, 4)}
    asg = LoadAssignment(n_workers=2, redundancy=1, shares=shares)
    rd = RearrangeDelta(
        delta=F(1, 4), receiver_start=1, receiver_end=1,
        donor_start=2, donor_end=2, group_time=F(1, 2),
    )
    with pytest.raises(InfeasibleRearrangement):
        rearrange(asg, rd, prof)
    # the failed move must not mutate its input
    assert dict(asg.shares) == shares


def test_assign_loads_falls_back_to_flow():
    prof = _disjoint_profile()
    inst = ProblemInstance(K=4, M=2, speeds=(F(1), F(1)))
    asg, res = assign_loads(inst, prof)
    assert res.c_star == F(3, 4)  # worker 2 is stuck with its exclusive mass
    assert validate(inst, prof, asg) == []
    assert res.c_star == lp_oracle(inst, prof)


def test_full_storage_merges_through_flow():
    # every dataset on every worker: tentative times are 0, ..., 0, 1/s_N,
    # and the final merge has no receiver-side load to work with
    inst = ProblemInstance(K=4, M=4, speeds=(F(1), F(3)))
    prof = profile_from_alpha(None, 2)
    asg, res = assign_loads(inst, prof)
    assert res.c_star == F(1, 4)
    assert validate(inst, prof, asg) == []


def test_cutset_bounds_worked_example():
    inst, prof = _worked_example()
    res = optimal_time(inst, prof)
    bounds = cutset_bounds(inst, prof)
    by_key = {(b.kind, b.n): b.value for b in bounds}
    assert by_key[("prefix", 1)] == F(1, 16)
    assert by_key[("prefix", 2)] == F(1, 16)
    assert by_key[("prefix", 3)] == F(7, 128)
    assert by_key[("prefix", 4)] == F(15, 208)
    assert all(b.value <= res.c_star for b in bounds)
    assert max(b.value for b in bounds) == res.c_star


def test_cutset_bounds_tail_family():
    inst = ProblemInstance.from_alpha(F(2), (F(1), F(4), F(16)))
    prof = profile_from_alpha(F(2), 3)
    res = optimal_time(inst, prof)
    assert res.n_star == 1
    bounds = cutset_bounds(inst, prof)
    tails = {b.n: b.value for b in bounds if b.kind == "pooled-tail"}
    # pooled remainder over workers above the critical group
    assert tails == {2: F(1, 16), 3: F(3, 80)}
    assert all(b.value <= res.c_star for b in bounds)


def test_critical_conditions_worked_examples():
    for speeds, alpha in [
        ((F(1), F(2), F(5), F(5)), F(2)),
        ((F(1), F(4), F(16)), F(2)),
        ((F(1), F(3), F(9)), F(3, 2)),
    ]:
        inst = ProblemInstance.from_alpha(alpha, speeds)
        prof = profile_from_alpha(alpha, inst.N)
        assert critical_conditions_hold(inst, prof, optimal_time(inst, prof))


def _random_case(rng):
    n = rng.randint(2, 7)
    den = rng.randint(1, 6)
    num = rng.randint(den + 1, 4 * den)
    alpha = F(num, den)
    speeds = tuple(F(rng.randint(1, 30), rng.choice([1, 1, 2, 3])) for _ in range(n))
    inst = ProblemInstance.from_alpha(alpha, speeds)
    return inst, profile_from_alpha(alpha, n)


def test_seeded_construction_invariants():
    for seed in range(60):
        rng = random.Random(seed)
        inst, prof = _random_case(rng)
        asg, res = assign_loads(inst, prof)
        assert validate(inst, prof, asg) == []
        assert res.c_star == optimal_time(inst, prof).c_star
        assert res.n_star == optimal_time(inst, prof).n_star
        assert max(res.per_worker_time) == res.c_star
        assert critical_conditions_hold(inst, prof, res)
        bounds = cutset_bounds(inst, prof)
        assert max(b.value for b in bounds) == res.c_star


def test_speed_scaling_equivariance():
    for seed in range(20):
        rng = random.Random(1000 + seed)
        inst, prof = _random_case(rng)
        lam = F(rng.randint(2, 9), rng.randint(1, 3))
        scaled = ProblemInstance.from_alpha(
            inst.alpha, tuple(s * lam for s in inst.speeds)
        )
        assert optimal_time(scaled, prof).c_star == optimal_time(inst, prof).c_star / lam


def test_extra_speed_never_hurts():
    for seed in range(20):
        rng = random.Random(2000 + seed)
        inst, prof = _random_case(rng)
        faster = ProblemInstance.from_alpha(
            inst.alpha, inst.speeds + (inst.speeds[-1] * 2,)
        )
        bigger = profile_from_alpha(inst.alpha, inst.N + 1)
        # a larger fleet also stores more, so both effects push time down
        assert optimal_time(faster, bigger).c_star <= optimal_time(inst, prof).c_star
