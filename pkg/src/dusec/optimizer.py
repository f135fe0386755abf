"""Closed-form min-max completion time and the constructive load assignment.

With workers sorted by ascending speed and L(n) the total size of the
storage classes contained in the n slowest workers, the optimal min-max
completion time is

    c* = max_n L(n) / (s_1 + ... + s_n),

attained by the largest maximizing prefix n*.  The constructive route
walks workers slowest to fastest, tentatively gives worker n every class
it completes (the frontier L(n) - L(n-1)), and repairs any inversion by
pooling contiguous equal-time groups and shifting delta load from the
faster group onto the slower one.  Both routes are exact rational
arithmetic; an LP-based oracle lives separately in ``oracle``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from . import oracle as _oracle
from .model import (
    ClassProfile,
    LoadAssignment,
    ProblemInstance,
    StructureError,
    TimeResult,
    iter_submasks,
)


class InfeasibleRearrangement(ValueError):
    """The requested delta cannot be carried by the classes the groups share."""


@dataclass(frozen=True)
class RearrangeDelta:
    """One rebalancing step: move ``delta`` load from the donor group onto
    the receiver group so both land on ``group_time``.

    Groups are contiguous runs of workers in sorted-speed order, receiver
    directly below donor.
    """

    delta: Fraction
    receiver_start: int
    receiver_end: int
    donor_start: int
    donor_end: int
    group_time: Fraction

    def __post_init__(self):
        if not 1 <= self.receiver_start <= self.receiver_end:
            raise StructureError("bad receiver group")
        if self.donor_start != self.receiver_end + 1 or self.donor_end < self.donor_start:
            raise StructureError("donor group must directly follow the receiver group")


@dataclass(frozen=True)
class CutsetBound:
    kind: str  # "prefix" | "pooled-tail"
    n: int
    value: Fraction


def _check_pair(instance: ProblemInstance, profile: ClassProfile) -> None:
    if profile.n_workers != instance.N:
        raise StructureError(
            f"profile covers {profile.n_workers} workers, instance has {instance.N}"
        )


def _staircase(
    L: tuple[Fraction, ...], S: tuple[Fraction, ...], n: int
) -> list[list]:
    """Equal-time groups [start, end, time] with strictly decreasing times."""
    groups: list[list] = []
    for i in range(1, n + 1):
        groups.append([i, i, (L[i] - L[i - 1]) / (S[i] - S[i - 1])])
        while len(groups) >= 2 and groups[-1][2] >= groups[-2][2]:
            top = groups.pop()
            prev = groups.pop()
            start, end = prev[0], top[1]
            groups.append([start, end, (L[end] - L[start - 1]) / (S[end] - S[start - 1])])
    return groups


def optimal_time(instance: ProblemInstance, profile: ClassProfile) -> TimeResult:
    """c*, the largest critical prefix n*, and the per-worker completion times.

    Workers 1..n* all finish exactly at c*; later workers finish at the
    strictly smaller times of their own equal-time groups.
    """
    _check_pair(instance, profile)
    L = profile.cumulative
    S = instance.prefix_speed_sums()
    c_star = None
    n_star = 0
    for n in range(1, instance.N + 1):
        value = L[n] / S[n]
        if c_star is None or value >= c_star:
            c_star = value
            n_star = n
    groups = _staircase(L, S, instance.N)
    assert groups[0][2] == c_star and groups[0][1] == n_star, "staircase disagrees with scan"
    times: list[Fraction] = []
    for start, end, t in groups:
        times.extend([t] * (end - start + 1))
    return TimeResult(c_star=c_star, n_star=n_star, per_worker_time=tuple(times))


def cutset_bounds(instance: ProblemInstance, profile: ClassProfile) -> tuple[CutsetBound, ...]:
    """All prefix lower bounds plus the pooled-tail bounds above the critical n*.

    Prefix bound n: the classes inside the n slowest workers can run
    nowhere else, so c* >= L(n)/S(n).  Pooled-tail bound n > n*: the load
    beyond the critical prefix, pooled over workers n*+1..n, gives
    (L(n) - L(n*)) / (S(n) - S(n*)) <= c*.  The largest prefix bound is
    tight.
    """
    _check_pair(instance, profile)
    L = profile.cumulative
    S = instance.prefix_speed_sums()
    n_star = optimal_time(instance, profile).n_star
    bounds = [
        CutsetBound("prefix", n, L[n] / S[n]) for n in range(1, instance.N + 1)
    ]
    bounds.extend(
        CutsetBound("pooled-tail", n, (L[n] - L[n_star]) / (S[n] - S[n_star]))
        for n in range(n_star + 1, instance.N + 1)
    )
    return tuple(bounds)


def _group_span_masks(rd: RearrangeDelta) -> tuple[int, int, int]:
    prefix = (1 << (rd.receiver_start - 1)) - 1
    receiver = ((1 << rd.receiver_end) - 1) ^ prefix
    donor = ((1 << rd.donor_end) - 1) ^ ((1 << (rd.donor_start - 1)) - 1)
    return prefix, receiver, donor


def _rearranged_shares(
    shares: Mapping[tuple[int, int], Fraction],
    rd: RearrangeDelta,
    profile: ClassProfile,
) -> dict[tuple[int, int], Fraction]:
    """Apply one rebalancing move and return the new share table.

    The delta is split across donor/receiver worker pairs in proportion to
    the load each worker currently carries, and across the classes shared
    by the two groups in proportion to class size.  Per-class totals are
    conserved exactly; running out of room in the shared classes raises
    InfeasibleRearrangement (nothing is applied in that case).
    """
    if rd.delta < 0:
        raise StructureError("delta must be nonnegative")
    if rd.donor_end > profile.n_workers:
        raise StructureError("group extends past the last worker")
    new_shares = dict(shares)
    if rd.delta == 0:
        return new_shares
    prefix_mask, recv_mask, donor_mask = _group_span_masks(rd)
    span_outside = ~(prefix_mask | recv_mask | donor_mask)

    shared_total = Fraction(0)
    for w in iter_submasks(prefix_mask | recv_mask | donor_mask):
        if w & recv_mask and w & donor_mask:
            shared_total += profile.a(w)
    if rd.delta > shared_total:
        raise InfeasibleRearrangement(
            f"delta {rd.delta} exceeds shared class capacity {shared_total}"
        )

    # Aggregate current loads: receiver side keyed by the class part inside
    # the receiver group, donor side by the part inside the donor group.
    recv_agg: dict[int, list[tuple[int, Fraction]]] = {}
    donor_agg: dict[int, list[tuple[int, Fraction]]] = {}
    recv_part_total: dict[int, Fraction] = {}
    donor_part_total: dict[int, Fraction] = {}
    total_recv = Fraction(0)
    total_donor = Fraction(0)
    for (n, w), v in shares.items():
        if v == 0:
            continue
        if rd.receiver_start <= n <= rd.receiver_end:
            if w & (donor_mask | span_outside):
                raise StructureError(
                    f"receiver worker {n} holds class {w} outside its prefix span"
                )
            part = w & recv_mask
            recv_agg.setdefault(part, []).append((n, v))
            recv_part_total[part] = recv_part_total.get(part, Fraction(0)) + v
            total_recv += v
        elif rd.donor_start <= n <= rd.donor_end:
            if w & span_outside:
                raise StructureError(
                    f"donor worker {n} holds class {w} outside the merged span"
                )
            part = w & donor_mask
            donor_agg.setdefault(part, []).append((n, v))
            donor_part_total[part] = donor_part_total.get(part, Fraction(0)) + v
            total_donor += v
    if total_recv == 0 or total_donor == 0:
        raise InfeasibleRearrangement("cannot rebalance between groups with zero load")

    scale = rd.delta / (total_recv * total_donor)
    for v_part, recv_list in recv_agg.items():
        for q_part, donor_list in donor_agg.items():
            pair_move = scale * recv_part_total[v_part] * donor_part_total[q_part]
            if pair_move == 0:
                continue
            carriers = []
            carrier_total = Fraction(0)
            for u in iter_submasks(prefix_mask):
                w = u | v_part | q_part
                size = profile.a(w)
                if size > 0:
                    carriers.append((w, size))
                    carrier_total += size
            if carrier_total == 0:
                raise InfeasibleRearrangement(
                    f"no shared class can carry load between parts {v_part} and {q_part}"
                )
            for w, size in carriers:
                class_scale = scale * size / carrier_total
                for n, held in recv_list:
                    key = (n, w)
                    gain = class_scale * held * donor_part_total[q_part]
                    new_shares[key] = new_shares.get(key, Fraction(0)) + gain
                for n, held in donor_list:
                    key = (n, w)
                    loss = class_scale * held * recv_part_total[v_part]
                    remaining = new_shares.get(key, Fraction(0)) - loss
                    if remaining < 0:
                        raise InfeasibleRearrangement(
                            f"worker {n} lacks {loss} of class {w} to give away"
                        )
                    new_shares[key] = remaining
    return new_shares


def rearrange(
    assignment: LoadAssignment, rd: RearrangeDelta, profile: ClassProfile
) -> LoadAssignment:
    """Pure version of the rebalancing move; returns a new assignment."""
    if assignment.n_workers != profile.n_workers:
        raise StructureError("assignment and profile cover different worker counts")
    shares = _rearranged_shares(assignment.shares, rd, profile)
    return LoadAssignment(
        n_workers=assignment.n_workers,
        redundancy=assignment.redundancy,
        shares=shares,
    )


def assign_loads(
    instance: ProblemInstance,
    profile: ClassProfile,
    trace: list | None = None,
) -> tuple[LoadAssignment, TimeResult]:
    """Constructive optimal assignment (redundancy 1).

    Walks workers slowest to fastest.  Worker n tentatively takes every
    class of its frontier (classes whose fastest member is n), finishing
    at t_n = (L(n) - L(n-1)) / s_n.  Whenever a new tentative time ties or
    exceeds the group below, the groups merge and a rebalancing move
    equalizes them; at most N - 1 merges can ever run.  The result is
    group times strictly decreasing, with the first group at c*.

    Profiles without the prefix structure that guarantees those moves can
    exhaust a shared class; in that case the transportation construction
    takes over, so the returned assignment is optimal either way.

    ``trace``, when given, collects ("tentative", n, t) and
    ("merge", RearrangeDelta) events for inspection.
    """
    _check_pair(instance, profile)
    sizes = profile.dense_sizes()
    L = profile.cumulative
    S = instance.prefix_speed_sums()
    shares: dict[tuple[int, int], Fraction] = {}
    groups: list[list] = []
    merges = 0
    try:
        for n in range(1, instance.N + 1):
            bit = 1 << (n - 1)
            for sub in iter_submasks(bit - 1):
                w = sub | bit
                size = sizes[w - 1]
                if size > 0:
                    shares[(n, w)] = size
            t = (L[n] - L[n - 1]) / instance.speeds[n - 1]
            if trace is not None:
                trace.append(("tentative", n, t))
            groups.append([n, n, t])
            while len(groups) >= 2 and groups[-1][2] >= groups[-2][2]:
                top = groups.pop()
                prev = groups.pop()
                start, end = prev[0], top[1]
                merged_time = (L[end] - L[start - 1]) / (S[end] - S[start - 1])
                rd = RearrangeDelta(
                    delta=(merged_time - prev[2]) * (S[prev[1]] - S[start - 1]),
                    receiver_start=prev[0],
                    receiver_end=prev[1],
                    donor_start=top[0],
                    donor_end=top[1],
                    group_time=merged_time,
                )
                shares = _rearranged_shares(shares, rd, profile)
                merges += 1
                assert merges < instance.N, "more merges than groups ever created"
                if trace is not None:
                    trace.append(("merge", rd))
                groups.append([start, end, merged_time])
    except InfeasibleRearrangement:
        return _oracle.flow_assign(instance, profile, redundancy=1)
    assignment = LoadAssignment(n_workers=instance.N, redundancy=1, shares=shares)
    loads = assignment.per_worker_loads()
    times = tuple(load / s for load, s in zip(loads, instance.speeds))
    result = TimeResult(
        c_star=groups[0][2], n_star=groups[0][1], per_worker_time=times
    )
    return assignment, result


def critical_conditions_hold(
    instance: ProblemInstance, profile: ClassProfile, result: TimeResult
) -> bool:
    """Literal check of the two optimality conditions at (c*, n*):

    every prefix n < n* satisfies L(n)/S(n) <= c*, and every pooled tail
    n > n* satisfies (L(n) - L(n*)) / (S(n) - S(n*)) <= c*, with equality
    of the prefix bound at n* itself.
    """
    L = profile.cumulative
    S = instance.prefix_speed_sums()
    c, k = result.c_star, result.n_star
    if L[k] / S[k] != c:
        return False
    for n in range(1, k):
        if L[n] / S[n] > c:
            return False
    for n in range(k + 1, instance.N + 1):
        if (L[n] - L[k]) / (S[n] - S[k]) > c:
            return False
    return True
