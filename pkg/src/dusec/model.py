"""Core types for storage-class based load assignment.

Conventions used across the package:

* Workers are numbered 1..N and always ordered by ascending speed.
* A set of workers is an N-bit mask: worker n corresponds to bit n-1.
  Storage classes (the datasets stored by exactly the workers in V) are
  identified by these masks.
* Every quantity that enters solver arithmetic is an exact
  ``fractions.Fraction``.  Floats appear only in rendered output.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence


class StructureError(ValueError):
    """Shape mismatch between objects (wrong N, wrong lengths, bad mask).

    Distinct from a :class:`Violation`: a violation is a well-formed
    assignment breaking a numeric invariant, a StructureError means the
    objects cannot even be compared.
    """


def as_fraction(value) -> Fraction:
    """Coerce int / str / Fraction to an exact Fraction.

    Floats are rejected: they would silently launder rounding error into
    the exact pipeline.
    """
    if isinstance(value, float):
        raise StructureError(f"refusing inexact float {value!r}; pass str or Fraction")
    return Fraction(value)


def mask_of(workers: Iterable[int]) -> int:
    mask = 0
    for n in workers:
        if n < 1:
            raise StructureError(f"worker index {n} out of range (workers are 1-based)")
        mask |= 1 << (n - 1)
    return mask


def workers_of(mask: int) -> tuple[int, ...]:
    out = []
    n = 1
    while mask:
        if mask & 1:
            out.append(n)
        mask >>= 1
        n += 1
    return tuple(out)


def iter_class_masks(n_workers: int) -> range:
    """All nonempty worker subsets of [1..n_workers] as masks."""
    return range(1, 1 << n_workers)


def iter_submasks(mask: int) -> Iterator[int]:
    """All submasks of ``mask`` including 0 and ``mask`` itself."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


@dataclass(frozen=True)
class ProblemInstance:
    """K datasets, each worker stores M of them, speeds sorted ascending.

    ``speeds`` is normalized at construction: entries are coerced to
    Fraction and sorted.  ``source_order[i]`` is the position in the
    caller's sequence that ended up in sorted slot i, so the original
    ordering is recoverable (see :meth:`original_speeds`).
    """

    K: int
    M: int
    speeds: tuple[Fraction, ...]
    source_order: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.K < 1:
            raise StructureError(f"K must be >= 1, got {self.K}")
        if not 0 <= self.M <= self.K:
            raise StructureError(f"M must lie in [0, K]; got M={self.M}, K={self.K}")
        if not self.speeds:
            raise StructureError("at least one worker is required")
        coerced = tuple(as_fraction(s) for s in self.speeds)
        if any(s <= 0 for s in coerced):
            raise StructureError("speeds must be positive")
        order = tuple(sorted(range(len(coerced)), key=lambda i: coerced[i]))
        object.__setattr__(self, "speeds", tuple(coerced[i] for i in order))
        object.__setattr__(self, "source_order", order)

    @property
    def N(self) -> int:
        return len(self.speeds)

    @property
    def alpha(self) -> Fraction | None:
        """Normalized storage ratio K/(K-M); None when M = K."""
        if self.M == self.K:
            return None
        return Fraction(self.K, self.K - self.M)

    @property
    def beta(self) -> Fraction:
        """Probability a given dataset misses one worker: ((K-M)/K)^N."""
        return Fraction(self.K - self.M, self.K) ** self.N

    def original_speeds(self) -> tuple[Fraction, ...]:
        out: list[Fraction | None] = [None] * self.N
        for slot, src in enumerate(self.source_order):
            out[src] = self.speeds[slot]
        return tuple(out)  # type: ignore[arg-type]

    def prefix_speed_sums(self) -> tuple[Fraction, ...]:
        """S[n] = s_1 + ... + s_n for n = 0..N (S[0] = 0)."""
        sums = [Fraction(0)]
        for s in self.speeds:
            sums.append(sums[-1] + s)
        return tuple(sums)

    @classmethod
    def from_alpha(cls, alpha, speeds) -> "ProblemInstance":
        """Instance with the smallest integral (K, M) realizing a rational alpha."""
        a = as_fraction(alpha)
        if a < 1:
            raise StructureError(f"alpha must be >= 1, got {a}")
        if a == 1:
            return cls(K=1, M=0, speeds=tuple(speeds))
        return cls(K=a.numerator, M=a.numerator - a.denominator, speeds=tuple(speeds))


class ProfileMode(enum.Enum):
    EXACT = "exact"
    ASYMPTOTIC = "asymptotic"


@dataclass(frozen=True)
class ClassProfile:
    """Normalized storage-class sizes a(V) for the nonempty worker subsets V.

    Exact mode carries a dense table indexed by mask-1 (measured from an
    explicit placement).  Asymptotic mode carries sizes by cardinality
    only, since the limiting law a(V) = beta*(alpha-1)^|V| depends on V
    through |V| alone; this keeps the formula profile usable at worker
    counts where 2^N tables are impossible.
    """

    mode: ProfileMode
    n_workers: int
    alpha: Fraction | None
    beta: Fraction
    sizes_by_card: tuple[Fraction, ...] | None = None
    class_sizes: tuple[Fraction, ...] | None = None

    def __post_init__(self):
        if self.n_workers < 1:
            raise StructureError("profile needs at least one worker")
        if self.mode is ProfileMode.EXACT:
            if self.class_sizes is None or len(self.class_sizes) != (1 << self.n_workers) - 1:
                raise StructureError("exact profile needs 2^N - 1 class sizes")
        else:
            if self.sizes_by_card is None or len(self.sizes_by_card) != self.n_workers + 1:
                raise StructureError("asymptotic profile needs N + 1 per-cardinality sizes")

    def a(self, mask: int) -> Fraction:
        """Normalized size of class ``mask`` (fraction of all datasets)."""
        if not 0 < mask < (1 << self.n_workers):
            raise StructureError(f"class mask {mask} out of range for N={self.n_workers}")
        if self.class_sizes is not None:
            return self.class_sizes[mask - 1]
        return self.sizes_by_card[mask.bit_count()]  # type: ignore[index]

    @cached_property
    def cumulative(self) -> tuple[Fraction, ...]:
        """L[n] = sum of a(V) over nonempty V contained in workers 1..n.

        L[N] is the covered fraction of the dataset; 1 - L[N] = beta.
        """
        n = self.n_workers
        if self.class_sizes is not None:
            by_top = [Fraction(0)] * (n + 1)
            for mask in iter_class_masks(n):
                by_top[mask.bit_length()] += self.class_sizes[mask - 1]
            out = [Fraction(0)]
            for k in range(1, n + 1):
                out.append(out[-1] + by_top[k])
            return tuple(out)
        if self.alpha is None:
            # full-storage profile: only the all-workers class exists
            return tuple([Fraction(0)] * n + [Fraction(1)])
        return tuple(self.beta * (self.alpha**k - 1) for k in range(n + 1))

    def dense_sizes(self) -> tuple[Fraction, ...]:
        """Dense a(V) table (mask-1 indexed); materializes formula profiles."""
        if self.class_sizes is not None:
            return self.class_sizes
        if self.n_workers > 22:
            raise StructureError(f"refusing to materialize 2^{self.n_workers} classes")
        if self.alpha is None:
            full = (1 << self.n_workers) - 1
            return tuple(
                Fraction(1) if mask == full else Fraction(0)
                for mask in iter_class_masks(self.n_workers)
            )
        by_card = self.sizes_by_card
        return tuple(by_card[mask.bit_count()] for mask in iter_class_masks(self.n_workers))

    def nonzero_classes(self) -> list[int]:
        sizes = self.dense_sizes()
        return [mask for mask in iter_class_masks(self.n_workers) if sizes[mask - 1] > 0]


@dataclass(frozen=True)
class LoadAssignment:
    """Fractional computation shares mu[(n, V)] of class V given to worker n.

    Only nonzero shares are stored.  ``redundancy`` r says each class must
    be covered r times in total (r = 1 for the plain elastic assignment,
    r = s + m for straggler-coded plans).
    """

    n_workers: int
    redundancy: int
    shares: Mapping[tuple[int, int], Fraction]

    def __post_init__(self):
        if self.redundancy < 1:
            raise StructureError("redundancy must be >= 1")
        clean: dict[tuple[int, int], Fraction] = {}
        for (n, mask), raw in self.shares.items():
            if not 1 <= n <= self.n_workers:
                raise StructureError(f"share worker {n} out of range 1..{self.n_workers}")
            if not 0 < mask < (1 << self.n_workers):
                raise StructureError(f"share class mask {mask} out of range for N={self.n_workers}")
            value = as_fraction(raw)
            if value != 0:
                clean[(n, mask)] = value
        object.__setattr__(self, "shares", MappingProxyType(clean))

    def share(self, worker: int, mask: int) -> Fraction:
        return self.shares.get((worker, mask), Fraction(0))

    def worker_load(self, worker: int) -> Fraction:
        return sum(
            (v for (n, _), v in self.shares.items() if n == worker), Fraction(0)
        )

    def per_worker_loads(self) -> tuple[Fraction, ...]:
        loads = [Fraction(0)] * self.n_workers
        for (n, _), v in self.shares.items():
            loads[n - 1] += v
        return tuple(loads)

    def class_total(self, mask: int) -> Fraction:
        return sum(
            (v for (_, m), v in self.shares.items() if m == mask), Fraction(0)
        )

    def class_totals(self) -> dict[int, Fraction]:
        totals: dict[int, Fraction] = {}
        for (_, mask), v in self.shares.items():
            totals[mask] = totals.get(mask, Fraction(0)) + v
        return totals

    def sorted_items(self) -> list[tuple[int, int, Fraction]]:
        """(worker, mask, share) triples in a deterministic order."""
        return sorted((n, m, v) for (n, m), v in self.shares.items())

    def to_json_obj(self) -> list[dict]:
        return [
            {"n": n, "classMask": m, "share": f"{v.numerator}/{v.denominator}"}
            for n, m, v in self.sorted_items()
        ]


@dataclass(frozen=True)
class TimeResult:
    """Min-max completion time c*, critical worker count n*, per-worker times."""

    c_star: Fraction
    n_star: int
    per_worker_time: tuple[Fraction, ...]

    def to_json_obj(self) -> dict:
        return {
            "cStar": _both_forms(self.c_star),
            "nStar": self.n_star,
            "perVmTime": [_both_forms(t) for t in self.per_worker_time],
        }


def _both_forms(x: Fraction) -> dict:
    return {"frac": f"{x.numerator}/{x.denominator}", "decimal": float(x)}


@dataclass(frozen=True)
class Violation:
    """One broken numeric invariant of an assignment."""

    kind: str  # "coverage" | "bounds" | "domain"
    worker: int | None
    class_mask: int | None
    detail: str


def validate(
    instance: ProblemInstance,
    profile: ClassProfile,
    assignment: LoadAssignment,
) -> list[Violation]:
    """Check an assignment against a profile; return all violations.

    Checks, per the coverage semantics of ``assignment.redundancy`` r:

    * domain: a worker may only hold a share of a class it belongs to;
    * bounds: 0 <= mu[n, V] <= a(V) for every share;
    * coverage: sum_n mu[n, V] == r * a(V) for classes with |V| >= r,
      and == 0 for classes too small to be covered r times.

    Shape mismatches raise StructureError instead of being reported as
    violations.
    """
    if profile.n_workers != instance.N:
        raise StructureError(
            f"profile covers {profile.n_workers} workers, instance has {instance.N}"
        )
    if assignment.n_workers != instance.N:
        raise StructureError(
            f"assignment covers {assignment.n_workers} workers, instance has {instance.N}"
        )
    r = assignment.redundancy
    violations: list[Violation] = []
    for n, mask, value in assignment.sorted_items():
        if not mask & (1 << (n - 1)):
            violations.append(
                Violation("domain", n, mask, f"worker {n} holds class {mask} it does not store")
            )
        size = profile.a(mask)
        if value < 0 or value > size:
            violations.append(
                Violation(
                    "bounds", n, mask, f"share {value} outside [0, {size}] for class {mask}"
                )
            )
    totals = assignment.class_totals()
    for mask in iter_class_masks(instance.N):
        size = profile.a(mask)
        expected = r * size if mask.bit_count() >= r else Fraction(0)
        got = totals.get(mask, Fraction(0))
        if size == 0 and got == 0:
            continue
        if got != expected:
            violations.append(
                Violation(
                    "coverage", None, mask, f"class {mask} covered {got}, expected {expected}"
                )
            )
    return violations
