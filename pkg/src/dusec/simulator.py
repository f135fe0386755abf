"""Elastic timeline simulation with centralized placement baselines.

A timeline is a catalog of workers (each with frozen storage, fixed the
first time it appears) plus a sequence of steps naming which workers are
up, their current speeds, and optionally which of them straggle.  Every
step is solved independently: workers are sorted by speed, the step's
storage-class profile is built, and the optimal assignment is computed
(elastic, or straggler-coded when a tolerance is configured).

Baselines rebuild classical centralized placements (cyclic, repetition,
all-subsets) on the same fleet each step and price them with the same
transportation oracle, so the comparison is apples to apples.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .model import (
    ClassProfile,
    ProblemInstance,
    ProfileMode,
    StructureError,
    TimeResult,
    as_fraction,
)
from .optimizer import assign_loads
from .oracle import flow_assign, lp_oracle
from .storage import (
    ExplicitStorage,
    asymptotic_profile,
    cumulative_exclusive,
    exact_profile,
    generate_worker_subset,
    profile_from_alpha,
)
from .straggler import (
    DEFAULT_FIELD_MODULUS,
    StragglerConfig,
    decode,
    encode,
    redundant_assign,
)

SCHEMA_VERSION = 1

BASELINE_KINDS = ("cyclic", "repetition", "man")


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario input; message names the path."""


class ConfigurationError(ValueError):
    """Baseline parameters incompatible with the fleet (divisibility etc.)."""


@dataclass(frozen=True)
class CatalogEntry:
    """One worker's frozen storage: either a seed to draw it, or the
    explicit dataset list.  ``fraction`` is the stored share M/K."""

    fraction: Fraction
    seed: int | None = None
    datasets: tuple[int, ...] | None = None

    def __post_init__(self):
        if (self.seed is None) == (self.datasets is None):
            raise ScenarioError("catalog entry needs exactly one of seed/datasets")
        if not 0 <= self.fraction <= 1:
            raise ScenarioError(f"storage fraction {self.fraction} outside [0, 1]")


@dataclass(frozen=True)
class TimelineStep:
    available: tuple[str, ...]
    speeds: Mapping[str, Fraction]
    stragglers: frozenset[str] = frozenset()


@dataclass(frozen=True)
class ElasticTimeline:
    vm_catalog: Mapping[str, CatalogEntry]
    steps: tuple[TimelineStep, ...]
    K: int | None = None


@dataclass(frozen=True)
class StepReport:
    step_index: int
    vm_ids: tuple[str, ...]  # available workers, slowest first
    c_star: Fraction
    n_star: int
    per_vm_time: tuple[Fraction, ...]
    coverage: Fraction
    task_value: tuple[int, ...] | None
    baseline_times: Mapping[str, Fraction]

    def to_json_obj(self) -> dict:
        return {
            "step": self.step_index,
            "nAvailable": len(self.vm_ids),
            "vmIds": list(self.vm_ids),
            "cStar": _both(self.c_star),
            "nStar": self.n_star,
            "perVmTime": [_both(t) for t in self.per_vm_time],
            "coverage": _both(self.coverage),
            "taskValue": list(self.task_value) if self.task_value is not None else None,
            "baselines": {k: _both(v) for k, v in sorted(self.baseline_times.items())},
        }


def _both(x: Fraction) -> dict:
    return {"frac": f"{x.numerator}/{x.denominator}", "decimal": float(x)}


@dataclass(frozen=True)
class Scenario:
    timeline: ElasticTimeline
    mode: ProfileMode
    straggler: StragglerConfig | None
    baselines: tuple[tuple[str, int], ...]
    schema_version: int


def _fraction_at(obj, path: str) -> Fraction:
    try:
        return as_fraction(obj)
    except (StructureError, ValueError, TypeError) as exc:
        raise ScenarioError(f"{path}: not a rational number ({obj!r})") from exc


def load_scenario(obj: dict) -> Scenario:
    """Parse and validate a scenario object (see README for the format)."""
    if not isinstance(obj, dict):
        raise ScenarioError("scenario: expected a JSON object")
    version = obj.get("schemaVersion", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schemaVersion: unsupported version {version!r}")
    mode_raw = obj.get("mode")
    if mode_raw not in ("exact", "asymptotic"):
        raise ScenarioError(f"mode: must be 'exact' or 'asymptotic', got {mode_raw!r}")
    mode = ProfileMode(mode_raw)
    K = obj.get("K")
    if K is not None and (not isinstance(K, int) or K < 1):
        raise ScenarioError(f"K: must be a positive integer, got {K!r}")

    catalog_raw = obj.get("vmCatalog")
    if not isinstance(catalog_raw, dict) or not catalog_raw:
        raise ScenarioError("vmCatalog: expected a non-empty object")
    catalog: dict[str, CatalogEntry] = {}
    for vm_id, entry in catalog_raw.items():
        path = f"vmCatalog.{vm_id}"
        if not isinstance(entry, dict):
            raise ScenarioError(f"{path}: expected an object")
        seed = entry.get("seed")
        datasets = entry.get("datasets")
        if seed is not None and datasets is not None:
            raise ScenarioError(f"{path}: give either 'seed' or 'datasets', not both")
        if datasets is not None:
            if K is None:
                raise ScenarioError(f"{path}.datasets: explicit datasets require K")
            ds = tuple(sorted(int(d) for d in datasets))
            if ds and (ds[0] < 0 or ds[-1] >= K):
                raise ScenarioError(f"{path}.datasets: dataset id outside [0, {K})")
            if len(set(ds)) != len(ds):
                raise ScenarioError(f"{path}.datasets: duplicate dataset id")
            catalog[vm_id] = CatalogEntry(fraction=Fraction(len(ds), K), datasets=ds)
            continue
        if seed is None:
            raise ScenarioError(f"{path}: needs 'seed' or 'datasets'")
        fraction = _fraction_at(entry.get("storageFraction"), f"{path}.storageFraction")
        try:
            catalog[vm_id] = CatalogEntry(fraction=fraction, seed=int(seed))
        except ScenarioError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc

    steps_raw = obj.get("steps")
    if not isinstance(steps_raw, list) or not steps_raw:
        raise ScenarioError("steps: expected a non-empty array")
    straggler_raw = obj.get("straggler")
    straggler = None
    if straggler_raw is not None:
        if not isinstance(straggler_raw, dict):
            raise ScenarioError("straggler: expected an object")
        straggler = StragglerConfig(
            s=int(straggler_raw.get("s", 0)),
            m=int(straggler_raw.get("m", 1)),
            field_modulus=int(straggler_raw.get("fieldModulus", DEFAULT_FIELD_MODULUS)),
        )

    steps: list[TimelineStep] = []
    for i, step_raw in enumerate(steps_raw):
        path = f"steps[{i}]"
        if not isinstance(step_raw, dict):
            raise ScenarioError(f"{path}: expected an object")
        available = step_raw.get("available")
        if not isinstance(available, list) or not available:
            raise ScenarioError(f"{path}.available: expected a non-empty array")
        for vm_id in available:
            if vm_id not in catalog:
                raise ScenarioError(f"{path}.available: unknown vm {vm_id!r}")
        if len(set(available)) != len(available):
            raise ScenarioError(f"{path}.available: duplicate vm id")
        speeds_raw = step_raw.get("speeds")
        if not isinstance(speeds_raw, dict):
            raise ScenarioError(f"{path}.speeds: expected an object")
        speeds = {}
        for vm_id in available:
            if vm_id not in speeds_raw:
                raise ScenarioError(f"{path}.speeds: missing speed for {vm_id!r}")
            value = _fraction_at(speeds_raw[vm_id], f"{path}.speeds.{vm_id}")
            if value <= 0:
                raise ScenarioError(f"{path}.speeds.{vm_id}: speed must be positive")
            speeds[vm_id] = value
        stragglers = step_raw.get("stragglers", [])
        if not isinstance(stragglers, list):
            raise ScenarioError(f"{path}.stragglers: expected an array")
        for vm_id in stragglers:
            if vm_id not in available:
                raise ScenarioError(f"{path}.stragglers: {vm_id!r} is not available this step")
        if stragglers and straggler is None:
            raise ScenarioError(f"{path}.stragglers: set but scenario has no straggler config")
        steps.append(
            TimelineStep(
                available=tuple(available),
                speeds=speeds,
                stragglers=frozenset(stragglers),
            )
        )

    baselines_raw = obj.get("baselines", [])
    if not isinstance(baselines_raw, list):
        raise ScenarioError("baselines: expected an array")
    baselines = []
    for i, b in enumerate(baselines_raw):
        path = f"baselines[{i}]"
        if not isinstance(b, dict) or b.get("kind") not in BASELINE_KINDS:
            raise ScenarioError(f"{path}: expected {{kind: one of {BASELINE_KINDS}, replication}}")
        r = b.get("replication")
        if not isinstance(r, int) or r < 1:
            raise ScenarioError(f"{path}.replication: must be a positive integer")
        baselines.append((b["kind"], r))

    if mode is ProfileMode.EXACT and K is None:
        raise ScenarioError("K: required in exact mode")
    if baselines and K is None:
        raise ScenarioError("K: required when baselines are requested")

    timeline = ElasticTimeline(vm_catalog=catalog, steps=tuple(steps), K=K)
    return Scenario(
        timeline=timeline,
        mode=mode,
        straggler=straggler,
        baselines=tuple(baselines),
        schema_version=version,
    )


def _catalog_storage(entry: CatalogEntry, K: int) -> np.ndarray:
    if entry.datasets is not None:
        arr = np.asarray(entry.datasets, dtype=np.int64)
        arr.setflags(write=False)
        return arr
    M = entry.fraction * K
    if M.denominator != 1:
        raise ScenarioError(f"storage fraction {entry.fraction} times K={K} is not an integer")
    return generate_worker_subset(K, int(M), entry.seed)


def _step_instance(
    timeline: ElasticTimeline,
    step: TimelineStep,
    step_index: int,
    mode: ProfileMode,
    storage_cache: dict[str, np.ndarray],
) -> tuple[tuple[str, ...], ProblemInstance, ClassProfile]:
    order = sorted(step.available, key=lambda v: (step.speeds[v], v))
    speeds = tuple(step.speeds[v] for v in order)
    fractions = {timeline.vm_catalog[v].fraction for v in order}
    if len(fractions) != 1:
        raise ScenarioError(
            f"steps[{step_index}]: storage fractions differ across available vms ({sorted(map(str, fractions))})"
        )
    fraction = fractions.pop()
    if timeline.K is not None:
        M = fraction * timeline.K
        if M.denominator != 1:
            raise ScenarioError(
                f"steps[{step_index}]: fraction {fraction} times K={timeline.K} is not an integer"
            )
        instance = ProblemInstance(K=timeline.K, M=int(M), speeds=speeds)
    else:
        instance = ProblemInstance(
            K=fraction.denominator, M=fraction.numerator, speeds=speeds
        )
    if mode is ProfileMode.EXACT:
        per_worker = tuple(storage_cache[v] for v in order)
        storage = ExplicitStorage(
            K=instance.K, M=instance.M, per_worker=per_worker, seed=None
        )
        profile = exact_profile(storage)
    else:
        profile = asymptotic_profile(instance)
    return tuple(order), instance, profile


def _demo_messages(masks: Sequence[int], config: StragglerConfig) -> dict[int, tuple[int, ...]]:
    """Deterministic per-class message vectors (one element per part)."""
    p = config.field_modulus
    return {
        mask: tuple((mask * 2654435761 + j) % p for j in range(config.m))
        for mask in masks
    }


def _run_step(
    timeline: ElasticTimeline,
    step: TimelineStep,
    step_index: int,
    mode: ProfileMode,
    straggler: StragglerConfig | None,
    baselines: tuple[tuple[str, int], ...],
    storage_cache: dict[str, np.ndarray],
) -> StepReport:
    order, instance, profile = _step_instance(timeline, step, step_index, mode, storage_cache)
    if straggler is not None and len(step.stragglers) > straggler.s:
        raise ScenarioError(
            f"steps[{step_index}]: {len(step.stragglers)} stragglers exceed the configured s={straggler.s}"
        )
    task_value = None
    if straggler is not None:
        plan = redundant_assign(instance, profile, straggler)
        time = plan.time
        messages = _demo_messages(sorted(plan.assignment.class_totals()), straggler)
        if messages:
            transmissions = encode(plan.assignment, straggler, messages)
            straggler_positions = {
                i + 1 for i, v in enumerate(order) if v in step.stragglers
            }
            survivors = [
                t for t in transmissions if t.vm_index not in straggler_positions
            ]
            task_value = decode(survivors, straggler, instance.N)
            expected = tuple(
                sum(v[j] for v in messages.values()) % straggler.field_modulus
                for j in range(straggler.m)
            )
            if task_value != expected:
                raise AssertionError(
                    f"steps[{step_index}]: decoded aggregate does not match the message sum"
                )
        else:
            task_value = ()
    elif mode is ProfileMode.EXACT:
        _, time = flow_assign(instance, profile, redundancy=1)
    else:
        _, time = assign_loads(instance, profile)
    baseline_times: dict[str, Fraction] = {}
    for kind, r in baselines:
        try:
            _, value = baseline_assign(kind, r, instance)
        except ConfigurationError as exc:
            raise ConfigurationError(f"steps[{step_index}]: baseline {kind} r={r}: {exc}") from exc
        baseline_times[f"{kind}_r{r}"] = value
    return StepReport(
        step_index=step_index,
        vm_ids=order,
        c_star=time.c_star,
        n_star=time.n_star,
        per_vm_time=time.per_worker_time,
        coverage=cumulative_exclusive(profile, instance.N),
        task_value=task_value,
        baseline_times=baseline_times,
    )


def run_timeline(
    timeline: ElasticTimeline,
    mode: ProfileMode,
    straggler: StragglerConfig | None = None,
    baselines: Sequence[tuple[str, int]] = (),
    threads: int = 1,
) -> tuple[StepReport, ...]:
    """Solve every step of the timeline independently.

    Storage is drawn once per catalog worker (first appearance) and reused
    across steps.  ``threads`` > 1 evaluates steps in a thread pool;
    results keep step order either way.
    """
    if not timeline.steps:
        raise ScenarioError("steps: timeline has no steps")
    storage_cache: dict[str, np.ndarray] = {}
    if mode is ProfileMode.EXACT:
        if timeline.K is None:
            raise ScenarioError("K: required in exact mode")
        for step in timeline.steps:
            for vm_id in step.available:
                if vm_id not in storage_cache:
                    storage_cache[vm_id] = _catalog_storage(
                        timeline.vm_catalog[vm_id], timeline.K
                    )
    base = tuple(baselines)
    for kind, _ in base:
        if kind not in BASELINE_KINDS:
            raise ScenarioError(f"baselines: unknown kind {kind!r}")
    jobs = [
        (timeline, step, i, mode, straggler, base, storage_cache)
        for i, step in enumerate(timeline.steps)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return tuple(pool.map(lambda args: _run_step(*args), jobs))
    return tuple(_run_step(*args) for args in jobs)


def baseline_assign(
    kind: str, replication: int, instance: ProblemInstance
) -> tuple[ExplicitStorage, Fraction]:
    """Centralized placement with replication factor r, priced by the oracle.

    cyclic: K/N contiguous blocks, worker n stores blocks n..n+r-1 (mod N).
    repetition: workers in N/r groups, each group stores its own K/(N/r) block.
    man: one block per r-subset of workers, stored by exactly that subset.

    All three give every worker rK/N datasets.  Block-size divisibility is
    required (ConfigurationError otherwise).
    """
    N, K, r = instance.N, instance.K, replication
    if kind not in BASELINE_KINDS:
        raise ConfigurationError(f"unknown baseline kind {kind!r}")
    if not 1 <= r <= N:
        raise ConfigurationError(f"replication {r} outside [1, {N}]")
    worker_sets: list[list[int]] = [[] for _ in range(N)]
    if kind == "cyclic":
        if K % N:
            raise ConfigurationError(f"cyclic needs N | K; got K={K}, N={N}")
        block = K // N
        for n in range(N):
            for t in range(r):
                b = (n + t) % N
                worker_sets[n].extend(range(b * block, (b + 1) * block))
    elif kind == "repetition":
        if N % r:
            raise ConfigurationError(f"repetition needs r | N; got N={N}, r={r}")
        groups = N // r
        if K % groups:
            raise ConfigurationError(f"repetition needs (N/r) | K; got K={K}, groups={groups}")
        block = K // groups
        for n in range(N):
            g = n // r
            worker_sets[n].extend(range(g * block, (g + 1) * block))
    else:  # man
        n_blocks = 1
        for i in range(r):
            n_blocks = n_blocks * (N - i) // (i + 1)
        if K % n_blocks:
            raise ConfigurationError(
                f"man needs C(N,r) | K; got K={K}, C({N},{r})={n_blocks}"
            )
        block = K // n_blocks
        for b, subset in enumerate(combinations(range(N), r)):
            for n in subset:
                worker_sets[n].extend(range(b * block, (b + 1) * block))
    per_worker = []
    for datasets in worker_sets:
        arr = np.asarray(sorted(datasets), dtype=np.int64)
        arr.setflags(write=False)
        per_worker.append(arr)
    storage = ExplicitStorage(
        K=K, M=r * K // N, per_worker=tuple(per_worker), seed=None
    )
    value = lp_oracle(instance, exact_profile(storage), redundancy=1)
    return storage, value


@dataclass(frozen=True)
class GradientDemoSpec:
    """Synthetic least-squares problem for the end-to-end demo."""

    n_features: int = 4
    n_samples: int = 256
    learning_rate: float = 0.05
    iterations: int = 60
    seed: int = 0


def gradient_demo(timeline: ElasticTimeline, spec: GradientDemoSpec) -> np.ndarray:
    """Gradient descent where each iteration sees only the covered shards.

    The K datasets are contiguous shards of a synthetic least-squares
    problem.  Iteration i uses timeline step i (cycling); its gradient sums
    per-shard contributions in ascending shard order over the shards stored
    by at least one available worker, so full coverage reproduces the
    centralized computation bitwise and zero coverage leaves the model
    untouched.  Returns the loss before each update plus the final loss
    (length iterations + 1).
    """
    K = timeline.K
    if K is None:
        raise ScenarioError("K: required for the gradient demo")
    if spec.n_samples % K:
        raise ScenarioError(f"n_samples={spec.n_samples} must be divisible by K={K}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed])))
    X = rng.standard_normal((spec.n_samples, spec.n_features))
    w_true = rng.standard_normal(spec.n_features)
    y = X @ w_true
    shard = spec.n_samples // K

    storage_cache: dict[str, np.ndarray] = {}
    covered_per_step: list[np.ndarray] = []
    for step in timeline.steps:
        covered: set[int] = set()
        for vm_id in step.available:
            if vm_id not in storage_cache:
                storage_cache[vm_id] = _catalog_storage(timeline.vm_catalog[vm_id], K)
            covered.update(int(d) for d in storage_cache[vm_id])
        covered_per_step.append(np.asarray(sorted(covered), dtype=np.int64))

    w = np.zeros(spec.n_features)
    losses = []

    def loss(weights: np.ndarray) -> float:
        residual = X @ weights - y
        return 0.5 * float(residual @ residual) / spec.n_samples

    losses.append(loss(w))
    for it in range(spec.iterations):
        covered = covered_per_step[it % len(covered_per_step)]
        grad = np.zeros(spec.n_features)
        for k in covered:
            rows = slice(k * shard, (k + 1) * shard)
            grad = grad + X[rows].T @ (X[rows] @ w - y[rows])
        w = w - spec.learning_rate * (grad / spec.n_samples)
        losses.append(loss(w))
    return np.asarray(losses)


def reports_to_csv(reports: Sequence[StepReport]) -> str:
    """One row per step; rationals rendered as decimals for plotting."""
    baseline_keys = sorted({k for rep in reports for k in rep.baseline_times})
    header = ["step", "N_t", "cStar", "nStar", "coverage"] + [
        f"baseline_{k}" for k in baseline_keys
    ]
    lines = [",".join(header)]
    for rep in reports:
        row = [
            str(rep.step_index),
            str(len(rep.vm_ids)),
            format(float(rep.c_star), ".17g"),
            str(rep.n_star),
            format(float(rep.coverage), ".17g"),
        ]
        for k in baseline_keys:
            value = rep.baseline_times.get(k)
            row.append("" if value is None else format(float(value), ".17g"))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def reports_to_json_obj(reports: Sequence[StepReport]) -> dict:
    """Exact mirror of the CSV: every rational as both p/q and decimal."""
    return {
        "schemaVersion": SCHEMA_VERSION,
        "steps": [rep.to_json_obj() for rep in reports],
    }
