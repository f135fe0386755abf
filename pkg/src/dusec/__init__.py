"""Storage-aware elastic load assignment for distributed linear workloads.

Workers each hold a random (or measured) subset of the datasets; the
library computes the exact min-max completion time for any subset of
workers at any speeds, constructs an optimal assignment, extends it with
straggler-tolerant coded redundancy, and simulates multi-step elastic
timelines against classical centralized placements.
"""

from .model import (
    ClassProfile,
    LoadAssignment,
    ProblemInstance,
    ProfileMode,
    StructureError,
    TimeResult,
    Violation,
    as_fraction,
    iter_class_masks,
    iter_submasks,
    mask_of,
    validate,
    workers_of,
)
from .optimizer import (
    CutsetBound,
    InfeasibleRearrangement,
    RearrangeDelta,
    assign_loads,
    critical_conditions_hold,
    cutset_bounds,
    optimal_time,
    rearrange,
)
from .oracle import (
    ORACLE_MAX_WORKERS,
    InfeasibleRedundancy,
    OracleScopeError,
    feasible_at,
    flow_assign,
    lp_oracle,
)
from .simulator import (
    CatalogEntry,
    ConfigurationError,
    ElasticTimeline,
    GradientDemoSpec,
    Scenario,
    ScenarioError,
    StepReport,
    TimelineStep,
    baseline_assign,
    gradient_demo,
    load_scenario,
    reports_to_csv,
    reports_to_json_obj,
    run_timeline,
)
from .storage import (
    ExplicitStorage,
    asymptotic_profile,
    cumulative_exclusive,
    exact_profile,
    generate_decentralized,
    generate_worker_subset,
    profile_from_alpha,
)
from .straggler import (
    DEFAULT_FIELD_MODULUS,
    CodedTransmission,
    CodingConfigError,
    InsufficientResponses,
    StragglerConfig,
    StragglerPlan,
    decode,
    deserialize_transmission,
    encode,
    part_schedule,
    recompute_transmission,
    redundant_assign,
    serialize_transmission,
)

__version__ = "0.1.0"

__all__ = [
    "ClassProfile",
    "LoadAssignment",
    "ProblemInstance",
    "ProfileMode",
    "StructureError",
    "TimeResult",
    "Violation",
    "as_fraction",
    "iter_class_masks",
    "iter_submasks",
    "mask_of",
    "validate",
    "workers_of",
    "CutsetBound",
    "InfeasibleRearrangement",
    "RearrangeDelta",
    "assign_loads",
    "critical_conditions_hold",
    "cutset_bounds",
    "optimal_time",
    "rearrange",
    "ORACLE_MAX_WORKERS",
    "InfeasibleRedundancy",
    "OracleScopeError",
    "feasible_at",
    "flow_assign",
    "lp_oracle",
    "CatalogEntry",
    "ConfigurationError",
    "ElasticTimeline",
    "GradientDemoSpec",
    "Scenario",
    "ScenarioError",
    "StepReport",
    "TimelineStep",
    "baseline_assign",
    "gradient_demo",
    "load_scenario",
    "reports_to_csv",
    "reports_to_json_obj",
    "run_timeline",
    "ExplicitStorage",
    "asymptotic_profile",
    "cumulative_exclusive",
    "exact_profile",
    "generate_decentralized",
    "generate_worker_subset",
    "profile_from_alpha",
    "DEFAULT_FIELD_MODULUS",
    "CodedTransmission",
    "CodingConfigError",
    "InsufficientResponses",
    "StragglerConfig",
    "StragglerPlan",
    "decode",
    "deserialize_transmission",
    "encode",
    "part_schedule",
    "recompute_transmission",
    "redundant_assign",
    "serialize_transmission",
    "__version__",
]
