"""Self-routing agent cascades: each agent answers or passes the query on."""

from .core import (
    AgentSpec,
    CapabilityTrace,
    EvalReport,
    Pool,
    Query,
    RoutingDecision,
    RoutingOutcome,
    Scenario,
    TraceSet,
    load_trace_set,
    serialize_trace_set,
    validate_pool,
)
from .engine import EngineConfig, apply_pool_edit, route_one, run_batch
from .evaluation import (
    BaselineSpec,
    ExternalSpec,
    aggregate,
    classification_metrics,
    compute_utility,
    delta_performance,
    easy_hard_split,
    oracle_route,
    run_baseline,
)
from .policy import (
    PolicyConfig,
    RewardParams,
    build_sft_dataset,
    decide,
    estimate_capability,
    expected_rewards,
    reject_threshold,
    reward,
    sft_label,
)

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "CapabilityTrace",
    "EvalReport",
    "Pool",
    "Query",
    "RoutingDecision",
    "RoutingOutcome",
    "Scenario",
    "TraceSet",
    "load_trace_set",
    "serialize_trace_set",
    "validate_pool",
    "EngineConfig",
    "apply_pool_edit",
    "route_one",
    "run_batch",
    "BaselineSpec",
    "ExternalSpec",
    "aggregate",
    "classification_metrics",
    "compute_utility",
    "delta_performance",
    "easy_hard_split",
    "oracle_route",
    "run_baseline",
    "PolicyConfig",
    "RewardParams",
    "build_sft_dataset",
    "decide",
    "estimate_capability",
    "expected_rewards",
    "reject_threshold",
    "reward",
    "sft_label",
]
