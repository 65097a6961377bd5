"""Cascade routing: walk the pool from the entry agent until someone answers."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Collection, Mapping, Sequence

import httpx

from .agents.live import LiveAgentSpec, LiveBackendError, live_query
from .core import (
    Pool,
    Query,
    RoutingDecision,
    RoutingOutcome,
    Scenario,
    TraceSet,
    rerank,
    validate_pool,
)
from .policy import (
    PolicyConfig,
    estimate_capability,
    policy_decision,
    realized_correct,
    reject_threshold,
    reward,
    stable_seed,
)

logger = logging.getLogger(__name__)

DEFAULT_POLICY = PolicyConfig()


class HopError(RuntimeError):
    """A live agent failed while handling a hop."""

    def __init__(self, query_id: str, hop_index: int, agent_id: str, reason: str):
        super().__init__(f"query {query_id!r}, hop {hop_index} ({agent_id}): {reason}")
        self.query_id = query_id
        self.hop_index = hop_index
        self.agent_id = agent_id
        self.reason = reason


@dataclass(frozen=True)
class EngineConfig:
    overhead_mode: str = "none"  # "none" | "fractional"
    overhead_fraction: float = 0.05
    seed: int = 0
    entry_rank: int | None = None  # None: use the pool's entry rank
    max_in_flight: int = 8

    def __post_init__(self):
        if self.overhead_mode not in ("none", "fractional"):
            raise ValueError(f"unknown overhead mode {self.overhead_mode!r}")
        if not 0.0 <= self.overhead_fraction <= 1.0:
            raise ValueError("overhead_fraction must lie in [0, 1]")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


def parse_overhead(text: str) -> tuple[str, float]:
    """``none`` or ``fractional[:<f>]`` -> (mode, fraction)."""
    if text == "none":
        return "none", 0.05
    mode, _, frac = text.partition(":")
    if mode != "fractional":
        raise ValueError(f"bad overhead spec {text!r}; use none or fractional:<f>")
    f = float(frac) if frac else 0.05
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"overhead fraction {f} outside [0, 1]")
    return "fractional", f


def _hop_seed(seed: int, query_id: str, agent_id: str) -> int:
    return stable_seed(seed, query_id, agent_id)


def route_one(
    query: Query,
    pool: Pool,
    policies: Mapping[str, PolicyConfig],
    scenario: Scenario,
    traces: TraceSet | None,
    config: EngineConfig = EngineConfig(),
    client: httpx.Client | None = None,
) -> RoutingOutcome:
    """Route one query down the cascade and account for its cost."""
    rank = config.entry_rank or pool.entry_rank
    path: list[str] = []
    decisions: list[RoutingDecision] = []
    rejected_cost = 0.0
    threshold = reject_threshold(scenario)

    while True:
        agent = pool.by_rank(rank)
        is_fallback = rank == pool.size
        path.append(agent.id)
        if agent.is_live:
            spec: LiveAgentSpec = agent.backend
            try:
                resp = live_query(spec, query, scenario, client)
            except (LiveBackendError, ValueError) as exc:
                raise HopError(query.id, len(path) - 1, agent.id, str(exc)) from exc
            answered = is_fallback or resp.decision == "answer"
            dec = RoutingDecision(
                "answer" if answered else "reject",
                1.0 if resp.decision == "answer" else 0.0,
                threshold,
            )
        else:
            trace = traces.get(query.id, agent.id)
            policy = policies.get(agent.id, DEFAULT_POLICY)
            hop_seed = _hop_seed(config.seed, query.id, agent.id)
            p_hat = estimate_capability(trace, policy, hop_seed)
            dec = policy_decision(p_hat, policy, scenario, is_fallback)
        decisions.append(dec)
        if dec.answered:
            break
        rejected_cost += agent.cost
        rank += 1

    if agent.is_live:
        correct = None
        rew = None
    else:
        correct = realized_correct(trace, policy, hop_seed)
        rew = reward("correct" if correct else "incorrect", scenario)
    overhead = config.overhead_fraction * rejected_cost if config.overhead_mode == "fractional" else 0.0
    return RoutingOutcome(
        query_id=query.id,
        path=tuple(path),
        final_agent=agent.id,
        correct=correct,
        inference_cost=agent.cost,
        overhead_cost=overhead,
        total_cost=agent.cost + overhead,
        reward=rew,
        per_hop_decisions=tuple(decisions),
    )


@dataclass
class BatchResult:
    """Outcomes in input order; live failures are kept out-of-line in ``errors``."""

    outcomes: list[RoutingOutcome] = field(default_factory=list)
    errors: list[HopError] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.errors)


def run_batch(
    queries: Sequence[Query],
    pool: Pool,
    policies: Mapping[str, PolicyConfig],
    scenario: Scenario,
    traces: TraceSet | None,
    config: EngineConfig = EngineConfig(),
) -> BatchResult:
    """Route every query independently.

    A missing trace aborts the batch immediately. Live-agent failures are
    collected per query and flag the result as partial.
    """
    problems = validate_pool(pool)
    if problems:
        raise ValueError("invalid pool: " + "; ".join(problems))
    result = BatchResult()
    if not any(a.is_live for a in pool.agents):
        for q in queries:
            result.outcomes.append(route_one(q, pool, policies, scenario, traces, config))
        return result

    def one(q: Query):
        try:
            return route_one(q, pool, policies, scenario, traces, config, client)
        except HopError as exc:
            return exc

    limits = httpx.Limits(max_connections=config.max_in_flight)
    with httpx.Client(limits=limits) as client:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as ex:
            for item in ex.map(one, queries):
                if isinstance(item, HopError):
                    logger.warning("%s", item)
                    result.errors.append(item)
                else:
                    result.outcomes.append(item)
    return result


def apply_pool_edit(pool: Pool, remove: Collection[str]) -> Pool:
    """Drop agents and re-rank the survivors; policies are left untouched."""
    remove = set(remove)
    unknown = remove - set(pool.ids)
    if unknown:
        raise ValueError(f"cannot remove unknown agents: {sorted(unknown)}")
    kept = [a for a in pool.agents if a.id not in remove]
    if not kept:
        raise ValueError("removing every agent leaves an empty pool")
    # entry moves to the first survivor at or above the old entry rank
    later = [i for i, a in enumerate(kept, start=1) if a.rank >= pool.entry_rank]
    entry = later[0] if later else len(kept)
    return rerank(kept, entry_rank=entry)
