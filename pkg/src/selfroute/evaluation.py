"""Aggregate metrics, baseline routers and the analysis helpers."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    ClassificationMetrics,
    EasyHardCosts,
    EvalReport,
    Pool,
    Query,
    RoutingDecision,
    RoutingOutcome,
    Scenario,
    TraceSet,
)
from .engine import EngineConfig, run_batch
from .policy import (
    PolicyConfig,
    _logit,
    _sigmoid,
    base_capability,
    reject_threshold,
    reward,
    stable_seed,
)

BASELINE_KINDS = ("oracle", "smallest", "largest", "random", "external_threshold")


def compute_utility(performance: float, mean_cost: float, alpha: float) -> float:
    return performance - alpha * mean_cost


def aggregate(
    outcomes: Sequence[RoutingOutcome],
    scenario: Scenario,
    agent_ids: Sequence[str] | None = None,
) -> EvalReport:
    """Performance, cost, utility, answer rates and routing distribution.

    Outcomes whose correctness was not scored (live answers) are left out
    of the performance mean but still count towards cost. Answer rates are
    only reported for agents that at least one query reached.
    """
    if not outcomes:
        raise ValueError("cannot aggregate an empty outcome list")
    scored = [o.correct for o in outcomes if o.correct is not None]
    performance = math.fsum(scored) / len(scored) if scored else float("nan")
    mean_cost = math.fsum(o.total_cost for o in outcomes) / len(outcomes)

    reached: Counter[str] = Counter()
    answered: Counter[str] = Counter()
    for o in outcomes:
        for agent_id, dec in zip(o.path, o.per_hop_decisions):
            reached[agent_id] += 1
            if dec.answered:
                answered[agent_id] += 1
    finals = Counter(o.final_agent for o in outcomes)

    order = list(agent_ids) if agent_ids is not None else list(
        dict.fromkeys(a for o in outcomes for a in o.path)
    )
    answer_rate = {a: answered[a] / reached[a] for a in order if reached[a]}
    distribution = {a: finals[a] / len(outcomes) for a in order}
    for a in finals:
        distribution.setdefault(a, finals[a] / len(outcomes))

    return EvalReport(
        performance=performance,
        mean_cost=mean_cost,
        utility=compute_utility(performance, mean_cost, scenario.alpha),
        per_agent_answer_rate=answer_rate,
        routing_distribution=distribution,
        n_queries=len(outcomes),
        alpha=scenario.alpha,
    )


def _truth(traces: TraceSet, query_id: str, agent_id: str, truth: str) -> bool:
    t = traces.get(query_id, agent_id)
    if truth == "greedy":
        return t.greedy_correct
    if truth == "frequency":
        return t.n_correct * 2 > t.n_samples
    raise ValueError(f"unknown capability truth {truth!r}")


def oracle_route(query: Query | str, pool: Pool, traces: TraceSet, truth: str = "greedy") -> str:
    """Smallest capable agent, or the cheapest agent when none is capable."""
    qid = query if isinstance(query, str) else query.id
    capable = [a.id for a in pool.agents if _truth(traces, qid, a.id, truth)]
    return capable[0] if capable else pool.agents[0].id


@dataclass(frozen=True)
class ExternalSpec:
    score_noise_sigma: float = 0.0
    threshold: float | None = None  # None: the scenario's reject threshold


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    random_seed: int = 0
    external: ExternalSpec | None = None

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}")


def _single_hop(query_id: str, agent, traces: TraceSet, scenario: Scenario) -> RoutingOutcome:
    correct = traces.get(query_id, agent.id).greedy_correct
    return RoutingOutcome(
        query_id=query_id,
        path=(agent.id,),
        final_agent=agent.id,
        correct=correct,
        inference_cost=agent.cost,
        overhead_cost=0.0,
        total_cost=agent.cost,
        reward=reward("correct" if correct else "incorrect", scenario),
        per_hop_decisions=(RoutingDecision("answer", float(correct), 0.0),),
    )


def _oracle_outcome(query_id: str, pool: Pool, traces: TraceSet, scenario: Scenario, truth: str) -> RoutingOutcome:
    # rendered as a perfectly self-aware cascade truncated at the oracle's pick
    chosen = pool.by_id(oracle_route(query_id, pool, traces, truth))
    t = reject_threshold(scenario)
    path = tuple(a.id for a in pool.agents[: chosen.rank])
    decisions = tuple(RoutingDecision("reject", 0.0, t) for _ in path[:-1])
    correct = _truth(traces, query_id, chosen.id, truth)
    decisions += (RoutingDecision("answer", float(correct), t),)
    return RoutingOutcome(
        query_id=query_id,
        path=path,
        final_agent=chosen.id,
        correct=correct,
        inference_cost=chosen.cost,
        overhead_cost=0.0,
        total_cost=chosen.cost,
        reward=reward("correct" if correct else "incorrect", scenario),
        per_hop_decisions=decisions,
    )


def _external_outcome(
    query_id: str,
    pool: Pool,
    traces: TraceSet,
    scenario: Scenario,
    ext: ExternalSpec,
    seed: int,
    config: EngineConfig,
) -> RoutingOutcome:
    threshold = reject_threshold(scenario) if ext.threshold is None else ext.threshold
    estimator = PolicyConfig()
    path, decisions = [], []
    rejected_cost = 0.0
    for agent in pool.agents[(config.entry_rank or pool.entry_rank) - 1 :]:
        trace = traces.get(query_id, agent.id)
        score = base_capability(trace, estimator)
        if ext.score_noise_sigma > 0:
            # the observer's own noise stream, independent of any agent's
            z = np.random.default_rng(stable_seed(seed, "external", query_id, agent.id)).standard_normal()
            score = _sigmoid(_logit(score) + ext.score_noise_sigma * z)
        is_fallback = agent.rank == pool.size
        answered = is_fallback or score > threshold
        path.append(agent.id)
        decisions.append(RoutingDecision("answer" if answered else "reject", score, threshold))
        if answered:
            break
        rejected_cost += agent.cost
    correct = trace.greedy_correct
    overhead = config.overhead_fraction * rejected_cost if config.overhead_mode == "fractional" else 0.0
    return RoutingOutcome(
        query_id=query_id,
        path=tuple(path),
        final_agent=agent.id,
        correct=correct,
        inference_cost=agent.cost,
        overhead_cost=overhead,
        total_cost=agent.cost + overhead,
        reward=reward("correct" if correct else "incorrect", scenario),
        per_hop_decisions=tuple(decisions),
    )


def run_baseline(
    spec: BaselineSpec,
    queries: Sequence[Query],
    pool: Pool,
    traces: TraceSet,
    scenario: Scenario,
    config: EngineConfig = EngineConfig(),
    truth: str = "greedy",
) -> list[RoutingOutcome]:
    out = []
    for q in queries:
        if spec.kind == "oracle":
            out.append(_oracle_outcome(q.id, pool, traces, scenario, truth))
        elif spec.kind == "smallest":
            out.append(_single_hop(q.id, pool.agents[0], traces, scenario))
        elif spec.kind == "largest":
            out.append(_single_hop(q.id, pool.agents[-1], traces, scenario))
        elif spec.kind == "random":
            rng = np.random.default_rng(stable_seed(spec.random_seed, "random", q.id))
            agent = pool.agents[int(rng.integers(pool.size))]
            out.append(_single_hop(q.id, agent, traces, scenario))
        else:
            ext = spec.external or ExternalSpec()
            out.append(_external_outcome(q.id, pool, traces, scenario, ext, spec.random_seed, config))
    return out


def easy_hard_split(
    outcomes: Sequence[RoutingOutcome],
    traces: TraceSet,
    easy_cutoff_rank: int,
    pool: Pool,
) -> EasyHardCosts:
    """Mean cost of queries solvable at rank <= cutoff ("easy") versus the rest."""
    if not 1 <= easy_cutoff_rank <= pool.size:
        raise ValueError(f"cutoff {easy_cutoff_rank} outside [1, {pool.size}]")
    low = pool.agents[:easy_cutoff_rank]
    easy, hard = [], []
    for o in outcomes:
        is_easy = any(traces.get(o.query_id, a.id).greedy_correct for a in low)
        (easy if is_easy else hard).append(o.total_cost)
    return EasyHardCosts(
        easy_mean_cost=math.fsum(easy) / len(easy) if easy else None,
        hard_mean_cost=math.fsum(hard) / len(hard) if hard else None,
    )


def classification_metrics(decisions: Sequence[bool], truths: Sequence[bool]) -> ClassificationMetrics:
    """Binary metrics with "capable / answered" as the positive class."""
    if len(decisions) != len(truths):
        raise ValueError(f"length mismatch: {len(decisions)} decisions vs {len(truths)} truths")
    if not decisions:
        raise ValueError("no samples")
    pred = np.asarray(decisions, dtype=bool)
    true = np.asarray(truths, dtype=bool)
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    tn = int(np.sum(~pred & ~true))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassificationMetrics(
        accuracy=(tp + tn) / len(pred),
        precision=precision,
        recall=recall,
        f1=f1,
    )


def _decisions_at(outcomes: Iterable[RoutingOutcome], agent_id: str):
    for o in outcomes:
        for a, dec in zip(o.path, o.per_hop_decisions):
            if a == agent_id:
                yield o.query_id, dec.answered


def self_awareness_classification(
    outcomes: Sequence[RoutingOutcome], traces: TraceSet, agent_id: str
) -> ClassificationMetrics:
    """Score one agent's answer/reject decisions against its greedy correctness."""
    pairs = list(_decisions_at(outcomes, agent_id))
    return classification_metrics(
        [d for _, d in pairs],
        [traces.get(q, agent_id).greedy_correct for q, _ in pairs],
    )


def answered_rejected_accuracy(
    outcomes: Sequence[RoutingOutcome], traces: TraceSet, agent_id: str
) -> dict[str, float | None]:
    """Greedy accuracy of an agent on the queries it answered vs. rejected."""
    buckets: dict[bool, list[bool]] = {True: [], False: []}
    for q, answered in _decisions_at(outcomes, agent_id):
        buckets[answered].append(traces.get(q, agent_id).greedy_correct)
    return {
        "answered": float(np.mean(buckets[True])) if buckets[True] else None,
        "rejected": float(np.mean(buckets[False])) if buckets[False] else None,
    }


def delta_performance(before: TraceSet, after: TraceSet) -> float:
    """Newly solved queries relative to the originally solved ones.

    A query counts as newly solved when ``after`` answers it correctly and
    ``before`` never did: greedy wrong and every sample wrong.
    """
    keys_before = {t.key for t in before}
    keys_after = {t.key for t in after}
    if keys_before != keys_after:
        raise ValueError("before and after must cover the same (query, agent) pairs")
    solved_before = sum(t.greedy_correct for t in before)
    if solved_before == 0:
        raise ValueError("zero denominator: no query answered correctly before")
    newly = 0
    for t in before:
        unanswerable = t.n_correct == 0 and not t.greedy_correct
        if unanswerable and after.get(*t.key).greedy_correct:
            newly += 1
    return newly / solved_before


def oracle_ratio(report: EvalReport, oracle: EvalReport) -> float | None:
    """System utility as a fraction of the oracle topline."""
    if oracle.utility == 0:
        return None
    return report.utility / oracle.utility


TABLE2_SCENARIOS = ("performance_first", "balance", "cost_first")


def table2(
    queries: Sequence[Query],
    pool: Pool,
    traces: TraceSet,
    policies: Mapping[str, PolicyConfig],
    config: EngineConfig = EngineConfig(),
    external: ExternalSpec | None = None,
    gamma: float = 0.5,
) -> dict[str, dict[str, EvalReport]]:
    """Method x scenario grid of reports."""
    grid: dict[str, dict[str, EvalReport]] = {}
    methods = [
        ("Oracle", BaselineSpec("oracle")),
        ("Smallest LLM", BaselineSpec("smallest")),
        ("Largest LLM", BaselineSpec("largest")),
        ("Random", BaselineSpec("random", random_seed=config.seed)),
        ("External threshold", BaselineSpec("external_threshold", config.seed, external or ExternalSpec(1.0))),
    ]
    for name in TABLE2_SCENARIOS:
        sc = Scenario.named(name, gamma)
        for label, spec in methods:
            outs = run_baseline(spec, queries, pool, traces, sc, config)
            grid.setdefault(label, {})[name] = aggregate(outs, sc, pool.ids)
        outs = run_batch(queries, pool, policies, sc, traces, config).outcomes
        grid.setdefault("Self-routing cascade", {})[name] = aggregate(outs, sc, pool.ids)
    return grid


def format_table2(grid: Mapping[str, Mapping[str, EvalReport]]) -> str:
    alphas = {"performance_first": 0.2, "balance": 0.5, "cost_first": 0.8}
    head = "| Method | " + " | ".join(
        f"{s} (a={alphas[s]}) Acc | Cost | Utility" for s in TABLE2_SCENARIOS
    ) + " |"
    sep = "|---|" + "---|---|---|" * len(TABLE2_SCENARIOS)
    lines = [head, sep]
    for method, row in grid.items():
        cells = []
        for s in TABLE2_SCENARIOS:
            r = row[s]
            cells += [f"{r.performance:.2f}", f"{r.mean_cost:.2f}", f"{r.utility:.2f}"]
        lines.append(f"| {method} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
