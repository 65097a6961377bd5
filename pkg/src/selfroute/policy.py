"""Self-assessment decision rule, scenario-conditioned reward and SFT labels."""

from __future__ import annotations

import hashlib
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .core import CapabilityTrace, RoutingDecision, Scenario

logger = logging.getLogger(__name__)

POLICY_KINDS = ("calibrated", "noisy", "fixed_threshold", "always_answer")
CAPABILITY_SOURCES = ("frequency", "greedy", "bernoulli_sample")

# logit clamp for estimates of exactly 0 or 1
_LOGIT_EPS = 1e-6


@dataclass(frozen=True)
class Smoothing:
    k_plus: int = 0
    n_plus: int = 0

    def __post_init__(self):
        if self.k_plus < 0 or self.n_plus < 0:
            raise ValueError("smoothing counts must be non-negative")


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "calibrated"
    noise_sigma: float = 0.0
    fixed_threshold: float = 0.5
    capability_source: str = "frequency"
    smoothing: Smoothing = field(default_factory=Smoothing)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.capability_source not in CAPABILITY_SOURCES:
            raise ValueError(f"unknown capability source {self.capability_source!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.fixed_threshold <= 1.0:
            raise ValueError("fixed_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class RewardParams:
    alpha: float
    gamma: float = 0.5

    @classmethod
    def of(cls, scenario: Scenario) -> "RewardParams":
        return cls(alpha=scenario.alpha, gamma=scenario.gamma)


def _params(p) -> RewardParams:
    return RewardParams.of(p) if isinstance(p, Scenario) else p


def reject_threshold(params: RewardParams | Scenario) -> float:
    """Capability an agent must exceed before answering beats rejecting."""
    params = _params(params)
    return (1.0 - params.alpha) ** params.gamma


def reward(kind: str, params: RewardParams | Scenario) -> float:
    if kind == "correct":
        return 1.0
    if kind == "incorrect":
        return 0.0
    if kind == "reject":
        return reject_threshold(params)
    raise ValueError(f"unknown outcome kind {kind!r}")


def expected_rewards(p: float, params: RewardParams | Scenario) -> dict[str, float]:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    # answering pays 1 w.p. p and 0 otherwise
    return {"answer": p * 1.0 + (1.0 - p) * 0.0, "reject": reject_threshold(params)}


def decide(p_hat: float, scenario: Scenario | RewardParams, is_fallback: bool = False) -> RoutingDecision:
    """Answer iff the estimate strictly exceeds the reject threshold.

    The fallback agent always answers.
    """
    t = reject_threshold(scenario)
    if is_fallback or p_hat > t:
        return RoutingDecision("answer", float(p_hat), t)
    return RoutingDecision("reject", float(p_hat), t)


def stable_seed(*parts) -> int:
    """Hash arbitrary parts into a 64-bit seed that is stable across runs."""
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def _logit(p: float) -> float:
    p = min(max(p, _LOGIT_EPS), 1.0 - _LOGIT_EPS)
    return math.log(p / (1.0 - p))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def base_capability(trace: CapabilityTrace, config: PolicyConfig) -> float:
    """Noise-free estimate from the trace, per the configured source."""
    if config.capability_source == "greedy":
        return 1.0 if trace.greedy_correct else 0.0
    sm = config.smoothing
    est = Fraction(trace.n_correct + sm.k_plus, trace.n_samples + sm.n_plus)
    return float(min(max(est, Fraction(0)), Fraction(1)))


def estimate_capability(trace: CapabilityTrace, config: PolicyConfig, rng_seed: int) -> float:
    """Capability estimate p_hat in [0, 1] for one (query, agent) pair.

    ``frequency`` and ``bernoulli_sample`` use the smoothed empirical
    frequency, ``greedy`` the greedy bit. The ``noisy`` kind perturbs the
    estimate in logit space with N(0, noise_sigma) drawn from ``rng_seed``.
    """
    if trace.n_samples == 0:
        raise ValueError("trace has no samples")
    est = base_capability(trace, config)
    if config.kind == "noisy" and config.noise_sigma > 0:
        z = np.random.default_rng([rng_seed, 0]).standard_normal()
        est = _sigmoid(_logit(est) + config.noise_sigma * z)
    return est


def realized_correct(trace: CapabilityTrace, config: PolicyConfig, rng_seed: int) -> bool:
    """Correctness of the agent's answer, per its capability source.

    ``bernoulli_sample`` draws once from Bernoulli(frequency) on a stream
    separate from the noise stream; the same seed always gives the same bit.
    """
    if config.capability_source == "bernoulli_sample":
        u = np.random.default_rng([rng_seed, 1]).random()
        return bool(u < float(trace.frequency))
    return trace.greedy_correct


def policy_decision(
    p_hat: float,
    config: PolicyConfig,
    scenario: Scenario,
    is_fallback: bool,
) -> RoutingDecision:
    if config.kind == "always_answer":
        return RoutingDecision("answer", float(p_hat), 0.0)
    if config.kind == "fixed_threshold":
        t = config.fixed_threshold
        kind = "answer" if is_fallback or p_hat > t else "reject"
        return RoutingDecision(kind, float(p_hat), t)
    return decide(p_hat, scenario, is_fallback)


def exact_alpha(alpha: float | Fraction) -> Fraction:
    """Rational value of alpha as written (0.7 -> 7/10, not the nearest double)."""
    if isinstance(alpha, Fraction):
        return alpha
    return Fraction(repr(float(alpha)))


def sft_label(trace: CapabilityTrace, alpha: float | Fraction) -> str:
    """``reject`` iff the correct-answer frequency falls strictly below 1 - alpha."""
    delta = 1 - exact_alpha(alpha)
    # k/n < p/q  <=>  k*q < p*n
    k, n = trace.n_correct, trace.n_samples
    if k * delta.denominator < delta.numerator * n:
        return "reject"
    return "answer"


@dataclass(frozen=True)
class SftRecord:
    query_id: str
    agent_id: str
    scenario: str
    alpha: float
    label: str

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "agent_id": self.agent_id,
            "scenario": self.scenario,
            "alpha": self.alpha,
            "label": self.label,
        }


@dataclass
class SftDataset:
    records: list[SftRecord]
    # (agent_id, scenario name) -> {"answer": n, "reject": n} after balancing
    strata: dict[tuple[str, str], dict[str, int]]
    empty_strata: list[tuple[str, str]]


def build_sft_dataset(
    traces: Iterable[CapabilityTrace],
    scenarios: Sequence[Scenario],
    balance: bool = False,
    seed: int = 0,
) -> SftDataset:
    """One labelled record per (trace, scenario), optionally balanced.

    With ``balance`` each (agent, scenario) stratum is downsampled to
    ``m`` answers and ``m`` rejects, where ``m`` is the smallest per-class
    count over that agent's non-empty strata. Strata lacking either class
    are emitted empty and listed in ``empty_strata``.
    """
    traces = list(traces)
    raw: dict[tuple[str, str], dict[str, list[SftRecord]]] = defaultdict(
        lambda: {"answer": [], "reject": []}
    )
    ordered: list[SftRecord] = []
    for sc in scenarios:
        for t in traces:
            rec = SftRecord(t.query_id, t.agent_id, sc.name, sc.alpha, sft_label(t, sc.alpha))
            ordered.append(rec)
            raw[(t.agent_id, sc.name)][rec.label].append(rec)

    if not balance:
        strata = {k: {c: len(v) for c, v in d.items()} for k, d in raw.items()}
        return SftDataset(ordered, strata, [])

    empty = [k for k, d in raw.items() if not d["answer"] or not d["reject"]]
    for agent_id, sc_name in empty:
        logger.warning(
            "stratum (%s, %s) has no %s records; emitted empty",
            agent_id, sc_name,
            "answer" if not raw[(agent_id, sc_name)]["answer"] else "reject",
        )
    per_agent_m: dict[str, int] = {}
    for (agent_id, _), d in raw.items():
        if (agent_id, _) in empty:
            continue
        m = min(len(d["answer"]), len(d["reject"]))
        per_agent_m[agent_id] = min(per_agent_m.get(agent_id, m), m)

    keep: set[int] = set()
    strata: dict[tuple[str, str], dict[str, int]] = {}
    for key, d in raw.items():
        m = 0 if key in empty else per_agent_m[key[0]]
        for cls in ("answer", "reject"):
            pool = d[cls]
            rng = np.random.default_rng(stable_seed(seed, key[0], key[1], cls))
            chosen = rng.choice(len(pool), size=m, replace=False) if m else []
            keep.update(id(pool[i]) for i in chosen)
        strata[key] = {"answer": m, "reject": m}
    records = [r for r in ordered if id(r) in keep]
    return SftDataset(records, strata, empty)
