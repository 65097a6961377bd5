"""Synthetic agent pools from a shared-slope logistic capability model.

Each agent i has a skill s_i and each query x a difficulty d_x; the
probability that agent i solves x is sigmoid(a * (s_i - d_x)).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import expit

from ..core import CapabilityTrace, Pool, Query, TraceSet

REFERENCE_COSTS = (0.1, 0.2, 0.4, 0.7, 0.9)
REFERENCE_ACCURACIES = (0.3801, 0.5895, 0.7308, 0.8090, 0.8545)

QUADRATURE_NODES = 1024
CALIBRATION_TOL = 0.005


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class DifficultyDistribution:
    kind: str = "normal"
    params: Mapping[str, float] = field(default_factory=lambda: {"mean": 0.0, "std": 1.0})

    def __post_init__(self):
        if self.kind not in ("normal", "uniform"):
            raise ValueError(f"unknown difficulty distribution {self.kind!r}")

    def _frozen(self):
        p = dict(self.params)
        if self.kind == "normal":
            return stats.norm(loc=p.get("mean", 0.0), scale=p.get("std", 1.0))
        low, high = p.get("low", -2.0), p.get("high", 2.0)
        return stats.uniform(loc=low, scale=high - low)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = dict(self.params)
        if self.kind == "normal":
            return rng.normal(p.get("mean", 0.0), p.get("std", 1.0), size=n)
        return rng.uniform(p.get("low", -2.0), p.get("high", 2.0), size=n)

    def quantile_nodes(self, n: int = QUADRATURE_NODES) -> np.ndarray:
        # equal-weight midpoint rule in probability space
        return self._frozen().ppf((np.arange(n) + 0.5) / n)


@dataclass(frozen=True)
class SyntheticPoolSpec:
    skills: tuple[float, ...]
    discrimination: float = 8.0
    difficulty_distribution: DifficultyDistribution = field(default_factory=DifficultyDistribution)
    n_queries: int = 1000
    n_samples: int = 10
    nested: bool = True
    seed: int = 0
    costs: tuple[float, ...] = REFERENCE_COSTS
    agent_ids: tuple[str, ...] | None = None

    def validate(self) -> None:
        if len(self.skills) == 0:
            raise ValueError("at least one skill is required")
        if any(b <= a for a, b in zip(self.skills, self.skills[1:])):
            raise ValueError(f"skills must be strictly increasing, got {list(self.skills)}")
        if self.discrimination <= 0:
            raise ValueError("discrimination must be > 0")
        if self.n_queries < 0 or self.n_samples < 1:
            raise ValueError("n_queries must be >= 0 and n_samples >= 1")
        if len(self.costs) != len(self.skills):
            raise ValueError(
                f"{len(self.skills)} skills but {len(self.costs)} costs"
            )
        if self.agent_ids is not None and len(self.agent_ids) != len(self.skills):
            raise ValueError("agent_ids and skills differ in length")

    @property
    def ids(self) -> tuple[str, ...]:
        if self.agent_ids is not None:
            return self.agent_ids
        return tuple(f"a{i + 1}" for i in range(len(self.skills)))


@dataclass
class SyntheticPool:
    pool: Pool
    traces: TraceSet
    queries: list[Query]
    difficulties: np.ndarray
    capabilities: np.ndarray  # (n_queries, K) true success probabilities
    greedy_accuracy: dict[str, float]


def capability_matrix(skills: Sequence[float], difficulties: np.ndarray, discrimination: float) -> np.ndarray:
    s = np.asarray(skills, dtype=float)[None, :]
    d = np.asarray(difficulties, dtype=float)[:, None]
    return expit(discrimination * (s - d))


def expected_accuracy(skill: float, discrimination: float, dist: DifficultyDistribution) -> float:
    """Mean success probability over the difficulty distribution."""
    nodes = dist.quantile_nodes()
    return float(np.mean(expit(discrimination * (skill - nodes))))


def generate_synthetic(spec: SyntheticPoolSpec) -> SyntheticPool:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, k = spec.n_queries, len(spec.skills)
    difficulties = spec.difficulty_distribution.sample(rng, n)
    probs = capability_matrix(spec.skills, difficulties, spec.discrimination)

    if spec.nested:
        # common random numbers across agents keep correctness nested in rank
        u = rng.random((n, spec.n_samples))[:, None, :]
    else:
        u = rng.random((n, k, spec.n_samples))
    samples = u < probs[:, :, None]
    greedy = probs > 0.5

    ids = spec.ids
    width = max(4, len(str(max(n - 1, 0))))
    qids = [f"q{j:0{width}d}" for j in range(n)]
    traces = TraceSet(
        CapabilityTrace(
            query_id=qids[j],
            agent_id=ids[i],
            samples=tuple(bool(b) for b in samples[j, i]),
            greedy_correct=bool(greedy[j, i]),
        )
        for j in range(n)
        for i in range(k)
    )
    queries = [Query(id=q, tags={"difficulty": float(d)}) for q, d in zip(qids, difficulties)]
    acc = greedy.mean(axis=0) if n else np.zeros(k)
    return SyntheticPool(
        pool=Pool.from_costs(spec.costs, ids),
        traces=traces,
        queries=queries,
        difficulties=difficulties,
        capabilities=probs,
        greedy_accuracy={a: float(v) for a, v in zip(ids, acc)},
    )


def _solve_skill(target: float, discrimination: float, dist: DifficultyDistribution) -> float:
    nodes = dist.quantile_nodes()
    spread = float(nodes[-1] - nodes[0]) + 1.0
    lo, hi = float(nodes[0]) - 50.0 * spread / discrimination, float(nodes[-1]) + 50.0 * spread / discrimination

    def f(s):
        return float(np.mean(expit(discrimination * (s - nodes))))

    f_lo, f_hi = f(lo), f(hi)
    if not f_lo < target < f_hi:
        raise CalibrationError(
            f"target accuracy {target} unreachable; achievable range is "
            f"({f_lo:.6g}, {f_hi:.6g})"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def calibrate_skills(
    target_accuracies: Sequence[float],
    template: SyntheticPoolSpec | None = None,
) -> SyntheticPoolSpec:
    """Bisect each agent's skill so its mean success probability hits the target."""
    targets = [float(t) for t in target_accuracies]
    if any(not 0.0 < t < 1.0 for t in targets):
        raise CalibrationError(f"targets must lie in (0, 1), got {targets}")
    if any(b <= a for a, b in zip(targets, targets[1:])):
        raise CalibrationError(f"targets must be strictly increasing, got {targets}")
    if template is None:
        costs = REFERENCE_COSTS if len(targets) == len(REFERENCE_COSTS) else tuple(
            (i + 1) / len(targets) for i in range(len(targets))
        )
        template = SyntheticPoolSpec(skills=tuple(range(len(targets))), costs=costs)
    dist = template.difficulty_distribution
    skills = tuple(_solve_skill(t, template.discrimination, dist) for t in targets)
    for s, t in zip(skills, targets):
        achieved = expected_accuracy(s, template.discrimination, dist)
        if abs(achieved - t) > CALIBRATION_TOL:
            raise CalibrationError(f"target {t} missed: achieved {achieved}")
    return replace(template, skills=skills)
