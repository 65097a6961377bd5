"""Domain types, trace file I/O and pool validation.

Everything in here is immutable once built and is shared by the engine,
the policies, the backends and the evaluation code.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import IO, Iterable, Iterator, Mapping, Sequence, Union

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1

# alpha values pinned by the three named scenarios
SCENARIO_ALPHAS = {
    "performance_first": 0.2,
    "balance": 0.5,
    "cost_first": 0.8,
}

# prepended to the query text when talking to a live agent
SCENARIO_INSTRUCTIONS = {
    "performance_first": (
        "Scenario: Performance First. You must ensure your answer is correct. "
        "Only choose to answer if you are completely certain of your ability to "
        "answer the question; otherwise, choose not to answer."
    ),
    "balance": (
        "Scenario: Balance. You need to strike a balance between answering and "
        "not answering. You can choose to answer questions you are confident in "
        "and choose not to answer those you are uncertain about."
    ),
    "cost_first": (
        "Scenario: Cost First. You need to answer questions as much as possible. "
        "Choose to answer as long as you believe you have the ability to answer "
        "correctly; only choose not to answer if you feel there is absolutely no "
        "possibility of giving a correct answer."
    ),
}

DEFAULT_GAMMA = 0.5


class TraceFormatError(ValueError):
    """A trace stream could not be parsed."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MissingTraceError(KeyError):
    """A (query, agent) pair needed by a run has no recorded trace."""

    def __init__(self, query_id: str, agent_id: str):
        super().__init__(f"no trace for query {query_id!r} on agent {agent_id!r}")
        self.query_id = query_id
        self.agent_id = agent_id

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class AgentSpec:
    id: str
    cost: float
    rank: int
    # "trace" for recorded/synthetic traces, or an agents.LiveAgentSpec
    backend: object = "trace"

    @property
    def is_live(self) -> bool:
        return self.backend != "trace"


@dataclass(frozen=True)
class Pool:
    agents: tuple[AgentSpec, ...]
    entry_rank: int = 1

    @classmethod
    def from_costs(
        cls,
        costs: Sequence[float],
        ids: Sequence[str] | None = None,
        entry_rank: int = 1,
    ) -> "Pool":
        """Build a pool ranked in the given order; ids default to a1..aK."""
        if ids is None:
            ids = [f"a{i + 1}" for i in range(len(costs))]
        if len(ids) != len(costs):
            raise ValueError("ids and costs differ in length")
        agents = tuple(
            AgentSpec(id=str(i), cost=float(c), rank=r + 1)
            for r, (i, c) in enumerate(zip(ids, costs))
        )
        return cls(agents=agents, entry_rank=entry_rank)

    @property
    def size(self) -> int:
        return len(self.agents)

    @property
    def fallback(self) -> AgentSpec:
        return self.agents[-1]

    @property
    def ids(self) -> list[str]:
        return [a.id for a in self.agents]

    @property
    def costs(self) -> list[float]:
        return [a.cost for a in self.agents]

    def by_rank(self, rank: int) -> AgentSpec:
        return self.agents[rank - 1]

    def by_id(self, agent_id: str) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)


@dataclass(frozen=True)
class Scenario:
    name: str = "balance"
    alpha: float = 0.5
    gamma: float = DEFAULT_GAMMA
    instruction: str | None = None

    @classmethod
    def named(cls, name: str, gamma: float = DEFAULT_GAMMA) -> "Scenario":
        if name not in SCENARIO_ALPHAS:
            raise ValueError(
                f"unknown scenario {name!r}; expected one of {sorted(SCENARIO_ALPHAS)}"
            )
        return cls(
            name=name,
            alpha=SCENARIO_ALPHAS[name],
            gamma=gamma,
            instruction=SCENARIO_INSTRUCTIONS[name],
        )

    @classmethod
    def from_alpha(cls, alpha: float, gamma: float = DEFAULT_GAMMA) -> "Scenario":
        """Named scenario when alpha matches one, otherwise ``custom``."""
        for name, a in SCENARIO_ALPHAS.items():
            if a == alpha:
                return cls.named(name, gamma)
        return cls(name="custom", alpha=float(alpha), gamma=gamma)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.name in SCENARIO_ALPHAS:
            if self.alpha != SCENARIO_ALPHAS[self.name]:
                raise ValueError(
                    f"scenario {self.name!r} pins alpha={SCENARIO_ALPHAS[self.name]}"
                )
        elif self.name != "custom":
            raise ValueError(f"unknown scenario name {self.name!r}")

    @property
    def instruction_text(self) -> str:
        if self.instruction is not None:
            return self.instruction
        return SCENARIO_INSTRUCTIONS.get(self.name, "")


def validate_scenario(scenario: Scenario) -> list[str]:
    """Warnings for legal but degenerate scenarios."""
    warnings = []
    if scenario.alpha == 0.0:
        warnings.append(
            "alpha=0 gives a reject threshold of 1: no agent except the "
            "fallback can ever answer"
        )
    return warnings


@dataclass(frozen=True)
class Query:
    id: str
    payload: str | None = None
    tags: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class CapabilityTrace:
    query_id: str
    agent_id: str
    samples: tuple[bool, ...]
    greedy_correct: bool

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError(
                f"trace ({self.query_id}, {self.agent_id}) has no samples"
            )

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def n_correct(self) -> int:
        return sum(self.samples)

    @property
    def frequency(self) -> Fraction:
        return Fraction(self.n_correct, self.n_samples)

    @property
    def key(self) -> tuple[str, str]:
        return (self.query_id, self.agent_id)

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "agent_id": self.agent_id,
            "samples": [int(s) for s in self.samples],
            "greedy": int(self.greedy_correct),
        }


class TraceSet:
    """Traces keyed by (query_id, agent_id), kept in insertion order."""

    def __init__(self, traces: Iterable[CapabilityTrace] = ()):
        self._by_key: dict[tuple[str, str], CapabilityTrace] = {}
        for t in traces:
            if t.key in self._by_key:
                raise ValueError(
                    f"duplicate trace for query {t.query_id!r}, agent {t.agent_id!r}"
                )
            self._by_key[t.key] = t

    def __len__(self) -> int:
        return len(self._by_key)

    def __iter__(self) -> Iterator[CapabilityTrace]:
        return iter(self._by_key.values())

    def __contains__(self, key) -> bool:
        return key in self._by_key

    def __eq__(self, other) -> bool:
        if not isinstance(other, TraceSet):
            return NotImplemented
        return self._by_key == other._by_key

    def __repr__(self) -> str:
        return f"TraceSet({len(self)} traces)"

    def get(self, query_id: str, agent_id: str) -> CapabilityTrace:
        try:
            return self._by_key[(query_id, agent_id)]
        except KeyError:
            raise MissingTraceError(query_id, agent_id) from None

    def query_ids(self) -> list[str]:
        return list(dict.fromkeys(q for q, _ in self._by_key))

    def agent_ids(self) -> list[str]:
        return list(dict.fromkeys(a for _, a in self._by_key))

    def for_agent(self, agent_id: str) -> list[CapabilityTrace]:
        return [t for t in self if t.agent_id == agent_id]

    def queries(self) -> list[Query]:
        return [Query(id=q) for q in self.query_ids()]


def _parse_trace_line(line: str, line_no: int) -> CapabilityTrace:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(line_no, f"invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise TraceFormatError(line_no, "record is not an object")
    for key in ("query_id", "agent_id", "samples", "greedy"):
        if key not in rec:
            raise TraceFormatError(line_no, f"missing field {key!r}")
    qid, aid = rec["query_id"], rec["agent_id"]
    if not isinstance(qid, str) or not isinstance(aid, str):
        raise TraceFormatError(line_no, "query_id and agent_id must be strings")
    samples = rec["samples"]
    if not isinstance(samples, list):
        raise TraceFormatError(line_no, "samples must be a list")
    if len(samples) == 0:
        raise TraceFormatError(line_no, "n_samples = 0")
    if any(s not in (0, 1) or isinstance(s, float) for s in samples):
        raise TraceFormatError(line_no, "samples must be 0 or 1")
    greedy = rec["greedy"]
    if greedy not in (0, 1) or isinstance(greedy, float):
        raise TraceFormatError(line_no, "greedy must be 0 or 1")
    return CapabilityTrace(
        query_id=qid,
        agent_id=aid,
        samples=tuple(bool(s) for s in samples),
        greedy_correct=bool(greedy),
    )


def load_trace_set(source: Union[IO[bytes], IO[str], bytes, str]) -> TraceSet:
    """Parse a line-delimited trace stream (schema v1).

    Blank lines are skipped. Raises TraceFormatError with the offending
    1-based line number on the first bad or duplicate record.
    """
    if isinstance(source, (bytes, str)):
        source = io.BytesIO(source.encode() if isinstance(source, str) else source)
    seen: dict[tuple[str, str], CapabilityTrace] = {}
    for line_no, raw in enumerate(source, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        trace = _parse_trace_line(line, line_no)
        if trace.key in seen:
            raise TraceFormatError(
                line_no,
                f"duplicate trace for query {trace.query_id!r}, agent {trace.agent_id!r}",
            )
        seen[trace.key] = trace
    return TraceSet(seen.values())


def load_trace_file(path) -> TraceSet:
    with open(path, "rb") as fh:
        return load_trace_set(fh)


def serialize_trace_set(traces: Iterable[CapabilityTrace]) -> str:
    """Canonical text form: one compact record per line, fixed key order."""
    lines = [
        json.dumps(t.to_record(), separators=(",", ":"), ensure_ascii=False)
        for t in traces
    ]
    return "".join(line + "\n" for line in lines)


def validate_pool(pool: Pool) -> list[str]:
    """Return every broken pool invariant; an empty list means valid."""
    violations = []
    if not pool.agents:
        return ["pool is empty"]
    seen_ids = set()
    for pos, agent in enumerate(pool.agents, start=1):
        if agent.id in seen_ids:
            violations.append(f"agent {agent.id}: duplicate id")
        seen_ids.add(agent.id)
        if not 0.0 <= agent.cost <= 1.0:
            violations.append(f"agent {agent.id}: cost {agent.cost} outside [0, 1]")
        if agent.rank != pos:
            violations.append(
                f"agent {agent.id}: rank {agent.rank} at position {pos} "
                "(ranks must be 1..K in order)"
            )
    for prev, cur in zip(pool.agents, pool.agents[1:]):
        if not cur.cost > prev.cost:
            violations.append(
                f"agent {cur.id}: cost {cur.cost} not strictly above "
                f"{prev.id} ({prev.cost}); non-strict ordering"
            )
    if not 1 <= pool.entry_rank <= pool.size:
        violations.append(
            f"entry_rank {pool.entry_rank} outside [1, {pool.size}]"
        )
    return violations


def rerank(agents: Sequence[AgentSpec], entry_rank: int = 1) -> Pool:
    """Re-number ranks 1..K preserving the given order."""
    return Pool(
        agents=tuple(replace(a, rank=i + 1) for i, a in enumerate(agents)),
        entry_rank=entry_rank,
    )


@dataclass(frozen=True)
class RoutingDecision:
    kind: str  # "answer" | "reject"
    estimated_capability: float
    threshold: float

    @property
    def answered(self) -> bool:
        return self.kind == "answer"


@dataclass(frozen=True)
class RoutingOutcome:
    query_id: str
    path: tuple[str, ...]
    final_agent: str
    # None when the answering backend is live and correctness is not scored
    correct: bool | None
    inference_cost: float
    overhead_cost: float
    total_cost: float
    reward: float | None
    per_hop_decisions: tuple[RoutingDecision, ...]

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "path": list(self.path),
            "final_agent": self.final_agent,
            "correct": self.correct,
            "inference_cost": self.inference_cost,
            "overhead_cost": self.overhead_cost,
            "total_cost": self.total_cost,
            "reward": self.reward,
            "per_hop_decisions": [
                {
                    "kind": d.kind,
                    "estimated_capability": d.estimated_capability,
                    "threshold": d.threshold,
                }
                for d in self.per_hop_decisions
            ],
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "RoutingOutcome":
        return cls(
            query_id=rec["query_id"],
            path=tuple(rec["path"]),
            final_agent=rec["final_agent"],
            correct=rec["correct"],
            inference_cost=rec["inference_cost"],
            overhead_cost=rec["overhead_cost"],
            total_cost=rec["total_cost"],
            reward=rec["reward"],
            per_hop_decisions=tuple(
                RoutingDecision(**d) for d in rec["per_hop_decisions"]
            ),
        )


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EasyHardCosts:
    easy_mean_cost: float | None
    hard_mean_cost: float | None


@dataclass(frozen=True)
class EvalReport:
    performance: float
    mean_cost: float
    utility: float
    per_agent_answer_rate: Mapping[str, float]
    routing_distribution: Mapping[str, float]
    n_queries: int = 0
    alpha: float = 0.5
    classification: ClassificationMetrics | None = None
    easy_hard_costs: EasyHardCosts | None = None
    delta_performance: float | None = None

    def to_dict(self) -> dict:
        from dataclasses import asdict

        d = asdict(self)
        d["per_agent_answer_rate"] = dict(self.per_agent_answer_rate)
        d["routing_distribution"] = dict(self.routing_distribution)
        return d
