"""Run configuration: one YAML (or JSON) tree with pool/scenario/engine sections."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .agents.live import DEFAULT_REJECT_PREFIX, LiveAgentSpec
from .agents.synthetic import (
    REFERENCE_COSTS,
    DifficultyDistribution,
    SyntheticPoolSpec,
    calibrate_skills,
)
from .core import AgentSpec, Pool, Query, Scenario, validate_pool
from .engine import EngineConfig
from .evaluation import ExternalSpec
from .policy import PolicyConfig, Smoothing


class ConfigError(ValueError):
    """Bad or missing configuration; the message names the offending key."""


@dataclass
class RunConfig:
    raw: dict
    pool: Pool | None
    scenario: Scenario
    engine: EngineConfig
    default_policy: PolicyConfig
    policy_overrides: dict[str, PolicyConfig]
    synthetic: SyntheticPoolSpec | None
    external: ExternalSpec
    easy_cutoff_rank: int | None = None
    classification_agent: str | None = None
    queries: list[Query] | None = None

    def policies(self, agent_ids) -> dict[str, PolicyConfig]:
        return {a: self.policy_overrides.get(a, self.default_policy) for a in agent_ids}

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()


def _section(tree: Mapping, key: str, default=None) -> Any:
    val = tree.get(key, default)
    if val is None:
        return default
    return val


def _mapping(val, key: str) -> Mapping:
    if not isinstance(val, Mapping):
        raise ConfigError(f"{key}: expected a mapping, got {type(val).__name__}")
    return val


def _get(tree: Mapping, key: str, path: str, cast, default=...):
    if key not in tree or tree[key] is None:
        if default is ...:
            raise ConfigError(f"{path}.{key}: required")
        return default
    try:
        return cast(tree[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.{key}: {exc}") from None


def parse_policy(tree: Mapping, path: str) -> PolicyConfig:
    tree = _mapping(tree, path)
    sm = _mapping(tree.get("smoothing") or {}, f"{path}.smoothing")
    try:
        return PolicyConfig(
            kind=_get(tree, "kind", path, str, "calibrated"),
            noise_sigma=_get(tree, "noise_sigma", path, float, 0.0),
            fixed_threshold=_get(tree, "fixed_threshold", path, float, 0.5),
            capability_source=_get(tree, "capability_source", path, str, "frequency"),
            smoothing=Smoothing(
                k_plus=_get(sm, "k_plus", f"{path}.smoothing", int, 0),
                n_plus=_get(sm, "n_plus", f"{path}.smoothing", int, 0),
            ),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def _parse_backend(val, path: str):
    if val is None or val == "trace":
        return "trace"
    if isinstance(val, Mapping) and val.get("kind") == "live":
        return LiveAgentSpec(
            endpoint_url=_get(val, "endpoint_url", path, str),
            model_name=_get(val, "model_name", path, str),
            timeout_ms=_get(val, "timeout_ms", path, int, 30_000),
            reject_prefix=_get(val, "reject_prefix", path, str, DEFAULT_REJECT_PREFIX),
            max_in_flight=_get(val, "max_in_flight", path, int, 4),
        )
    raise ConfigError(f"{path}: backend must be 'trace' or a mapping with kind: live")


def parse_pool(items, entry_rank: int) -> Pool:
    if not isinstance(items, list) or not items:
        raise ConfigError("pool: expected a non-empty list of agents")
    agents = []
    for i, item in enumerate(items):
        path = f"pool[{i}]"
        item = _mapping(item, path)
        agents.append(
            AgentSpec(
                id=_get(item, "id", path, str),
                cost=_get(item, "cost", path, float),
                rank=i + 1,
                backend=_parse_backend(item.get("backend"), f"{path}.backend"),
            )
        )
    pool = Pool(agents=tuple(agents), entry_rank=entry_rank)
    problems = validate_pool(pool)
    if problems:
        raise ConfigError("pool: " + "; ".join(problems))
    return pool


def parse_scenario(tree: Mapping) -> Scenario:
    tree = _mapping(tree, "scenario")
    gamma = _get(tree, "gamma", "scenario", float, 0.5)
    try:
        if "name" in tree and tree["name"] not in (None, "custom"):
            return Scenario.named(str(tree["name"]), gamma)
        alpha = _get(tree, "alpha", "scenario", float)
        sc = Scenario.from_alpha(alpha, gamma)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"scenario: {exc}") from None
    if tree.get("instruction"):
        sc = Scenario(sc.name, sc.alpha, sc.gamma, str(tree["instruction"]))
    return sc


def parse_synthetic(tree: Mapping, pool: Pool | None) -> SyntheticPoolSpec:
    path = "synthetic"
    tree = _mapping(tree, path)
    diff = _mapping(tree.get("difficulty") or {}, f"{path}.difficulty")
    try:
        dist = DifficultyDistribution(
            kind=_get(diff, "kind", f"{path}.difficulty", str, "normal"),
            params=dict(diff.get("params") or {"mean": 0.0, "std": 1.0}),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}.difficulty: {exc}") from None
    n_queries = _get(tree, "n_queries", path, int, 1000)
    if n_queries <= 0:
        raise ConfigError(f"{path}.n_queries: empty dataset")
    targets = tree.get("targets")
    skills = tree.get("skills")
    k = len(targets) if targets else len(skills) if skills else len(REFERENCE_COSTS)
    costs = tuple(pool.costs) if pool is not None else REFERENCE_COSTS[:k]
    ids = tuple(pool.ids) if pool is not None else None
    if len(costs) != k:
        raise ConfigError(f"{path}: {k} agents configured but pool has {len(costs)}")
    spec = SyntheticPoolSpec(
        skills=tuple(float(s) for s in skills) if skills else tuple(range(k)),
        discrimination=_get(tree, "discrimination", path, float, 8.0),
        difficulty_distribution=dist,
        n_queries=n_queries,
        n_samples=_get(tree, "n_samples", path, int, 10),
        nested=_get(tree, "nested", path, bool, True),
        seed=_get(tree, "seed", path, int, 0),
        costs=costs,
        agent_ids=ids,
    )
    try:
        if not skills:
            spec = calibrate_skills(targets or (0.3801, 0.5895, 0.7308, 0.8090, 0.8545), spec)
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return spec


def load_queries(path: str | Path) -> list[Query]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(Query(id=str(rec["id"]), payload=rec.get("payload"), tags=rec.get("tags") or {}))
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"queries line {line_no}: {exc}") from None
    return out


def parse_config(tree: Mapping, base_dir: Path | None = None) -> RunConfig:
    tree = dict(_mapping(tree, "config"))
    eng = _mapping(tree.get("engine") or {}, "engine")
    entry_rank = _get(eng, "entry_rank", "engine", int, 1)
    pool = parse_pool(tree["pool"], entry_rank) if tree.get("pool") else None
    try:
        engine = EngineConfig(
            overhead_mode=_get(eng, "overhead_mode", "engine", str, "none"),
            overhead_fraction=_get(eng, "overhead_fraction", "engine", float, 0.05),
            seed=_get(eng, "seed", "engine", int, 0),
            entry_rank=None,
            max_in_flight=_get(eng, "max_in_flight", "engine", int, 8),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"engine: {exc}") from None

    pol_tree = _mapping(tree.get("policy") or {}, "policy")
    default_policy = parse_policy({k: v for k, v in pol_tree.items() if k != "overrides"}, "policy")
    overrides = {
        str(a): parse_policy(p, f"policy.overrides.{a}")
        for a, p in _mapping(pol_tree.get("overrides") or {}, "policy.overrides").items()
    }

    synthetic = parse_synthetic(tree["synthetic"], pool) if tree.get("synthetic") else None

    base = _mapping(tree.get("baseline") or {}, "baseline")
    ext = _mapping(base.get("external") or {}, "baseline.external")
    external = ExternalSpec(
        score_noise_sigma=_get(ext, "score_noise_sigma", "baseline.external", float, 1.0),
        threshold=_get(ext, "threshold", "baseline.external", float, None),
    )

    analysis = _mapping(tree.get("analysis") or {}, "analysis")
    queries = None
    if tree.get("queries"):
        qpath = Path(tree["queries"])
        if base_dir is not None and not qpath.is_absolute():
            qpath = base_dir / qpath
        queries = load_queries(qpath)

    return RunConfig(
        raw=tree,
        pool=pool,
        scenario=parse_scenario(tree.get("scenario") or {"name": "balance"}),
        engine=engine,
        default_policy=default_policy,
        policy_overrides=overrides,
        synthetic=synthetic,
        external=external,
        easy_cutoff_rank=_get(analysis, "easy_cutoff_rank", "analysis", int, None),
        classification_agent=_get(analysis, "classification_agent", "analysis", str, None),
        queries=queries,
    )


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read a config file, apply dotted-key overrides, then parse it."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        tree = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path}: {exc}") from None
    if not isinstance(tree, dict):
        raise ConfigError(f"config {path}: top level must be a mapping")
    for dotted, value in (overrides or {}).items():
        node = tree
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return parse_config(tree, base_dir=path.parent)
