"""Command-line entry point: simulate, replay, sweep and label.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .agents.synthetic import generate_synthetic
from .config import ConfigError, RunConfig, load_config
from .core import (
    MissingTraceError,
    Pool,
    Query,
    Scenario,
    TraceFormatError,
    TraceSet,
    load_trace_file,
    serialize_trace_set,
    validate_scenario,
)
from .engine import HopError, apply_pool_edit, parse_overhead, run_batch
from .evaluation import (
    BaselineSpec,
    aggregate,
    answered_rejected_accuracy,
    easy_hard_split,
    format_table2,
    oracle_ratio,
    run_baseline,
    self_awareness_classification,
    table2,
)
from .policy import build_sft_dataset
from .reporting import (
    RunManifest,
    atomic_write_text,
    dumps_jsonl,
    report_rows,
    rows_to_csv,
    table_to_csv,
    write_json,
    write_outcomes,
)

logger = logging.getLogger("selfroute")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _overrides(args) -> dict:
    ov = {}
    if getattr(args, "seed", None) is not None:
        ov["engine.seed"] = args.seed
    if getattr(args, "overhead", None):
        try:
            mode, frac = parse_overhead(args.overhead)
        except ValueError as exc:
            raise ConfigError(f"--overhead: {exc}") from None
        ov["engine.overhead_mode"] = mode
        ov["engine.overhead_fraction"] = frac
    return ov


def _load(args, extra: dict | None = None) -> RunConfig:
    ov = _overrides(args)
    ov.update(extra or {})
    cfg = load_config(args.config, ov)
    if getattr(args, "seed", None) is not None and cfg.synthetic is not None:
        cfg.synthetic = replace(cfg.synthetic, seed=args.seed)
    alpha = getattr(args, "alpha", None)
    if alpha is not None or getattr(args, "gamma", None) is not None:
        gamma = args.gamma if args.gamma is not None else cfg.scenario.gamma
        try:
            cfg.scenario = Scenario.from_alpha(alpha if alpha is not None else cfg.scenario.alpha, gamma)
        except ValueError as exc:
            raise ConfigError(f"scenario: {exc}") from None
        cfg.raw["scenario"] = {"alpha": cfg.scenario.alpha, "gamma": cfg.scenario.gamma}
    if getattr(args, "pool_remove", None):
        cfg.raw["pool_remove"] = args.pool_remove
    if getattr(args, "alphas", None):
        cfg.raw["sweep_alphas"] = list(args.alphas)
    for w in validate_scenario(cfg.scenario):
        logger.warning("%s", w)
    return cfg


def _apply_removal(pool: Pool, args) -> Pool:
    if not getattr(args, "pool_remove", None):
        return pool
    ids = [x.strip() for x in args.pool_remove.split(",") if x.strip()]
    try:
        return apply_pool_edit(pool, ids)
    except ValueError as exc:
        raise ConfigError(f"--pool-remove: {exc}") from None


def _evaluate(cfg: RunConfig, queries: list[Query], pool: Pool, traces: TraceSet | None, scenario: Scenario):
    policies = cfg.policies(pool.ids)
    batch = run_batch(queries, pool, policies, scenario, traces, cfg.engine)
    if not batch.outcomes:
        raise RuntimeError("no query completed")
    report = aggregate(batch.outcomes, scenario, pool.ids)
    extra: dict = {"partial": batch.partial, "errors": [str(e) for e in batch.errors]}
    live = any(a.is_live for a in pool.agents)
    if traces is not None and not live:
        cutoff = cfg.easy_cutoff_rank or min(3, pool.size)
        cls_agent = cfg.classification_agent or pool.agents[max(pool.size - 2, 0)].id
        clf = None
        if any(cls_agent in o.path for o in batch.outcomes):
            clf = self_awareness_classification(batch.outcomes, traces, cls_agent)
        report = replace(
            report,
            easy_hard_costs=easy_hard_split(batch.outcomes, traces, cutoff, pool),
            classification=clf,
        )
        extra["classification_agent"] = cls_agent
        extra["easy_cutoff_rank"] = cutoff
        extra["answered_rejected_accuracy"] = {
            a: answered_rejected_accuracy(batch.outcomes, traces, a) for a in pool.ids[:-1]
        }
        oracle_outs = run_baseline(BaselineSpec("oracle"), queries, pool, traces, scenario, cfg.engine)
        oracle = aggregate(oracle_outs, scenario, pool.ids)
        extra["oracle"] = oracle.to_dict()
        extra["oracle_utility_ratio"] = oracle_ratio(report, oracle)
        rows_extra = report_rows(oracle, prefix="oracle_")
        ratio = extra["oracle_utility_ratio"]
        if ratio is not None:
            rows_extra.append(("oracle_utility_ratio", "", ratio))
    else:
        rows_extra = []
    return batch, report, extra, rows_extra


def _write_run(out: Path, cfg, queries, pool, traces, scenario, manifest: RunManifest, want_table2: bool) -> tuple:
    batch, report, extra, rows_extra = _evaluate(cfg, queries, pool, traces, scenario)
    manifest.outputs["outcomes"] = str(write_outcomes(out / "outcomes.jsonl", batch.outcomes))
    rows = report_rows(report) + rows_extra
    if report.classification is not None:
        c = report.classification
        agent = extra["classification_agent"]
        rows += [(f"classification_{k}", agent, getattr(c, k)) for k in ("accuracy", "precision", "recall", "f1")]
    manifest.outputs["report_csv"] = str(atomic_write_text(out / "report.csv", rows_to_csv(rows)))
    summary = {
        "scenario": {"name": scenario.name, "alpha": scenario.alpha, "gamma": scenario.gamma},
        "system": report.to_dict(),
        **extra,
    }
    manifest.outputs["report_json"] = str(write_json(out / "report.json", summary))
    if want_table2:
        if traces is None or any(a.is_live for a in pool.agents):
            raise ConfigError("--table2 needs a trace-backed pool")
        grid = table2(queries, pool, traces, cfg.policies(pool.ids), cfg.engine, cfg.external, scenario.gamma)
        md = format_table2(grid)
        manifest.outputs["table2"] = str(atomic_write_text(out / "table2.md", md))
        print(md, end="")
    return batch, report


def _finish(out: Path, manifest: RunManifest) -> None:
    manifest.finished_at = _now()
    write_json(out / "manifest.json", manifest.to_dict())


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if cfg.synthetic is None:
        raise ConfigError("synthetic: section required for simulate")
    if cfg.synthetic.n_queries <= 0:
        raise ConfigError("synthetic.n_queries: empty dataset")
    out = Path(args.out)
    manifest = RunManifest(cfg.config_hash, cfg.engine.seed, args.command, _now())
    synth = generate_synthetic(cfg.synthetic)
    pool = cfg.pool or synth.pool
    pool = _apply_removal(pool, args)
    manifest.outputs["traces"] = str(atomic_write_text(out / "traces.jsonl", serialize_trace_set(synth.traces)))
    _, report = _write_run(out, cfg, synth.queries, pool, synth.traces, cfg.scenario, manifest, args.table2)
    _finish(out, manifest)
    print(f"performance={report.performance:.4f} cost={report.mean_cost:.4f} utility={report.utility:.4f}")
    return EXIT_OK


def _load_traces(path) -> TraceSet:
    try:
        return load_trace_file(path)
    except OSError as exc:
        raise ConfigError(f"cannot read traces {path}: {exc.strerror}") from None
    except TraceFormatError as exc:
        raise ConfigError(f"traces {path}: {exc}") from None


def cmd_replay(args) -> int:
    cfg = _load(args)
    traces = _load_traces(args.traces)
    if cfg.pool is None:
        raise ConfigError("pool: required for replay")
    pool = _apply_removal(cfg.pool, args)
    queries = cfg.queries or traces.queries()
    if not queries:
        raise ConfigError("empty dataset")
    out = Path(args.out)
    manifest = RunManifest(cfg.config_hash, cfg.engine.seed, args.command, _now())
    _, report = _write_run(out, cfg, queries, pool, traces, cfg.scenario, manifest, args.table2)
    _finish(out, manifest)
    print(f"performance={report.performance:.4f} cost={report.mean_cost:.4f} utility={report.utility:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    bad = [a for a in args.alphas if not 0.0 <= a <= 1.0]
    if bad:
        raise ConfigError(f"--alphas: values outside [0, 1]: {bad}")
    if not args.alphas:
        raise ConfigError("--alphas: at least one value required")
    cfg = _load(args)
    if args.traces:
        traces = _load_traces(args.traces)
        if cfg.pool is None:
            raise ConfigError("pool: required with --traces")
        pool, queries = cfg.pool, cfg.queries or traces.queries()
    elif cfg.synthetic is not None:
        synth = generate_synthetic(cfg.synthetic)
        traces, pool, queries = synth.traces, cfg.pool or synth.pool, synth.queries
    else:
        raise ConfigError("sweep needs --traces or a synthetic section")
    if not queries:
        raise ConfigError("empty dataset")
    pool = _apply_removal(pool, args)
    out = Path(args.out)
    manifest = RunManifest(cfg.config_hash, cfg.engine.seed, args.command, _now())
    if not args.traces:
        manifest.outputs["traces"] = str(atomic_write_text(out / "traces.jsonl", serialize_trace_set(traces)))

    gamma = args.gamma if args.gamma is not None else cfg.scenario.gamma
    per_alpha = []
    for alpha in args.alphas:
        sc = Scenario.from_alpha(alpha, gamma)
        sub = out / f"alpha_{alpha:g}"
        sub_manifest = RunManifest(cfg.config_hash, cfg.engine.seed, args.command, manifest.started_at)
        batch, report = _write_run(sub, cfg, queries, pool, traces, sc, sub_manifest, False)
        manifest.outputs.update({f"alpha_{alpha:g}/{k}": v for k, v in sub_manifest.outputs.items()})
        per_alpha.append((alpha, report, {o.query_id: o.total_cost for o in batch.outcomes}))

    header = ["alpha", "performance", "cost", "utility"]
    header += [f"answer_rate_{a}" for a in pool.ids] + [f"share_{a}" for a in pool.ids]
    rows = []
    for alpha, r, _ in per_alpha:
        rows.append(
            [repr(alpha), repr(r.performance), repr(r.mean_cost), repr(r.utility)]
            + [repr(r.per_agent_answer_rate[a]) if a in r.per_agent_answer_rate else "" for a in pool.ids]
            + [repr(r.routing_distribution.get(a, 0.0)) for a in pool.ids]
        )
    manifest.outputs["sweep_csv"] = str(atomic_write_text(out / "sweep.csv", table_to_csv(header, rows)))

    ordered = sorted(per_alpha, key=lambda t: t[0])
    cost_violations = 0
    rate_violations = []
    for (a1, r1, c1), (a2, r2, c2) in zip(ordered, ordered[1:]):
        cost_violations += sum(1 for q in c1 if q in c2 and c2[q] > c1[q] + 1e-12)
        for agent in pool.ids:
            v1, v2 = r1.per_agent_answer_rate.get(agent), r2.per_agent_answer_rate.get(agent)
            if v1 is not None and v2 is not None and v2 < v1 - 1e-12:
                rate_violations.append({"agent": agent, "from_alpha": a1, "to_alpha": a2})
    check = {
        "alphas": [a for a, _, _ in ordered],
        "cost_monotone": cost_violations == 0,
        "cost_violations": cost_violations,
        "answer_rate_monotone": not rate_violations,
        "answer_rate_violations": rate_violations,
    }
    if cost_violations:
        logger.warning("pointwise cost monotonicity violated on %d query transitions", cost_violations)
    manifest.outputs["sweep_summary"] = str(write_json(out / "sweep_summary.json", check))
    _finish(out, manifest)
    print(table_to_csv(header, rows), end="")
    return EXIT_OK


def cmd_label(args) -> int:
    if not args.alphas:
        raise ConfigError("--alphas: at least one value required")
    try:
        scenarios = [Scenario.from_alpha(a, args.gamma or 0.5) for a in args.alphas]
    except ValueError as exc:
        raise ConfigError(f"--alphas: {exc}") from None
    traces = _load_traces(args.traces)
    ds = build_sft_dataset(traces, scenarios, balance=args.balance, seed=args.seed or 0)
    out = Path(args.out)
    atomic_write_text(out, dumps_jsonl(r.to_record() for r in ds.records))
    summary = {
        "n_records": len(ds.records),
        "balance": args.balance,
        "strata": [
            {"agent_id": a, "scenario": s, **counts} for (a, s), counts in ds.strata.items()
        ],
        "empty_strata": [{"agent_id": a, "scenario": s} for a, s in ds.empty_strata],
    }
    write_json(out.with_name(out.name + ".summary.json"), summary)
    for a, s in ds.empty_strata:
        print(f"warning: empty stratum agent={a} scenario={s}", file=sys.stderr)
    print(f"{len(ds.records)} records written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="selfroute", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def run_flags(sp, config_required=True):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--overhead", help="none or fractional:<f>")
        sp.add_argument("--pool-remove", help="comma-separated agent ids to drop")

    sp = sub.add_parser("simulate", help="generate a synthetic pool and route it")
    run_flags(sp)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--table2", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("replay", help="route queries over recorded traces")
    run_flags(sp)
    sp.add_argument("--traces", required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--table2", action="store_true")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("sweep", help="run one report per alpha")
    run_flags(sp)
    sp.add_argument("--alphas", type=_float_list, required=True)
    sp.add_argument("--traces")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("label", help="build answer/reject training labels")
    sp.add_argument("--traces", required=True)
    sp.add_argument("--alphas", type=_float_list, required=True)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--balance", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_label)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_CONFIG
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args.command = "selfroute " + " ".join(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingTraceError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (HopError, RuntimeError, ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
