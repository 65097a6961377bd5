"""Report, outcome-log and manifest persistence. Every write is atomic."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .core import EvalReport, RoutingOutcome


def atomic_write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps_jsonl(records: Iterable[Mapping]) -> str:
    return "".join(json.dumps(r, separators=(",", ":"), ensure_ascii=False) + "\n" for r in records)


def write_outcomes(path, outcomes: Iterable[RoutingOutcome]) -> Path:
    return atomic_write_text(path, dumps_jsonl(o.to_record() for o in outcomes))


def report_rows(report: EvalReport, prefix: str = "") -> list[tuple[str, str, float]]:
    rows = [
        (f"{prefix}performance", "", report.performance),
        (f"{prefix}mean_cost", "", report.mean_cost),
        (f"{prefix}utility", "", report.utility),
    ]
    rows += [(f"{prefix}answer_rate", a, v) for a, v in report.per_agent_answer_rate.items()]
    rows += [(f"{prefix}routing_share", a, v) for a, v in report.routing_distribution.items()]
    if report.easy_hard_costs is not None:
        eh = report.easy_hard_costs
        if eh.easy_mean_cost is not None:
            rows.append((f"{prefix}easy_mean_cost", "", eh.easy_mean_cost))
        if eh.hard_mean_cost is not None:
            rows.append((f"{prefix}hard_mean_cost", "", eh.hard_mean_cost))
    if report.delta_performance is not None:
        rows.append((f"{prefix}delta_performance", "", report.delta_performance))
    return rows


def rows_to_csv(rows: Iterable[tuple[str, str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "agent_id", "value"])
    for metric, agent, value in rows:
        w.writerow([metric, agent, repr(float(value))])
    return buf.getvalue()


def table_to_csv(header: list[str], rows: Iterable[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    command: str
    started_at: str
    finished_at: str = ""
    outputs: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)
