"""Machine-readable run reports and CSV/two-column exports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .scenario import ScenarioSpec

EXIT_OK = 0
EXIT_VIOLATED = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class ReportMergeError(ValueError):
    """Reports from different scenarios cannot be combined."""


def to_jsonable(x):
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if hasattr(x, "to_dict"):
        return to_jsonable(x.to_dict())
    return x


@dataclass
class RunReport:
    scenario_hash: str
    scenario: dict
    source: str = ""
    results: dict = field(default_factory=dict)
    seed: int | None = None
    status: str = "ok"
    exit_code: int = EXIT_OK
    wall_clock: float = 0.0
    tool_version: str = __version__

    @classmethod
    def for_scenario(cls, spec: ScenarioSpec, seed: int | None = None) -> "RunReport":
        return cls(spec.hash, spec.data, spec.source, seed=seed)

    def add(self, command: str, result):
        self.results[command] = to_jsonable(result)

    def to_dict(self):
        return {
            "tool": "srcurv",
            "tool_version": self.tool_version,
            "scenario": {"source": self.source, "hash": self.scenario_hash, "echo": self.scenario},
            "seed": self.seed,
            "status": self.status,
            "exit_code": self.exit_code,
            "wall_clock_s": self.wall_clock,
            "results": self.results,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)

    def write(self, path):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        sc = d["scenario"]
        return cls(
            sc["hash"],
            sc["echo"],
            sc.get("source", ""),
            dict(d.get("results", {})),
            d.get("seed"),
            d.get("status", "ok"),
            d.get("exit_code", EXIT_OK),
            d.get("wall_clock_s", 0.0),
            d.get("tool_version", __version__),
        )


def merge(reports) -> RunReport:
    """Combine per-command reports of one scenario; refuses mixed scenario hashes."""
    reports = list(reports)
    if not reports:
        raise ReportMergeError("nothing to merge")
    hashes = {r.scenario_hash for r in reports}
    if len(hashes) > 1:
        raise ReportMergeError(f"reports come from different scenarios: {sorted(hashes)}")
    first = reports[0]
    out = RunReport(first.scenario_hash, first.scenario, first.source, seed=first.seed)
    # sorted so the merged report does not depend on arrival order
    for r in sorted(reports, key=lambda r: sorted(r.results)):
        for k, v in r.results.items():
            if k in out.results and out.results[k] != v:
                raise ReportMergeError(f"conflicting results for {k!r}")
            out.results[k] = v
    out.exit_code = max(r.exit_code for r in reports)
    out.status = "ok" if out.exit_code == EXIT_OK else "violated" if out.exit_code == EXIT_VIOLATED else "error"
    out.wall_clock = sum(r.wall_clock for r in reports)
    return out


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    Path(path).write_text(csv_text(header, rows), encoding="utf-8")


def write_columns(path, x, y):
    """Whitespace-separated two-column file (gnuplot ``plot 'f' using 1:2``)."""
    lines = [f"{float(a)!r} {float(b)!r}" for a, b in zip(x, y)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
