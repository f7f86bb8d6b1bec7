"""CSV and JSON serialisation of experiment reports.

The CSV holds one row per trial. The JSON document ("report_v1") carries
the same rows plus a summary per scheduler and (policy, mean, cv) chart
triples for external plotting.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence, Union

from .harness import ExperimentReport, TrialResult

REPORT_FORMAT = "report_v1"
FORMATS = ("csv", "json")

Reports = Union[ExperimentReport, Sequence[ExperimentReport]]


class ReportIOError(OSError):
    """A report could not be written or read; the message names the path."""


def _as_list(reports: Reports) -> list[ExperimentReport]:
    items = [reports] if isinstance(reports, ExperimentReport) else list(reports)
    if not items:
        raise ValueError("nothing to report")
    for r in items:
        if not r.trials:
            raise ValueError(f"report for {r.scheduler} has no trials")
    return items


def _node_columns(reports: list[ExperimentReport]) -> list[str]:
    names = reports[0].node_names or [f"slave{i + 1}" for i in range(len(reports[0].trials[0].pod_counts))]
    for r in reports:
        for t in r.trials:
            if len(t.pod_counts) != len(names):
                raise ValueError("all trials must cover the same node roster")
    return list(names)


def csv_text(reports: Reports) -> str:
    reports = _as_list(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheduler", "trial", *_node_columns(reports), "avg_cpu_pct", "seed"])
    for r in reports:
        for t in r.trials:
            w.writerow([r.scheduler, t.trial, *t.pod_counts, f"{t.avg_cpu_pct:.4f}", t.seed])
    return buf.getvalue()


def summary(report: ExperimentReport) -> dict:
    return {
        "mean": report.mean_avg_cpu,
        "cv": report.cv_pct,
        "active_nodes": report.active_node_stats,
    }


def json_document(reports: Reports) -> dict:
    reports = _as_list(reports)
    return {
        "format": REPORT_FORMAT,
        "reports": [
            {
                "scheduler": r.scheduler,
                "node_names": list(r.node_names),
                "trials": [
                    {
                        "trial": t.trial,
                        "seed": t.seed,
                        "pod_counts": list(t.pod_counts),
                        "node_cpu_pct": list(t.node_cpu_pct),
                        "avg_cpu_pct": t.avg_cpu_pct,
                    }
                    for t in r.trials
                ],
                "summary": summary(r),
            }
            for r in reports
        ],
        "chart": [[r.scheduler, r.mean_avg_cpu, r.cv_pct] for r in reports],
    }


def emit_report(reports: Reports, fmt: str, path: str | Path) -> Path:
    """Write ``reports`` as ``fmt`` ("csv" or "json") to ``path``."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format: {fmt}")
    text = csv_text(reports) if fmt == "csv" else json.dumps(json_document(reports), indent=2) + "\n"
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as e:
        raise ReportIOError(e.errno, f"cannot write report to {path}: {e.strerror}") from e
    return path


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as e:
        raise ReportIOError(e.errno, f"cannot read report {path}: {e.strerror}") from e


def load_report(path: str | Path) -> list[ExperimentReport]:
    """Parse a file written by emit_report (format chosen by content).

    CSV rows carry no per-node CPU readings, so those come back empty.
    """
    path = Path(path)
    text = _read(path)
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError(f"{path}: unsupported report format {doc.get('format')!r}")
        return [
            ExperimentReport(
                r["scheduler"],
                [
                    TrialResult(r["scheduler"], t["trial"], t["seed"], list(t["pod_counts"]),
                                list(t["node_cpu_pct"]), float(t["avg_cpu_pct"]))
                    for t in r["trials"]
                ],
                list(r["node_names"]),
            )
            for r in doc["reports"]
        ]

    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError(f"{path}: empty report")
    header = rows[0]
    if header[:2] != ["scheduler", "trial"] or header[-2:] != ["avg_cpu_pct", "seed"]:
        raise ValueError(f"{path}: unexpected header {header}")
    nodes = header[2:-2]
    grouped: dict[str, list[TrialResult]] = {}
    for row in rows[1:]:
        name, trial, *counts, avg, seed = row
        grouped.setdefault(name, []).append(
            TrialResult(name, int(trial), int(seed), [int(c) for c in counts], [], float(avg))
        )
    return [ExperimentReport(name, trials, list(nodes)) for name, trials in grouped.items()]
