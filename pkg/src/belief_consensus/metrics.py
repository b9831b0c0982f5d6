"""Consensus-quality metrics over a set of run reports.

For case u with n_s consensus agents, r rounds, and correctness c:

    CL  = mean(n_s / n)          consensus level
    SCL = mean(n_s * c / n)      success consensus level
    SCR = mean(n_s * c / r)      success consensus rate

Accuracy is the fraction of correct cases. Multi-seed experiment groups are
summarized as mean +/- standard error of the mean.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence


@dataclass(frozen=True)
class MetricsSummary:
    cl: float
    scl: float
    scr: float
    accuracy: float
    n_cases: int


@dataclass(frozen=True)
class MetricsRow:
    """Minimal per-case facts needed by compute_metrics (RunReport quacks too)."""

    case_id: str
    consensus_count: int
    n_rounds: int
    correct: bool


def rows_from_results_jsonl(path: str | Path) -> tuple[list[MetricsRow], int | None]:
    """Read a results file back into metric rows; returns (rows, n from header)."""
    rows: list[MetricsRow] = []
    n = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            if "config" in payload and "case_id" not in payload:
                n = payload["config"].get("run", {}).get("n")
                continue
            rows.append(
                MetricsRow(
                    case_id=str(payload["case_id"]),
                    consensus_count=int(payload["consensus_count"]),
                    n_rounds=int(payload["n_rounds"]),
                    correct=bool(payload["correct"]),
                )
            )
    if not rows:
        raise ValueError("results file holds no case rows")
    return rows, n


def compute_metrics(reports: Sequence, n: int) -> MetricsSummary:
    if not reports:
        raise ValueError("no reports to aggregate")
    cl = scl = scr = correct = 0.0
    for rep in reports:
        if rep.n_rounds < 1:
            raise ValueError(f"case {rep.case_id!r} has no rounds")
        c = 1.0 if rep.correct else 0.0
        cl += rep.consensus_count / n
        scl += rep.consensus_count * c / n
        scr += rep.consensus_count * c / rep.n_rounds
        correct += c
    k = len(reports)
    return MetricsSummary(
        cl=cl / k, scl=scl / k, scr=scr / k, accuracy=correct / k, n_cases=k
    )


def mean_sem(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error of the mean (sample stddev / sqrt(count))."""
    k = len(values)
    if k == 0:
        raise ValueError("no values")
    mean = sum(values) / k
    if k == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (k - 1)
    return mean, math.sqrt(var) / math.sqrt(k)


def metrics_to_csv(summaries: Sequence[tuple[str, MetricsSummary]], out: IO[str],
                   header_comment: str | None = None):
    if header_comment:
        out.write(f"# {header_comment}\n")
    writer = csv.writer(out)
    writer.writerow(["label", "n_cases", "cl", "scl", "scr", "accuracy"])
    for label, s in summaries:
        writer.writerow([label, s.n_cases, repr(s.cl), repr(s.scl), repr(s.scr), repr(s.accuracy)])
    if len(summaries) > 1:
        for name in ("cl", "scl", "scr", "accuracy"):
            mean, sem = mean_sem([getattr(s, name) for _, s in summaries])
            writer.writerow([f"{name}_mean_sem", len(summaries), repr(mean), repr(sem), "", ""])


def format_metrics(summaries: Sequence[tuple[str, MetricsSummary]]) -> str:
    lines = [f"{'label':<24} {'cases':>5} {'CL':>8} {'SCL':>8} {'SCR':>8} {'acc':>6}"]
    for label, s in summaries:
        lines.append(
            f"{label:<24} {s.n_cases:>5} {s.cl:>8.4f} {s.scl:>8.4f} {s.scr:>8.4f} {s.accuracy:>6.3f}"
        )
    if len(summaries) > 1:
        parts = []
        for name in ("cl", "scl", "scr", "accuracy"):
            mean, sem = mean_sem([getattr(s, name) for _, s in summaries])
            parts.append(f"{name}={mean:.4f}+/-{sem:.4f}")
        lines.append("groups: " + " ".join(parts))
    return "\n".join(lines)
