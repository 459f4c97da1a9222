"""Scoring extracted graphs against ground truth.

Edge F1 treats an edge as matched on the exact directed (cause, effect)
pair, ignoring lags. Precision of delay (PoD) is the fraction of
true-positive lagged edges whose estimated lag is exactly right; an
auxiliary lag MAE is reported alongside. Aggregation is mean plus
population standard deviation across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError
from .extract import CausalGraph
from .synthetic import GroundTruth

REPORT_SCHEMA = "causalgrad-report-v1"


def f1_edges(predicted: CausalGraph, truth: GroundTruth):
    """(precision, recall, f1) on directed edges, lags ignored."""
    nodes = set(predicted.nodes)
    for cause, effect in truth.edges:
        if cause not in nodes or effect not in nodes:
            raise DataError(f"truth edge ({cause} -> {effect}) names a node "
                            "missing from the predicted graph")
    pred = predicted.edge_set()
    true = set(truth.edges)
    tp = len(pred & true)
    precision = tp / len(pred) if pred else 1.0
    recall = tp / len(true) if true else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def pod_score(predicted: CausalGraph, truth: GroundTruth):
    """Exact-lag fraction over true-positive lagged edges; None when that
    set is empty (undefined, excluded from aggregates)."""
    lagged_tp = [e for e in predicted.edges
                 if (e.cause, e.effect) in truth.edges
                 and (e.cause, e.effect) in truth.lags]
    if not lagged_tp:
        return None
    hits = sum(1 for e in lagged_tp if e.lag == truth.lags[(e.cause, e.effect)])
    return hits / len(lagged_tp)


def lag_mae(predicted: CausalGraph, truth: GroundTruth):
    """Mean absolute lag error over true-positive lagged edges with a
    predicted lag; None when the set is empty."""
    errors = [abs(e.lag - truth.lags[(e.cause, e.effect)])
              for e in predicted.edges
              if (e.cause, e.effect) in truth.lags and e.lag is not None]
    if not errors:
        return None
    return float(np.mean(errors))


@dataclass
class EvalReport:
    """Per-run metrics plus mean and population-std aggregates."""

    runs: list
    mean: dict
    std: dict

    def to_json(self) -> dict:
        return {"schema": REPORT_SCHEMA, "runs": self.runs,
                "mean": self.mean, "std": self.std}

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        if obj.get("schema") != REPORT_SCHEMA:
            raise DataError(f"unexpected report schema tag: {obj.get('schema')!r}")
        return cls(runs=obj["runs"], mean=obj["mean"], std=obj["std"])


def evaluate_runs(runs) -> EvalReport:
    """Score a list of (CausalGraph, GroundTruth) pairs.

    PoD and lag-MAE aggregates skip runs where they are undefined.
    """
    if not runs:
        raise DataError("need at least one run to evaluate")
    rows = []
    for graph, truth in runs:
        precision, recall, f1 = f1_edges(graph, truth)
        pred = graph.edge_set()
        true = set(truth.edges)
        rows.append({
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "pod": pod_score(graph, truth),
            "lag_mae": lag_mae(graph, truth),
            "tp": len(pred & true),
            "fp": len(pred - true),
            "fn": len(true - pred),
        })

    mean = {}
    std = {}
    for key in ("precision", "recall", "f1", "pod", "lag_mae"):
        vals = [r[key] for r in rows if r[key] is not None]
        if vals:
            mean[key] = float(np.mean(vals))
            std[key] = float(np.std(vals))
        else:
            mean[key] = None
            std[key] = None
    return EvalReport(runs=rows, mean=mean, std=std)


def save_report(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")


def load_report(path) -> EvalReport:
    return EvalReport.from_json(json.loads(Path(path).read_text()))


def format_table(rows) -> str:
    """Aligned mean±std table, one row per labeled report.

    rows: list of (label, EvalReport).
    """
    headers = ["dataset", "F1", "PoD", "precision", "recall", "lag MAE"]
    keys = ["f1", "pod", "precision", "recall", "lag_mae"]

    def cell(report, key):
        if report.mean.get(key) is None:
            return "n/a"
        return f"{report.mean[key]:.2f}±{report.std[key]:.2f}"

    table = [[label] + [cell(rep, k) for k in keys] for label, rep in rows]
    widths = [max(len(headers[c]), *(len(r[c]) for r in table)) if table else len(headers[c])
              for c in range(len(headers))]
    lines = ["  ".join(h.ljust(widths[c]) for c, h in enumerate(headers))]
    lines.append("  ".join("-" * widths[c] for c in range(len(headers))))
    for r in table:
        lines.append("  ".join(r[c].ljust(widths[c]) for c in range(len(headers))))
    return "\n".join(lines)
