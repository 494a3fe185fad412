"""Anomaly verdicts from next-template predictions, and the metric harness.

Anomalies are the positive class throughout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import ANOMALY, NORMAL


def default_grid():
    """0.05, 0.10, ..., 1.00 as exact two-decimal values."""
    return tuple(round(0.05 * k, 2) for k in range(1, 21))


@dataclass(frozen=True)
class DetectionConfig:
    logs_top_k: int = 20
    trace_top_k: int = 1
    threshold_grid: tuple = field(default_factory=default_grid)

    def __post_init__(self):
        if self.logs_top_k < 1 or self.trace_top_k < 1:
            raise ValueError("top-k values must be at least 1")
        grid = tuple(self.threshold_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("threshold grid must be non-empty and strictly increasing")
        if grid[0] <= 0 or grid[-1] > 1:
            raise ValueError("threshold grid must lie within (0, 1]")


@dataclass
class AnomalyVerdict:
    trace_id: str
    span_error_rate: float
    trace_label_pred: str
    per_log_flags: list = field(default_factory=list)
    windows: int = 0
    errors: int = 0

    def to_json(self):
        return asdict(self)


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_json(self):
        return asdict(self)

    def table(self) -> str:
        rows = [("accuracy", self.accuracy), ("precision", self.precision),
                ("recall", self.recall), ("f1", self.f1)]
        lines = [f"{name:<10} {value:.3f}" for name, value in rows]
        lines.append(f"tp={self.tp} fp={self.fp} tn={self.tn} fn={self.fn}")
        return "\n".join(lines)


def top_k(probs, k):
    """Indices of the k most probable templates; equal probabilities favour lower ids."""
    probs = np.asarray(probs)
    order = np.lexsort((np.arange(len(probs)), -probs))
    return order[:k]


def in_top_k(probs, target, k, unknown_id=None) -> bool:
    """Whether ``target`` ranks among the ``k`` most probable templates.

    With ``unknown_id`` set, a target equal to it never counts as a hit.
    """
    if unknown_id is not None and target == unknown_id:
        return False
    probs = np.asarray(probs)
    p = probs[target]
    # strictly better templates, plus equal ones with a lower id
    rank = int(np.sum(probs > p) + np.sum(probs[:target] == p))
    return rank < k


def hits_top_k(probs, targets, k, unknown_id=None):
    """Vectorised :func:`in_top_k` over rows of a probability matrix."""
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=np.int64)
    if len(targets) == 0:
        return np.zeros(0, dtype=bool)
    p = probs[np.arange(len(targets)), targets][:, None]
    ids = np.arange(probs.shape[1])[None, :]
    rank = np.sum(probs > p, axis=1) + np.sum((probs == p) & (ids < targets[:, None]), axis=1)
    hit = rank < k
    if unknown_id is not None:
        hit &= targets != unknown_id
    return hit


def classify_log(probs, true_template, k, unknown_id=None) -> str:
    return NORMAL if in_top_k(probs, true_template, k, unknown_id) else ANOMALY


def score_trace(predictions, k, unknown_id=None) -> float:
    """Span error rate: share of windows whose true next span misses the top k."""
    predictions = list(predictions)
    if not predictions:
        raise ValueError("trace has no scored windows")
    errors = sum(not in_top_k(p, t, k, unknown_id) for p, t in predictions)
    return errors / len(predictions)


def _is_anomaly(labels):
    if isinstance(labels, np.ndarray) and labels.dtype == bool:
        return labels
    out = []
    for label in labels:
        if label not in (NORMAL, ANOMALY, True, False, 0, 1):
            raise ValueError(f"unknown label {label!r}")
        out.append(label == ANOMALY or label is True or label == 1)
    return np.array(out, dtype=bool)


def _seq(x):
    return x if isinstance(x, np.ndarray) else list(x)


def evaluate(preds, truth) -> MetricReport:
    """Binary metrics with anomaly as the positive class; 0/0 counts as 0."""
    p, t = _is_anomaly(_seq(preds)), _is_anomaly(_seq(truth))
    if len(p) != len(t):
        raise ValueError(f"length mismatch: {len(p)} predictions, {len(t)} labels")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    tn = int(np.sum(~p & ~t))
    total = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / total if total else 0.0
    return MetricReport(accuracy, precision, recall, f1, tp, fp, tn, fn)


def sweep_threshold(scores, grid=None):
    """Pick the grid threshold with the best F1 (smallest on ties).

    ``scores`` is a sequence of ``(rate, true_label)``; a trace is flagged
    when its rate is strictly above the threshold.
    """
    grid = tuple(grid) if grid is not None else default_grid()
    rates = np.array([r for r, _ in scores], dtype=float)
    truth = [l for _, l in scores]
    t = _is_anomaly(truth)
    if not t.any():
        raise ValueError("no anomalous traces among the labels")
    if t.all():
        raise ValueError("no normal traces among the labels")
    best = None
    for theta in grid:
        report = evaluate(rates > theta, t)
        if best is None or report.f1 > best[1].f1:
            best = (theta, report)
    return best


def predict_labels(rates, threshold):
    return [ANOMALY if r > threshold else NORMAL for r in rates]


def write_verdicts(verdicts, path):
    with open(path, "w") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_json(), sort_keys=True) + "\n")


def read_verdicts(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(AnomalyVerdict(**json.loads(line)))
    return out
