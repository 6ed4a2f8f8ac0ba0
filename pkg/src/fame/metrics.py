"""Per-message detection metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .corpus import UNLABELED


def auroc(scores, labels) -> float | None:
    """Probability that a random anomaly outscores a random normal (ties count 1/2).

    ``None`` when either class is missing.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pct(x: float | None) -> str:
    return "n/a" if x is None else f"{100.0 * x:.2f}"


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    f1: float | None
    auroc: float | None
    per_path: dict = field(default_factory=dict)
    per_domain: dict = field(default_factory=dict)
    unseen: dict | None = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def percentages(self) -> dict[str, str]:
        return {
            "precision": pct(self.precision),
            "recall": pct(self.recall),
            "f1": pct(self.f1),
            "auroc": pct(self.auroc),
        }

    def to_dict(self) -> dict:
        return {
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auroc": self.auroc,
            "display": self.percentages(),
            "per_path": self.per_path,
            "per_domain": self.per_domain,
            "unseen": self.unseen,
        }


def confusion(pred, truth) -> tuple[int, int, int, int]:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    return tp, fp, fn, tn


def prf(tp: int, fp: int, fn: int) -> tuple[float | None, float | None, float | None]:
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def compute_metrics(pred, scores, truth) -> MetricsReport:
    """Anomaly is the positive class; ``scores`` feed AUROC only."""
    truth = np.asarray(truth)
    if np.any(truth == UNLABELED):
        raise ValueError("evaluation requires labels on every test record")
    tp, fp, fn, tn = confusion(pred, truth)
    precision, recall, f1 = prf(tp, fp, fn)
    return MetricsReport(tp, fp, fn, tn, precision, recall, f1, auroc(scores, truth))
