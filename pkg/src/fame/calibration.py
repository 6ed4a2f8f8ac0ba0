"""Decision thresholds and the universal-path score fusion."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .backbone import LOGIT_CLIP, PROB_EPS

logger = logging.getLogger(__name__)

DEFAULT_FUSION_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    f1: float
    precision: float
    recall: float
    n_candidates: int
    meets_floor: bool = True
    fallback: bool = False  # no anomalies to calibrate on; default 0.5 used


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    return np.clip(np.log(p) - np.log1p(-p), -LOGIT_CLIP, LOGIT_CLIP)


def fuse_universal(s_u, g, w: float):
    """sigmoid(logit(s_u) + w * logit(g)), inputs clamped before the logit."""
    z = logit(s_u) + w * logit(g)
    out = 1.0 / (1.0 + np.exp(-z))
    return out if np.ndim(out) else float(out)


def candidate_thresholds(scores: np.ndarray, n_percentiles: int = 1000) -> np.ndarray:
    """All unique scores when there are at most ``n_percentiles`` of them,
    otherwise the nearest-rank percentiles at ``n_percentiles`` evenly spaced
    levels from 0 to 100."""
    scores = np.asarray(scores, dtype=np.float64)
    uniq = np.unique(scores)
    if len(uniq) <= n_percentiles:
        return uniq
    ordered = np.sort(scores)
    levels = np.linspace(0.0, 100.0, n_percentiles)
    ranks = np.maximum(np.ceil(levels / 100.0 * len(ordered)).astype(np.int64), 1)
    return np.unique(ordered[ranks - 1])


def confusion_at(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray):
    """tp, fp, fn for the rule ``score >= threshold`` at every threshold."""
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    tp = len(pos) - np.searchsorted(pos, thresholds, side="left")
    fp = len(neg) - np.searchsorted(neg, thresholds, side="left")
    return tp, fp, len(pos) - tp


def calibrate_threshold(
    scores,
    labels,
    recall_floor: float = 0.90,
    n_percentiles: int = 1000,
) -> ThresholdResult:
    """Max-F1 threshold among candidates meeting the recall floor.

    If no candidate meets the floor, the highest-recall candidates are
    considered instead.  Ties go to the lower threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    if n_pos == 0 or len(scores) == 0:
        logger.warning("calibration subset has no anomalies; threshold defaults to 0.5")
        return ThresholdResult(0.5, math.nan, math.nan, math.nan, 0, False, True)
    cand = candidate_thresholds(scores, n_percentiles)
    tp, fp, fn = confusion_at(scores, labels, cand)
    f1 = 2.0 * tp / (2.0 * tp + fp + fn)
    recall = tp / n_pos
    feasible = recall >= recall_floor
    meets = bool(feasible.any())
    if meets:
        pool = feasible
    else:
        pool = recall == recall.max()
    best_f1 = f1[pool].max()
    i = int(np.flatnonzero(pool & (f1 == best_f1))[0])  # candidates ascend: lowest wins
    prec = tp[i] / (tp[i] + fp[i]) if tp[i] + fp[i] else 0.0
    return ThresholdResult(float(cand[i]), float(f1[i]), float(prec), float(recall[i]), len(cand), meets)


@dataclass(frozen=True)
class UniversalCalibration:
    weight: float
    threshold: ThresholdResult
    evaluated: int  # (w, threshold) candidates examined


def calibrate_universal(
    s_u,
    g,
    labels,
    w_grid=DEFAULT_FUSION_GRID,
    recall_floor: float = 0.90,
    n_percentiles: int = 1000,
) -> UniversalCalibration:
    """Grid-search the fusion weight; ties favour the smaller weight."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0 or not (labels == 1).any():
        res = calibrate_threshold(np.asarray(s_u, dtype=np.float64), labels, recall_floor, n_percentiles)
        return UniversalCalibration(0.0, res, 0)
    best: tuple[float, ThresholdResult] | None = None
    best_key = None
    evaluated = 0
    for w in sorted(float(x) for x in w_grid):
        res = calibrate_threshold(fuse_universal(s_u, g, w), labels, recall_floor, n_percentiles)
        evaluated += res.n_candidates
        key = (res.meets_floor, res.f1)
        if best_key is None or key > best_key:
            best, best_key = (w, res), key
    return UniversalCalibration(best[0], best[1], evaluated)


@dataclass
class CalibrationResult:
    """Per-domain thresholds, plus the fusion weight and threshold for UNIVERSAL_NORMAL."""

    tau: dict[int, float] = field(default_factory=dict)
    fusion_weight: float = 0.0
    tau_u: float = 0.5
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tau": {str(k): v for k, v in sorted(self.tau.items())},
            "universal": {"w": self.fusion_weight, "tau": self.tau_u},
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> CalibrationResult:
        return cls(
            tau={int(k): float(v) for k, v in doc["tau"].items()},
            fusion_weight=float(doc["universal"]["w"]),
            tau_u=float(doc["universal"]["tau"]),
            details=doc.get("details", {}),
        )
