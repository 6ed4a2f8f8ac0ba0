"""K-shot supervision: at most K labeled lines per EventID and the PU-normal pool."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ANOMALY, NORMAL, UNLABELED, Corpus


@dataclass
class EventSample:
    """Sampled lines of one EventID, as offline record indices in ordinal order."""

    train: np.ndarray
    calib: np.ndarray
    has_normal: bool
    has_anomaly: bool
    rep_normal: int | None = None
    rep_anomaly: int | None = None

    @property
    def lines(self) -> np.ndarray:
        return np.concatenate([self.train, self.calib])

    def __len__(self) -> int:
        return len(self.train) + len(self.calib)


@dataclass
class KShotSample:
    k: int
    per_event: dict[str, EventSample] = field(default_factory=dict)

    @property
    def n_labels(self) -> int:
        return sum(len(s) for s in self.per_event.values())

    def indices(self, part: str = "all") -> np.ndarray:
        if part == "train":
            chunks = [s.train for s in self.per_event.values()]
        elif part == "calib":
            chunks = [s.calib for s in self.per_event.values()]
        else:
            chunks = [s.lines for s in self.per_event.values()]
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(chunks)).astype(np.int64)

    def anomaly_indices(self, corpus: Corpus, part: str = "all") -> np.ndarray:
        idx = self.indices(part)
        return idx[corpus.labels[idx] == ANOMALY]

    def to_json(self, corpus: Corpus) -> str:
        ords = corpus.ordinals
        doc = {
            "k": self.k,
            "events": {
                eid: {
                    "train": ords[s.train].tolist(),
                    "calib": ords[s.calib].tolist(),
                    "has_normal": s.has_normal,
                    "has_anomaly": s.has_anomaly,
                    "rep_normal": None if s.rep_normal is None else int(ords[s.rep_normal]),
                    "rep_anomaly": None if s.rep_anomaly is None else int(ords[s.rep_anomaly]),
                }
                for eid, s in self.per_event.items()
            },
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    def save(self, path: str | Path, corpus: Corpus) -> None:
        Path(path).write_text(self.to_json(corpus), encoding="utf-8")


def train_size(n: int) -> int:
    """Chronological 80/20 split size: floor(0.8 n), at least one train line."""
    if n <= 0:
        return 0
    return max(1, (4 * n) // 5)


def _event_codes(offline: Corpus) -> tuple[list[str], np.ndarray]:
    if offline.event_ids is None:
        raise ValueError("corpus has not been parsed (event_id missing)")
    order: dict[str, int] = {}
    codes = np.fromiter(
        (order.setdefault(e, len(order)) for e in offline.event_ids),
        dtype=np.int64,
        count=len(offline),
    )
    return list(order), codes


def sample(offline: Corpus, k: int) -> KShotSample:
    """Take the K most recent labeled lines per EventID and split them 80/20."""
    if k < 1:
        raise ValueError("k must be >= 1")
    names, codes = _event_codes(offline)
    labels = offline.labels
    labeled = np.flatnonzero(labels != UNLABELED)
    lab_codes = codes[labeled]
    order = np.lexsort((labeled, lab_codes))
    idx = labeled[order]
    grp = lab_codes[order]

    result = KShotSample(k=k)
    bounds = np.flatnonzero(np.diff(grp)) + 1
    starts = np.concatenate([[0], bounds]) if len(idx) else np.empty(0, dtype=np.int64)
    ends = np.concatenate([bounds, [len(idx)]]) if len(idx) else np.empty(0, dtype=np.int64)
    by_code: dict[int, np.ndarray] = {}
    for s, e in zip(starts.tolist(), ends.tolist()):
        by_code[int(grp[s])] = idx[max(s, e - k) : e]

    empty = np.empty(0, dtype=np.int64)
    for code, eid in enumerate(names):
        lines = by_code.get(code, empty)
        t = train_size(len(lines))
        lab = labels[lines]
        normals = lines[lab == NORMAL]
        anomalies = lines[lab == ANOMALY]
        result.per_event[eid] = EventSample(
            train=lines[:t].copy(),
            calib=lines[t:].copy(),
            has_normal=bool(len(normals)),
            has_anomaly=bool(len(anomalies)),
            rep_normal=int(normals[-1]) if len(normals) else None,
            rep_anomaly=int(anomalies[-1]) if len(anomalies) else None,
        )
    return result


def build_pu_pool(offline: Corpus, ks: KShotSample) -> np.ndarray:
    """Offline record indices minus the K-shot lines labeled anomalous."""
    mask = np.ones(len(offline), dtype=bool)
    mask[ks.anomaly_indices(offline)] = False
    return np.flatnonzero(mask)


@dataclass(frozen=True)
class CostRow:
    k: int
    labels: int
    offline_lines: int

    @property
    def reduction(self) -> float:
        return self.offline_lines / self.labels if self.labels else math.inf

    @property
    def reduction_rounded(self) -> int:
        return int(math.floor(self.reduction + 0.5))


def label_count(offline: Corpus, k: int) -> int:
    _, codes = _event_codes(offline)
    counts = np.bincount(codes[offline.labels != UNLABELED])
    return int(np.minimum(counts, k).sum())


def labeling_cost_report(offline: Corpus, ks: list[int]) -> list[CostRow]:
    _, codes = _event_codes(offline)
    counts = np.bincount(codes[offline.labels != UNLABELED])
    return [CostRow(k, int(np.minimum(counts, k).sum()), len(offline)) for k in ks]


def format_cost_table(rows: list[CostRow]) -> str:
    lines = [f"{'K':>5} {'Labels':>10} {'Reduction':>10}"]
    for r in rows:
        lines.append(f"{r.k:>5} {r.labels:>10,} {str(r.reduction_rounded) + 'x':>10}")
    return "\n".join(lines)
