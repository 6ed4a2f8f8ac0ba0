"""Labeled log corpora: ingestion, serialization and the chronological split.

Two on-disk formats are understood:

* ``loghub_labeled`` -- the public BGL/Thunderbird layout.  The first
  whitespace-delimited token of each line is the alert tag; ``-`` marks a
  normal line and anything else an anomaly.  The tag is removed from the
  message so it can never leak into features.
* ``jsonl`` -- one ``{"label": 0 | 1 | null, "msg": "..."}`` object per line.

Chronology is file order.  Timestamps are never parsed.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

NORMAL = 0
ANOMALY = 1
UNLABELED = -1

LABEL_NAMES = {NORMAL: "normal", ANOMALY: "anomaly", UNLABELED: "unlabeled"}
FORMATS = ("loghub_labeled", "jsonl")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class LogRecord:
    ordinal: int
    label: int
    raw: str
    event_id: str | None = None

    @property
    def label_name(self) -> str:
        return LABEL_NAMES[self.label]


class Corpus:
    """Column store of log records in chronological (file) order.

    Arrays are kept instead of per-line objects so that multi-million line
    datasets stay cheap.  ``event_ids`` is ``None`` until the corpus has been
    run through the parser.
    """

    def __init__(
        self,
        raws: Sequence[str],
        labels: Sequence[int] | np.ndarray,
        ordinals: Sequence[int] | np.ndarray | None = None,
        event_ids: Sequence[str | None] | None = None,
    ):
        self.raws = list(raws)
        self.labels = np.asarray(labels, dtype=np.int8)
        if ordinals is None:
            ordinals = np.arange(len(self.raws), dtype=np.int64)
        self.ordinals = np.asarray(ordinals, dtype=np.int64)
        self.event_ids = list(event_ids) if event_ids is not None else None
        n = len(self.raws)
        if self.labels.shape != (n,) or self.ordinals.shape != (n,):
            raise CorpusError("raws, labels and ordinals must have equal length")
        if n > 1 and not np.all(np.diff(self.ordinals) > 0):
            raise CorpusError("ordinals must be strictly increasing")
        if self.event_ids is not None and len(self.event_ids) != n:
            raise CorpusError("event_ids length mismatch")
        self.labels.setflags(write=False)
        self.ordinals.setflags(write=False)

    def __len__(self) -> int:
        return len(self.raws)

    def __getitem__(self, i: int) -> LogRecord:
        eid = self.event_ids[i] if self.event_ids is not None else None
        return LogRecord(int(self.ordinals[i]), int(self.labels[i]), self.raws[i], eid)

    def __iter__(self) -> Iterator[LogRecord]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.raws == other.raws
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.ordinals, other.ordinals)
            and self.event_ids == other.event_ids
        )

    def slice(self, start: int, stop: int) -> Corpus:
        eids = self.event_ids[start:stop] if self.event_ids is not None else None
        return Corpus(self.raws[start:stop], self.labels[start:stop], self.ordinals[start:stop], eids)

    def with_event_ids(self, event_ids: Sequence[str | None]) -> Corpus:
        return Corpus(self.raws, self.labels, self.ordinals, event_ids)

    @property
    def has_unlabeled(self) -> bool:
        return bool(np.any(self.labels == UNLABELED))


@dataclass(frozen=True)
class CorpusSplit:
    offline: range
    test: range
    offline_fraction: float

    def offline_corpus(self, corpus: Corpus) -> Corpus:
        return corpus.slice(self.offline.start, self.offline.stop)

    def test_corpus(self, corpus: Corpus) -> Corpus:
        return corpus.slice(self.test.start, self.test.stop)


def parse_loghub_line(line: str) -> tuple[int, str] | None:
    """Split one loghub line into (label, message).  ``None`` for blank lines."""
    stripped = line.lstrip()
    if not stripped.strip():
        return None
    parts = stripped.split(None, 1)
    tag = parts[0]
    raw = parts[1].strip() if len(parts) > 1 else ""
    return (NORMAL if tag == "-" else ANOMALY), raw


def _jsonl_label(value) -> int:
    if value is None:
        return UNLABELED
    if value in (0, 1) and not isinstance(value, float):
        return int(value)
    raise CorpusError(f"label must be 0, 1 or null, got {value!r}")


def iter_records(lines: Iterable[str], fmt: str) -> Iterator[tuple[int, int, str]]:
    """Yield ``(ordinal, label, raw)``; skipped lines are logged and counted."""
    if fmt not in FORMATS:
        raise CorpusError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    skipped = 0
    for ordinal, line in enumerate(lines):
        line = line.rstrip("\r\n")
        if fmt == "loghub_labeled":
            parsed = parse_loghub_line(line)
            if parsed is None:
                skipped += 1
                continue
            label, raw = parsed
        else:
            if not line.strip():
                skipped += 1
                continue
            try:
                obj = json.loads(line)
                label, raw = _jsonl_label(obj.get("label")), obj["msg"]
            except (json.JSONDecodeError, KeyError, AttributeError, CorpusError) as exc:
                logger.warning("line %d: malformed jsonl record skipped (%s)", ordinal, exc)
                skipped += 1
                continue
            if not isinstance(raw, str):
                skipped += 1
                continue
        yield ordinal, label, raw
    if skipped:
        logger.warning("skipped %d malformed line(s)", skipped)


def ingest(path: str | Path, fmt: str = "loghub_labeled") -> Corpus:
    path = Path(path)
    raws: list[str] = []
    labels: list[int] = []
    ordinals: list[int] = []
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        for ordinal, label, raw in iter_records(fh, fmt):
            ordinals.append(ordinal)
            labels.append(label)
            raws.append(raw)
    if not raws:
        raise CorpusError(f"{path}: no records (empty file)")
    return Corpus(raws, labels, ordinals)


def to_jsonl(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for label, raw in zip(corpus.labels.tolist(), corpus.raws):
            value = None if label == UNLABELED else label
            fh.write(json.dumps({"label": value, "msg": raw}, ensure_ascii=False) + "\n")


def split_chronological(corpus: Corpus | int, offline_fraction: float = 0.85) -> CorpusSplit:
    """First ``floor(N * offline_fraction)`` records are offline; the rest is test."""
    n = corpus if isinstance(corpus, int) else len(corpus)
    if not 0.0 < offline_fraction < 1.0:
        raise CorpusError("offline_fraction must lie in (0, 1)")
    if n < 2:
        raise CorpusError("need at least 2 records to split")
    cut = math.floor(n * offline_fraction)
    return CorpusSplit(range(cut), range(cut, n), offline_fraction)
