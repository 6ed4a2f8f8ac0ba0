"""Online stage: the model bundle and the three-path decision rule.

A line whose gate score is below 0.5 is scored by the fused universal model
and carries no domain label.  Otherwise the selector picks a domain: a
pure-anomaly domain flags the line outright, a mixed domain compares its
expert score against the domain threshold.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections.abc import Callable, Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path

import numpy as np

from .backbone import BackboneState, HashingFeaturizer, LinearClassifier
from .calibration import CalibrationResult, fuse_universal
from .drain import TemplateTable
from .experts import ExpertModel
from .partition import CertifiedPartition
from .router import GATE_THRESHOLD, GateModel, SelectorModel

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = 1
PATH_UNIVERSAL, PATH_PURE, PATH_MIXED = 0, 1, 2
PATH_NAMES = ("universal", "pure", "mixed")


class BundleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# decision rule
# ---------------------------------------------------------------------------


def decide(g, c_star, pure, fused_u, s_c, tau_u, tau_c):
    """Vectorized three-path rule.

    ``g`` gate scores, ``c_star`` selected domains, ``pure`` whether each
    selected domain is pure-anomaly, ``fused_u`` fused universal scores,
    ``s_c``/``tau_c`` the selected expert's score and threshold (ignored on
    the other paths).  Returns (anomaly flags, path codes, domain indices).
    """
    g = np.asarray(g, dtype=np.float64)
    expert = g >= GATE_THRESHOLD
    pure = np.asarray(pure, dtype=bool)
    path = np.where(expert, np.where(pure, PATH_PURE, PATH_MIXED), PATH_UNIVERSAL)
    with np.errstate(invalid="ignore"):
        mixed_hit = np.asarray(s_c, dtype=np.float64) >= np.asarray(tau_c, dtype=np.float64)
    anomaly = np.where(
        path == PATH_UNIVERSAL,
        np.asarray(fused_u, dtype=np.float64) >= tau_u,
        np.where(path == PATH_PURE, True, mixed_hit),
    )
    domain = np.where(path == PATH_UNIVERSAL, 0, np.asarray(c_star, dtype=np.int64))
    return anomaly.astype(bool), path.astype(np.int64), domain.astype(np.int64)


@dataclass(frozen=True)
class Verdict:
    ordinal: int
    decision: str  # "normal" | "anomaly"
    domain: str | None
    path: str
    score: float | None  # absent on the pure path

    @property
    def anomaly(self) -> bool:
        return self.decision == "anomaly"

    def to_json(self) -> str:
        score = None if self.score is None else f"{self.score:.6f}"
        domain = json.dumps(self.domain)
        return (
            f'{{"ordinal": {self.ordinal}, "decision": "{self.decision}", "domain": {domain}, '
            f'"path": "{self.path}", "score": {"null" if score is None else score}}}'
        )

    @classmethod
    def from_json(cls, line: str) -> Verdict:
        d = json.loads(line)
        return cls(int(d["ordinal"]), d["decision"], d["domain"], d["path"], d["score"])


@dataclass
class BatchResult:
    """Column form of a batch of verdicts."""

    anomaly: np.ndarray
    path: np.ndarray
    domain: np.ndarray
    score: np.ndarray  # NaN on the pure path
    selector_fallbacks: int = 0

    def __len__(self) -> int:
        return len(self.anomaly)

    def verdicts(self, ordinals: Iterable[int], names: tuple[str, ...]) -> list[Verdict]:
        out = []
        for o, a, p, d, s in zip(ordinals, self.anomaly, self.path, self.domain, self.score):
            out.append(
                Verdict(
                    int(o),
                    "anomaly" if a else "normal",
                    None if p == PATH_UNIVERSAL else names[d],
                    PATH_NAMES[p],
                    None if p == PATH_PURE else float(s),
                )
            )
        return out


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------


@dataclass
class ModelBundle:
    partition: CertifiedPartition
    backbone: BackboneState
    gate: GateModel | None
    selector: SelectorModel | None
    experts: dict[int, ExpertModel]
    calibration: CalibrationResult
    templates: TemplateTable | None = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()
        self._warn_lock = threading.Lock()
        self.selector_fallbacks = 0

    @property
    def featurizer(self) -> HashingFeaturizer:
        return self.backbone.featurizer

    def validate(self) -> None:
        p = self.partition
        if 0 not in self.experts or not self.experts[0].trained:
            raise BundleError("bundle has no universal expert")
        for d in p.expert_domains:
            exp = self.experts.get(d)
            if p.is_pure(d):
                if (exp is not None and exp.trained) or d in self.calibration.tau:
                    raise BundleError(f"pure domain {p.domain_names[d]} must carry no expert or threshold")
            elif exp is None or not exp.trained or d not in self.calibration.tau:
                raise BundleError(f"mixed domain {p.domain_names[d]} needs an expert and a threshold")
        if self.selector is not None and self.selector.n_domains != p.n_domains - 1:
            raise BundleError("selector classes do not match the partition")
        if p.n_domains > 1 and self.gate is None:
            raise BundleError("bundle with expert domains needs a gate")

    # --- scoring -----------------------------------------------------------

    def classify_batch(self, raws: list[str]) -> BatchResult:
        n = len(raws)
        if n == 0:
            e = np.empty(0)
            return BatchResult(e.astype(bool), e.astype(np.int64), e.astype(np.int64), e)
        counts = self.featurizer.counts(raws)
        X_plain = HashingFeaturizer.from_counts(counts)
        X_adapt = HashingFeaturizer.from_counts(counts, self.backbone.idf)

        if self.gate is None:
            g_route = np.zeros(n)
            g_fuse = np.full(n, 0.5)
        else:
            g_route = g_fuse = self.gate.score(X_plain)
        expert_rows = np.flatnonzero(g_route >= GATE_THRESHOLD)
        fallbacks = 0
        c_star = np.zeros(n, dtype=np.int64)
        if len(expert_rows):
            if self.selector is None:
                fallbacks = len(expert_rows)
                g_route = np.where(g_route >= GATE_THRESHOLD, 0.0, g_route)
                expert_rows = expert_rows[:0]
            else:
                c_star[expert_rows] = self.selector.predict(X_plain[expert_rows])

        pure_flags = np.array([False] + [self.partition.is_pure(d) for d in self.partition.expert_domains])
        pure = pure_flags[c_star] & (c_star > 0)
        s_c = np.full(n, np.nan)
        tau_c = np.full(n, np.nan)
        for d in np.unique(c_star[expert_rows]).tolist():
            if pure_flags[d]:
                continue
            rows = expert_rows[c_star[expert_rows] == d]
            s_c[rows] = self.experts[d].score(X_adapt[rows])
            tau_c[rows] = self.calibration.tau[d]

        fused = np.full(n, np.nan)
        uni = np.flatnonzero(g_route < GATE_THRESHOLD)
        if len(uni):
            s_u = self.experts[0].score(X_adapt[uni])
            fused[uni] = fuse_universal(s_u, g_fuse[uni], self.calibration.fusion_weight)

        anomaly, path, domain = decide(g_route, c_star, pure, fused, s_c, self.calibration.tau_u, tau_c)
        score = np.where(path == PATH_UNIVERSAL, fused, np.where(path == PATH_MIXED, s_c, np.nan))
        if fallbacks:
            with self._warn_lock:
                self.selector_fallbacks += fallbacks
        return BatchResult(anomaly, path, domain, score, fallbacks)

    def classify(self, raw: str, ordinal: int = 0) -> Verdict:
        return self.classify_batch([raw]).verdicts([ordinal], self.partition.domain_names)[0]

    # --- persistence -------------------------------------------------------

    def save(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        dim = self.backbone.dim
        man = dict(self.manifest)
        man["format"] = BUNDLE_FORMAT
        man["featurizer"] = {"dim": dim, "hash_seed": self.featurizer.seed}
        man["backbone"] = {"n_adapt_lines": self.backbone.n_adapt_lines, "idf": None}
        if self.backbone.idf is not None:
            _write_f32(d / "idf.f32", self.backbone.idf)
            man["backbone"]["idf"] = {"file": "idf.f32", "shape": [dim]}
        man["partition"] = self.partition.to_dict()
        man["gate"] = None
        if self.gate is not None:
            man["gate"] = {**_write_model(d, "gate", self.gate.classifier), "threshold": self.gate.threshold, "log": self.gate.log}
        man["selector"] = None
        if self.selector is not None:
            entry = {
                "n_domains": self.selector.n_domains,
                "class_weights": [float(w) for w in self.selector.class_weights],
                "log": self.selector.log,
                "constant": self.selector.constant,
            }
            if self.selector.classifier is not None:
                entry.update(_write_model(d, "selector", self.selector.classifier))
            man["selector"] = entry
        experts = {}
        for k, exp in sorted(self.experts.items()):
            entry = {"trained": exp.trained, "log": exp.log}
            if exp.trained:
                entry.update(_write_model(d, f"expert_{k}", exp.classifier))
            experts[str(k)] = entry
        man["experts"] = experts
        man["calibration"] = self.calibration.to_dict()
        man["templates"] = None
        if self.templates is not None:
            self.templates.save(d / "templates.json")
            man["templates"] = "templates.json"
        (d / "manifest.json").write_text(json.dumps(man, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return d

    @classmethod
    def load(cls, directory: str | Path) -> ModelBundle:
        d = Path(directory)
        mpath = d / "manifest.json"
        if not mpath.exists():
            raise BundleError(f"no manifest.json in {d}")
        man = json.loads(mpath.read_text(encoding="utf-8"))
        if man.get("format") != BUNDLE_FORMAT:
            raise BundleError(f"unsupported bundle format {man.get('format')!r}")
        dim = int(man["featurizer"]["dim"])
        feat = HashingFeaturizer(dim, int(man["featurizer"]["hash_seed"]))
        idf = None
        if man["backbone"]["idf"] is not None:
            idf = _read_f32(d / man["backbone"]["idf"]["file"], dim)
        backbone = BackboneState(feat, idf, int(man["backbone"]["n_adapt_lines"]))
        partition = CertifiedPartition.from_dict(man["partition"])
        gate = None
        if man["gate"] is not None:
            gate = GateModel(_read_model(d, man["gate"]), man["gate"]["threshold"], man["gate"]["log"])
        selector = None
        if man["selector"] is not None:
            s = man["selector"]
            clf = None if s["constant"] else _read_model(d, s)
            selector = SelectorModel(clf, int(s["n_domains"]), np.asarray(s["class_weights"]), s["log"])
        experts = {}
        for k, e in man["experts"].items():
            experts[int(k)] = ExpertModel(int(k), _read_model(d, e) if e["trained"] else None, e["log"])
        templates = TemplateTable.load(d / man["templates"]) if man["templates"] else None
        calibration = CalibrationResult.from_dict(man["calibration"])
        keep = {k: v for k, v in man.items() if k not in _STRUCTURAL}
        return cls(partition, backbone, gate, selector, experts, calibration, templates, keep)


_STRUCTURAL = {"format", "featurizer", "backbone", "partition", "gate", "selector", "experts", "calibration", "templates"}


def _write_f32(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def _read_f32(path: Path, size: int) -> np.ndarray:
    if not path.exists():
        raise BundleError(f"missing weight file {path.name}")
    arr = np.fromfile(path, dtype="<f4")
    if arr.size != size:
        raise BundleError(f"{path.name}: expected {size} floats, found {arr.size}")
    return arr.astype(np.float32)


def _write_model(d: Path, name: str, clf: LinearClassifier) -> dict:
    """Weights row-major, then biases."""
    rows, dim = clf.weights.shape
    _write_f32(d / f"{name}.f32", np.concatenate([clf.weights.ravel(), clf.bias]))
    return {"file": f"{name}.f32", "rows": rows, "dim": dim}


def _read_model(d: Path, entry: dict) -> LinearClassifier:
    rows, dim = int(entry["rows"]), int(entry["dim"])
    flat = _read_f32(d / entry["file"], rows * dim + rows)
    return LinearClassifier(flat[: rows * dim].reshape(rows, dim), flat[rows * dim :])


# ---------------------------------------------------------------------------
# streaming
# ---------------------------------------------------------------------------


def _chunks(items: Iterable, size: int) -> Iterator[list]:
    it = iter(items)
    while chunk := list(islice(it, size)):
        yield chunk


def classify_stream(
    bundle: ModelBundle,
    lines: Iterable[str | tuple[int, str]],
    sink: Callable[[Verdict], None] | None = None,
    batch_size: int = 2048,
    jobs: int = 1,
) -> dict:
    """Classify a stream in order; ``lines`` are raw strings (ordinals count
    from 0) or ``(ordinal, raw)`` pairs.  Returns a summary."""
    names = bundle.partition.domain_names
    per_path = {p: 0 for p in PATH_NAMES}
    per_domain: dict[str, int] = {}
    anomalies = 0
    fallbacks = 0
    count = 0

    def pairs():
        for i, item in enumerate(lines):
            yield (i, item) if isinstance(item, str) else item

    def work(chunk):
        return chunk, bundle.classify_batch([r for _, r in chunk])

    def consume(chunk, res: BatchResult):
        nonlocal anomalies, fallbacks, count
        count += len(res)
        anomalies += int(res.anomaly.sum())
        fallbacks += res.selector_fallbacks
        for p, c in zip(*np.unique(res.path, return_counts=True)):
            per_path[PATH_NAMES[p]] += int(c)
        for d, c in zip(*np.unique(res.domain[res.path != PATH_UNIVERSAL], return_counts=True)):
            per_domain[names[d]] = per_domain.get(names[d], 0) + int(c)
        if sink is not None:
            for v in res.verdicts((o for o, _ in chunk), names):
                sink(v)

    start = time.perf_counter()
    chunks = _chunks(pairs(), batch_size)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            window: list = []
            for chunk in chunks:
                window.append(ex.submit(work, chunk))
                if len(window) >= 2 * jobs:
                    consume(*window.pop(0).result())
            for fut in window:
                consume(*fut.result())
    else:
        for chunk in chunks:
            consume(*work(chunk))
    elapsed = time.perf_counter() - start
    if fallbacks:
        logger.warning("%d lines fired the gate but the bundle has no selector; scored on the universal path", fallbacks)
    return {
        "count": count,
        "anomalies": anomalies,
        "per_path": per_path,
        "per_domain": dict(sorted(per_domain.items())),
        "selector_fallbacks": fallbacks,
        "seconds": elapsed,
        "lines_per_sec": count / elapsed if elapsed > 0 else float("inf"),
    }
