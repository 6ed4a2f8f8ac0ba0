"""Test-split evaluation, baselines, unseen-EventID analysis and K sweeps.

Baselines share the pipeline's chronological split and K-shot sample, and
every threshold is calibrated on the same K-shot calibration split:

* ``eventid_majority``: per-EventID anomaly fraction among train-split
  labels (stand-in for a one-hot EventID forest).
* ``tfidf_centroid``: cosine distance to the PU-pool centroid in TF-IDF
  word-bigram space (stand-in for an isolation forest).
* ``global_linear``: one linear model over the backbone features, trained
  on all train-split labels with plain cross-entropy (stand-in for a
  sentence-embedding logistic regression).
"""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

from .backbone import HashingFeaturizer, Schedule, TrainConfig, train
from .calibration import calibrate_threshold
from .corpus import Corpus
from .drain import TemplateTable
from .inference import (
    PATH_MIXED,
    PATH_NAMES,
    PATH_PURE,
    PATH_UNIVERSAL,
    BatchResult,
    ModelBundle,
)
from .kshot import labeling_cost_report
from .metrics import MetricsReport, auroc, compute_metrics, pct, prf
from .router import validation_mask

BASELINE_NOTES = {
    "eventid_majority": "EventID majority vote from K-shot labels (substitutes Drain + random forest)",
    "tfidf_centroid": "TF-IDF word-bigram distance to the PU-pool centroid (substitutes TF-IDF + isolation forest)",
    "global_linear": "single linear model on hashed n-grams, cross-entropy (substitutes SBERT + logistic regression)",
}


# ---------------------------------------------------------------------------
# pipeline evaluation
# ---------------------------------------------------------------------------


def auroc_scores(result: BatchResult) -> np.ndarray:
    """Continuous scores for AUROC; pure-path lines count as 1.0."""
    return np.where(result.path == PATH_PURE, 1.0, result.score)


def _breakdown(mask_by_key: dict, pred, scores, truth) -> dict:
    out = {}
    for key, m in mask_by_key.items():
        if not m.any():
            continue
        tp, fp, fn, tn = _counts(pred[m], truth[m])
        p, r, f = prf(tp, fp, fn)
        out[key] = {
            "lines": int(m.sum()),
            "counts": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
            "precision": p,
            "recall": r,
            "f1": f,
            "auroc": auroc(scores[m], truth[m]),
        }
    return out


def _counts(pred, truth):
    pred = np.asarray(pred, bool)
    truth = np.asarray(truth, bool)
    return (
        int(np.sum(pred & truth)),
        int(np.sum(pred & ~truth)),
        int(np.sum(~pred & truth)),
        int(np.sum(~pred & ~truth)),
    )


def classify_corpus(bundle: ModelBundle, corpus: Corpus, batch_size: int = 8192) -> BatchResult:
    parts = [bundle.classify_batch(list(corpus.raws[s : s + batch_size])) for s in range(0, len(corpus), batch_size)]
    if not parts:
        return bundle.classify_batch([])
    return BatchResult(
        np.concatenate([p.anomaly for p in parts]),
        np.concatenate([p.path for p in parts]),
        np.concatenate([p.domain for p in parts]),
        np.concatenate([p.score for p in parts]),
        sum(p.selector_fallbacks for p in parts),
    )


def evaluate_result(result: BatchResult, truth: np.ndarray, domain_names: Sequence[str]) -> MetricsReport:
    truth = np.asarray(truth)
    scores = auroc_scores(result)
    report = compute_metrics(result.anomaly, scores, truth)
    report.per_path = _breakdown(
        {PATH_NAMES[p]: result.path == p for p in (PATH_UNIVERSAL, PATH_PURE, PATH_MIXED)},
        result.anomaly,
        scores,
        truth,
    )
    report.per_domain = _breakdown(
        {name: result.domain == d for d, name in enumerate(domain_names)},
        result.anomaly,
        scores,
        truth,
    )
    return report


def evaluate(bundle: ModelBundle, test: Corpus) -> tuple[MetricsReport, BatchResult]:
    result = classify_corpus(bundle, test)
    return evaluate_result(result, test.labels, bundle.partition.domain_names), result


def unseen_eventid_analysis(result: BatchResult, test: Corpus, table: TemplateTable) -> dict:
    """Detection rate of test anomalies whose template was never seen offline."""
    truth = np.asarray(test.labels) == 1
    unseen = np.fromiter((table.match_only(r) is None for r in test.raws), dtype=bool, count=len(test))
    anomalies = int(truth.sum())
    ua = truth & unseen
    sa = truth & ~unseen

    def rate(mask):
        return float(result.anomaly[mask].mean()) if mask.any() else None

    return {
        "test_lines": len(test),
        "unseen_lines": int(unseen.sum()),
        "anomalies": anomalies,
        "unseen_anomalies": int(ua.sum()),
        "unseen_fraction": (int(ua.sum()) / anomalies) if anomalies else None,
        "unseen_recall": rate(ua),
        "seen_recall": rate(sa),
        "unseen_universal_fraction": float((result.path[ua] == PATH_UNIVERSAL).mean()) if ua.any() else None,
    }


def domain_mapping(offline: Corpus, bundle: ModelBundle, truth_domains: Sequence[str | None]) -> dict[int, str | None]:
    """Majority generator domain over the offline lines of each certified domain."""
    part = bundle.partition
    votes: dict[int, dict] = {}
    for i, e in enumerate(offline.event_ids):
        d = part.domain_of(e)
        if d:
            v = votes.setdefault(d, {})
            t = truth_domains[i]
            v[t] = v.get(t, 0) + 1
    return {d: max(sorted(v.items(), key=lambda kv: str(kv[0])), key=lambda kv: kv[1])[0] for d, v in votes.items()}


def label_agreement(result: BatchResult, truth_domains: Sequence[str | None], mapping: dict[int, str | None]) -> dict:
    """Share of mixed-path detections whose domain label matches the planted domain."""
    hits = np.flatnonzero((result.path == PATH_MIXED) & result.anomaly)
    if len(hits) == 0:
        return {"detections": 0, "correct": 0, "agreement": None}
    correct = sum(1 for i in hits.tolist() if mapping.get(int(result.domain[i])) == truth_domains[i])
    return {"detections": int(len(hits)), "correct": int(correct), "agreement": correct / len(hits)}


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


@dataclass
class BaselineResult:
    name: str
    threshold: float
    pred: np.ndarray
    scores: np.ndarray
    metrics: MetricsReport
    info: dict = field(default_factory=dict)


def _finish(name, calib_scores, calib_labels, test_scores, test_labels, recall_floor, n_percentiles, info=None):
    cal = calibrate_threshold(calib_scores, calib_labels, recall_floor, n_percentiles)
    pred = test_scores >= cal.threshold
    m = compute_metrics(pred, test_scores, test_labels)
    return BaselineResult(name, cal.threshold, pred, test_scores, m, {"note": BASELINE_NOTES[name], **(info or {})})


def eventid_majority(offline, table, ks, test, recall_floor=0.9, n_percentiles=1000) -> BaselineResult:
    frac: dict[str, float] = {}
    labels = offline.labels
    for eid, s in ks.per_event.items():
        if len(s.train):
            frac[eid] = float(np.mean(labels[s.train] == 1))
    calib = ks.indices("calib")
    cs = np.array([frac.get(offline.event_ids[i], 0.0) for i in calib])
    test_eids = [table.match_only(r) for r in test.raws]
    ts = np.array([frac.get(e, 0.0) if e is not None else 0.0 for e in test_eids])
    return _finish("eventid_majority", cs, labels[calib], ts, test.labels, recall_floor, n_percentiles)


def tfidf_centroid(offline, pool, ks, test, recall_floor=0.9, n_percentiles=1000, cap=50_000, seed=0) -> BaselineResult:
    pool = np.asarray(pool)
    if len(pool) > cap:
        pool = np.sort(np.random.default_rng(seed).choice(pool, size=cap, replace=False))
    vec = TfidfVectorizer(ngram_range=(2, 2), token_pattern=r"\S+", lowercase=True)
    P = vec.fit_transform([offline.raws[i] for i in pool])
    centroid = np.asarray(P.mean(axis=0)).ravel()
    norm = np.linalg.norm(centroid)
    centroid = centroid / norm if norm > 0 else centroid

    def dist(texts):
        X = vec.transform(texts)
        return 1.0 - np.asarray(X @ centroid).ravel()

    calib = ks.indices("calib")
    cs = dist([offline.raws[i] for i in calib])
    ts = dist(list(test.raws))
    return _finish("tfidf_centroid", cs, offline.labels[calib], ts, test.labels, recall_floor, n_percentiles)


def global_linear(
    offline,
    ks,
    test,
    featurizer: HashingFeaturizer,
    config: TrainConfig = TrainConfig(),
    recall_floor=0.9,
    n_percentiles=1000,
    small_dataset_lines=4_000,
    fixed_steps=500,
    check_every=50,
    patience=3,
    max_epochs=20,
) -> BaselineResult:
    idx = ks.indices("train")
    y = offline.labels[idx]
    X = featurizer.transform([offline.raws[i] for i in idx])
    val = validation_mask(y, 0.1)
    cfg = TrainConfig(0.0, 0.5, config.learning_rate, config.batch_size, config.seed)
    if len(idx) < small_dataset_lines:
        schedule = Schedule(max_epochs=None, max_steps=fixed_steps, check_every=check_every)
    else:
        schedule = Schedule(max_epochs=max_epochs, patience=patience)
    Xv, yv = X[val], y[val]
    clf, log = train(X[~val], y[~val], config=cfg, schedule=schedule, validate=lambda m: auroc(m.predict_proba(Xv), yv))
    calib = ks.indices("calib")
    cs = clf.predict_proba(featurizer.transform([offline.raws[i] for i in calib]))
    ts = clf.predict_proba(featurizer.transform(list(test.raws)))
    return _finish(
        "global_linear", cs, offline.labels[calib], ts, test.labels, recall_floor, n_percentiles, {"train": log.to_dict()}
    )


def run_baselines(setup, which=("eventid_majority", "tfidf_centroid", "global_linear")) -> dict[str, BaselineResult]:
    """Baselines over the splits and K-shot sample of a :class:`SetupResult`."""
    cfg = setup.config
    c = cfg.calibration
    test = setup.test
    out = {}
    if "eventid_majority" in which:
        out["eventid_majority"] = eventid_majority(setup.offline, setup.table, setup.sample, test, c.recall_floor, c.n_percentiles)
    if "tfidf_centroid" in which:
        out["tfidf_centroid"] = tfidf_centroid(
            setup.offline, setup.pool, setup.sample, test, c.recall_floor, c.n_percentiles, seed=cfg.stage_seed("tfidf_baseline")
        )
    if "global_linear" in which:
        from .pipeline import train_config

        e = cfg.experts
        out["global_linear"] = global_linear(
            setup.offline,
            setup.sample,
            test,
            setup.bundle.featurizer,
            train_config(cfg, "global_linear"),
            c.recall_floor,
            c.n_percentiles,
            e.small_dataset_lines,
            e.fixed_steps,
            e.check_every,
            e.patience,
            e.max_epochs,
        )
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

COLUMNS = ("method", "precision", "recall", "f1", "auroc")


def method_rows(pipeline: MetricsReport, baselines: dict[str, BaselineResult]) -> list[dict]:
    rows = [{"method": "fame", **_metric_values(pipeline)}]
    for name, b in baselines.items():
        rows.append({"method": name, **_metric_values(b.metrics)})
    return rows


def _metric_values(m: MetricsReport) -> dict:
    return {"precision": m.precision, "recall": m.recall, "f1": m.f1, "auroc": m.auroc}


def render_table(rows: list[dict]) -> str:
    width = max(len(r["method"]) for r in rows) + 2
    lines = [f"{'Method':<{width}}{'Precision':>10}{'Recall':>10}{'F1':>10}{'AUROC':>10}"]
    for r in rows:
        lines.append(f"{r['method']:<{width}}" + "".join(f"{pct(r[c]):>10}" for c in COLUMNS[1:]))
    return "\n".join(lines)


def rows_to_csv(rows: list[dict], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in columns})
    return buf.getvalue()


def eval_report(setup, pipeline: MetricsReport, result: BatchResult, baselines: dict[str, BaselineResult]) -> dict:
    pipeline.unseen = unseen_eventid_analysis(result, setup.test, setup.table)
    return {
        "config_hash": setup.config.config_hash(),
        "k": setup.config.k,
        "test_lines": len(setup.test),
        "pipeline": pipeline.to_dict(),
        "baselines": {n: {**b.metrics.to_dict(), "threshold": b.threshold, "note": b.info["note"]} for n, b in baselines.items()},
        "table": method_rows(pipeline, baselines),
    }


# ---------------------------------------------------------------------------
# K sweep
# ---------------------------------------------------------------------------


def k_sweep(corpus: Corpus, cfg, ks: Sequence[int], seeds: Sequence[int], baselines: bool = False) -> dict:
    """Full pipeline per (k, seed); mean and sample std per k (std needs >= 2 seeds)."""
    from .pipeline import run_setup

    if not ks:
        raise ValueError("k grid is empty")
    cells = []
    offline_cost = None
    for k in ks:
        for seed in seeds:
            run = run_setup(cfg.replace(k=int(k), seed=int(seed)), corpus)
            report, _ = evaluate(run.bundle, run.test)
            cell = {"k": int(k), "seed": int(seed), "labels": run.sample.n_labels, **_metric_values(report)}
            if baselines:
                for name, b in run_baselines(run).items():
                    cell[f"{name}_f1"] = b.metrics.f1
            cells.append(cell)
            if offline_cost is None:
                offline_cost = run.offline
    summary = []
    for k in ks:
        rows = [c for c in cells if c["k"] == k]
        entry = {"k": int(k), "seeds": len(rows), "labels": rows[0]["labels"]}
        for m in ("precision", "recall", "f1", "auroc"):
            vals = np.array([r[m] for r in rows if r[m] is not None], dtype=float)
            entry[f"{m}_mean"] = float(vals.mean()) if len(vals) else None
            entry[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) >= 2 else None
        summary.append(entry)
    cost = labeling_cost_report(offline_cost, [int(k) for k in ks])
    return {
        "cells": cells,
        "summary": summary,
        "cost": [
            {"k": r.k, "labels": r.labels, "offline_lines": r.offline_lines, "reduction": r.reduction, "reduction_rounded": r.reduction_rounded}
            for r in cost
        ],
    }


def to_json(doc) -> str:
    def default(o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        raise TypeError(type(o).__name__)

    return json.dumps(doc, indent=1, sort_keys=True, default=default, allow_nan=False)
