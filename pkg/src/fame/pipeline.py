"""Offline setup: parse, sample, partition, certify, train, calibrate."""

from __future__ import annotations

import json
import logging
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import TrainConfig, adapt_unsupervised
from .calibration import CalibrationResult, calibrate_threshold, calibrate_universal
from .config import PipelineConfig
from .corpus import Corpus, CorpusSplit, ingest, split_chronological
from .drain import DrainConfig, TemplateTable, parse_corpus
from .experts import ExpertModel, build_expert_dataset, train_experts
from .inference import ModelBundle
from .kshot import KShotSample, build_pu_pool, sample
from .partition import (
    CertifiedPartition,
    ProposedPartition,
    certify,
    import_partition,
    tfidf_grouping,
)
from .router import (
    GateModel,
    SelectorModel,
    build_gate_dataset,
    build_selector_dataset,
    train_gate,
    train_selector,
)

logger = logging.getLogger(__name__)


class SetupError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, SetupError):
            raise SetupError(self.name, str(exc) or exc_type.__name__) from exc
        return False


@dataclass
class SetupResult:
    config: PipelineConfig
    corpus: Corpus
    split: CorpusSplit
    offline: Corpus  # parsed
    table: TemplateTable
    sample: KShotSample
    pool: np.ndarray
    proposal: ProposedPartition
    bundle: ModelBundle
    report: dict = field(default_factory=dict)
    bundle_dir: Path | None = None

    @property
    def test(self) -> Corpus:
        return self.split.test_corpus(self.corpus)


def train_config(cfg: PipelineConfig, stage: str) -> TrainConfig:
    t = cfg.training
    return TrainConfig(t.gamma, t.alpha, t.learning_rate, t.batch_size, cfg.stage_seed(stage))


def load_corpus(cfg: PipelineConfig) -> Corpus:
    if not cfg.data.path:
        raise SetupError("ingest", "no dataset path configured (data.path or --input)")
    with _Stage("ingest"):
        return ingest(cfg.data.path, cfg.data.format)


def propose(cfg: PipelineConfig, table: TemplateTable, ks: KShotSample) -> ProposedPartition:
    mode = cfg.partition.mode
    if mode == "tfidf":
        return tfidf_grouping(table, ks, cfg.partition.link_threshold)
    if mode == "import":
        if not cfg.partition.path:
            raise ValueError("partition.mode is 'import' but partition.path is not set")
        p = Path(cfg.partition.path)
        if not p.exists():
            raise FileNotFoundError(f"partition file not found: {p}")
        return import_partition(p.read_text(encoding="utf-8"), table.event_ids)
    raise ValueError(f"unknown partition mode {mode!r}")


def calibrate(
    cfg: PipelineConfig,
    partition: CertifiedPartition,
    backbone,
    gate: GateModel | None,
    experts: dict[int, ExpertModel],
    offline: Corpus,
    ks: KShotSample,
) -> CalibrationResult:
    """Thresholds on the K-shot calibration split.

    A mixed domain is calibrated on the calibration lines of its own
    EventIDs; the universal model on the calibration lines the gate sends
    to the universal path.
    """
    c = cfg.calibration
    idx = ks.indices("calib")
    labels = offline.labels[idx]
    raws = [offline.raws[i] for i in idx]
    doms = np.array([partition.domain_of(offline.event_ids[i]) for i in idx], dtype=np.int64)
    X_adapt = backbone.transform(raws) if len(raws) else None
    tau, details = {}, {}
    for d in partition.expert_domains:
        if partition.is_pure(d):
            continue
        rows = np.flatnonzero(doms == d)
        scores = experts[d].score(X_adapt[rows]) if len(rows) else np.empty(0)
        res = calibrate_threshold(scores, labels[rows], c.recall_floor, c.n_percentiles)
        tau[d] = res.threshold
        details[partition.domain_names[d]] = {
            "lines": int(len(rows)),
            "anomalies": int((labels[rows] == 1).sum()),
            "threshold": res.threshold,
            "f1": None if np.isnan(res.f1) else res.f1,
            "recall": None if np.isnan(res.recall) else res.recall,
            "meets_floor": res.meets_floor,
            "fallback": res.fallback,
        }
    if gate is None or not len(raws):
        g = np.full(len(raws), 0.5)
        uni = np.arange(len(raws))
    else:
        g = gate.score(backbone.featurizer.transform(raws))
        uni = np.flatnonzero(g < 0.5)
    s_u = experts[0].score(X_adapt[uni]) if len(uni) else np.empty(0)
    grid = c.fusion_grid if gate is not None else [0.0]
    uc = calibrate_universal(s_u, g[uni], labels[uni], grid, c.recall_floor, c.n_percentiles)
    r = uc.threshold
    details["UNIVERSAL_NORMAL"] = {
        "lines": int(len(uni)),
        "anomalies": int((labels[uni] == 1).sum()),
        "threshold": r.threshold,
        "weight": uc.weight,
        "f1": None if np.isnan(r.f1) else r.f1,
        "recall": None if np.isnan(r.recall) else r.recall,
        "meets_floor": r.meets_floor,
        "fallback": r.fallback,
        "candidates_evaluated": uc.evaluated,
    }
    return CalibrationResult(tau, uc.weight, r.threshold, details)


def prepare(cfg: PipelineConfig, corpus: Corpus):
    """Split, parse the offline region, draw the K-shot sample and the PU pool."""
    with _Stage("split"):
        split = split_chronological(corpus, cfg.data.offline_fraction)
        offline = split.offline_corpus(corpus)
    with _Stage("parse"):
        d = cfg.drain
        table, offline = parse_corpus(offline, DrainConfig(d.similarity_threshold, d.tree_depth, d.max_children))
    with _Stage("sample"):
        ks = sample(offline, cfg.k)
        pool = build_pu_pool(offline, ks)
    return split, offline, table, ks, pool


def run_setup(
    cfg: PipelineConfig,
    corpus: Corpus | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
) -> SetupResult:
    """Build a model bundle; with ``out_dir`` it is written atomically
    (nothing is left behind if a stage fails)."""
    if corpus is None:
        corpus = load_corpus(cfg)
    split, offline, table, ks, pool = prepare(cfg, corpus)
    with _Stage("partition"):
        proposal = propose(cfg, table, ks)
    with _Stage("certify"):
        p = cfg.partition
        partition = certify(
            proposal, ks, pool, offline, table, p.distinctness_threshold, p.pool_sample, cfg.stage_seed("certify")
        )
    with _Stage("adapt"):
        universal_pool = [i for i in pool.tolist() if partition.domain_of(offline.event_ids[i]) == 0]
        backbone = adapt_unsupervised(
            [offline.raws[i] for i in universal_pool],
            cfg.backbone.adapt_cap,
            dim=cfg.backbone.dim,
            hash_seed=cfg.stage_seed("hash"),
            seed=cfg.stage_seed("adapt"),
        )
    feat = backbone.featurizer
    r = cfg.router
    gate: GateModel | None = None
    selector: SelectorModel | None = None
    gate_info = selector_info = None
    if partition.n_domains > 1:
        with _Stage("gate"):
            gds = build_gate_dataset(offline, partition, r.subsample_ratio, r.val_fraction, cfg.stage_seed("gate_subsample"))
            Xg = feat.transform([offline.raws[i] for i in gds.indices])
            gate = train_gate(gds, Xg, train_config(cfg, "gate"), r.gate_recall_target, r.max_epochs)
            gate_info = {"lines": len(gds), "expert_lines": int(gds.labels.sum()), **gate.log}
        with _Stage("selector"):
            sds = build_selector_dataset(offline, partition, r.val_fraction)
            Xs = feat.transform([offline.raws[i] for i in sds.indices])
            selector = train_selector(
                sds,
                Xs,
                partition.n_domains - 1,
                train_config(cfg, "selector"),
                r.selector_accuracy_target,
                r.selector_patience,
                r.max_epochs,
            )
            selector_info = {"lines": len(sds), **selector.log}
    else:
        logger.warning("no failure domain certified; every line takes the universal path")
    with _Stage("experts"):
        e = cfg.experts
        datasets = {}
        for dom in [0] + partition.expert_domains:
            if dom and partition.is_pure(dom):
                continue
            cap = e.universal_negative_cap if dom == 0 else e.mixed_negative_cap
            datasets[dom] = build_expert_dataset(
                dom, ks, pool, offline, partition, cap, cfg.stage_seed(f"expert_negatives_{dom}")
            )
        experts = train_experts(
            datasets,
            backbone,
            offline,
            partition,
            jobs=jobs,
            seeds={dom: cfg.stage_seed(f"expert_{dom}") for dom in datasets},
            config=train_config(cfg, "expert"),
            small_dataset_lines=e.small_dataset_lines,
            fixed_steps=e.fixed_steps,
            check_every=e.check_every,
            patience=e.patience,
            max_epochs=e.max_epochs,
            val_fraction=e.val_fraction,
        )
    with _Stage("calibrate"):
        calibration = calibrate(cfg, partition, backbone, gate, experts, offline, ks)

    manifest = {
        "package_version": __version__,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "root_seed": cfg.seed,
    }
    bundle = ModelBundle(partition, backbone, gate, selector, experts, calibration, table, manifest)
    report = {
        "config_hash": cfg.config_hash(),
        "corpus": {"lines": len(corpus), "offline": len(split.offline), "test": len(split.test)},
        "templates": len(table),
        "k": cfg.k,
        "labels": ks.n_labels,
        "pu_pool": int(len(pool)),
        "domains": [
            {"index": i, "name": n, "rho": rh, "event_ids": len(partition.members(i))}
            for i, (n, rh) in enumerate(zip(partition.domain_names, partition.rho))
        ],
        "certification_notes": [list(n) for n in partition.notes],
        "gate": gate_info,
        "selector": selector_info,
        "experts": {
            str(k): {"positives": len(ds.positives), "negatives": len(ds.negatives), **experts[k].log}
            for k, ds in datasets.items()
        },
        "calibration": calibration.to_dict(),
    }
    result = SetupResult(cfg, corpus, split, offline, table, ks, pool, proposal, bundle, report)
    if out_dir is not None:
        with _Stage("write"):
            result.bundle_dir = write_bundle(bundle, report, Path(out_dir))
    return result


def write_bundle(bundle: ModelBundle, report: dict, out: Path) -> Path:
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        bundle.save(tmp)
        (tmp / "setup_report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        if out.exists():
            shutil.rmtree(out)
        tmp.chmod(0o755)  # mkdtemp creates 0700
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out
