"""Per-domain anomaly experts.

One binary classifier per mixed domain plus one for UNIVERSAL_NORMAL, all on
the shared adapted backbone.  Pure-anomaly domains get no model: routing
alone decides them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .backbone import (
    BackboneState,
    LinearClassifier,
    Schedule,
    TrainConfig,
    TrainingError,
    train,
)
from .corpus import Corpus
from .kshot import KShotSample
from .metrics import auroc
from .partition import CertifiedPartition
from .router import validation_mask

logger = logging.getLogger(__name__)


class ExpertError(ValueError):
    pass


@dataclass
class ExpertDataset:
    domain: int
    positives: np.ndarray  # offline record indices
    negatives: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate([self.positives, self.negatives])

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate(
            [np.ones(len(self.positives), np.int64), np.zeros(len(self.negatives), np.int64)]
        )

    def __len__(self) -> int:
        return len(self.positives) + len(self.negatives)


@dataclass
class ExpertModel:
    domain: int
    classifier: LinearClassifier | None
    log: dict = field(default_factory=dict)

    @property
    def trained(self) -> bool:
        return self.classifier is not None

    def score(self, X) -> np.ndarray:
        if self.classifier is None:
            raise ExpertError(f"domain {self.domain} is pure-anomaly and has no expert")
        return self.classifier.predict_proba(X)


def build_expert_dataset(
    domain: int,
    sample: KShotSample,
    pool: np.ndarray,
    offline: Corpus,
    partition: CertifiedPartition,
    negative_cap: float,
    seed: int = 0,
) -> ExpertDataset:
    """Train-split K-shot anomalies of the domain vs. a capped sample of the
    universal-EventID part of the PU pool.  The universal expert takes the
    train-split anomalies of every domain."""
    if partition.rho[domain] is not None and partition.is_pure(domain):
        raise ExpertError(f"domain {domain} is pure-anomaly; it has no expert")
    train_anom = sample.anomaly_indices(offline, "train")
    eids = offline.event_ids
    if domain == 0:
        positives = train_anom
    else:
        positives = np.array([i for i in train_anom if partition.domain_of(eids[i]) == domain], dtype=np.int64)
        if len(positives) == 0:
            raise ExpertError(
                f"mixed domain {partition.domain_names[domain]} has no train-split anomalies"
            )
    pool = np.asarray(pool, dtype=np.int64)
    universal_pool = pool[[partition.domain_of(eids[i]) == 0 for i in pool]] if len(pool) else pool
    cap = int(negative_cap * len(positives))
    if len(universal_pool) > cap:
        rng = np.random.default_rng(seed)
        negatives = np.sort(rng.choice(universal_pool, size=cap, replace=False))
    else:
        negatives = universal_pool
    return ExpertDataset(domain, np.sort(positives).astype(np.int64), negatives.astype(np.int64))


def _ordered(dataset: ExpertDataset) -> tuple[np.ndarray, np.ndarray]:
    idx = dataset.indices
    y = dataset.labels
    order = np.argsort(idx, kind="stable")
    return idx[order], y[order]


def train_expert(
    dataset: ExpertDataset,
    backbone: BackboneState,
    offline: Corpus,
    config: TrainConfig = TrainConfig(),
    small_dataset_lines: int = 4_000,
    fixed_steps: int = 500,
    check_every: int = 50,
    patience: int = 3,
    max_epochs: int = 20,
    val_fraction: float = 0.1,
) -> ExpertModel:
    idx, y = _ordered(dataset)
    if len(np.unique(y)) < 2:
        raise ExpertError(f"expert dataset for domain {dataset.domain} has a single class")
    val = validation_mask(y, val_fraction)
    X = backbone.transform([offline.raws[i] for i in idx])
    Xt, Xv, yv = X[~val], X[val], y[val]

    def val_auroc(m: LinearClassifier) -> float | None:
        return auroc(m.predict_proba(Xv), yv) if val.any() else None

    if len(dataset) < small_dataset_lines:
        schedule = Schedule(max_epochs=None, max_steps=fixed_steps, check_every=check_every)
        regime = "fixed_steps"
    else:
        schedule = Schedule(max_epochs=max_epochs, patience=patience)
        regime = "epochs"
    try:
        clf, log = train(Xt, y[~val], config=config, schedule=schedule, validate=val_auroc)
    except TrainingError as exc:
        raise ExpertError(f"expert for domain {dataset.domain}: {exc}") from exc
    info = log.to_dict()
    info.update(regime=regime, positives=len(dataset.positives), negatives=len(dataset.negatives))
    return ExpertModel(dataset.domain, clf, info)


def train_experts(
    datasets: dict[int, ExpertDataset],
    backbone: BackboneState,
    offline: Corpus,
    partition: CertifiedPartition,
    jobs: int = 1,
    seeds: dict[int, int] | None = None,
    **kwargs,
) -> dict[int, ExpertModel]:
    """Universal and mixed experts from ``datasets``; pure domains get placeholders."""
    base: TrainConfig = kwargs.pop("config", TrainConfig())

    def fit(d: int) -> ExpertModel:
        cfg = TrainConfig(base.gamma, base.alpha, base.learning_rate, base.batch_size, (seeds or {}).get(d, base.seed))
        return train_expert(datasets[d], backbone, offline, cfg, **kwargs)

    order = sorted(datasets)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            models = dict(zip(order, ex.map(fit, order)))
    else:
        models = {d: fit(d) for d in order}
    for d in partition.expert_domains:
        if partition.is_pure(d):
            models[d] = ExpertModel(d, None, {"pure": True})
    return dict(sorted(models.items()))

