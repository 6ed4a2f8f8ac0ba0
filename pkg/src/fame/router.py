"""Two-stage router: a binary gate (universal vs. expert path) and a
class-weighted multiclass selector over the expert domains."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .backbone import (
    HashingFeaturizer,
    LinearClassifier,
    Schedule,
    TrainConfig,
    TrainingError,
    train,
)
from .corpus import Corpus
from .partition import CertifiedPartition

logger = logging.getLogger(__name__)

GATE_THRESHOLD = 0.5


class RouterError(ValueError):
    pass


@dataclass
class RouterDataset:
    """Offline record indices (ascending), integer targets and a validation mask."""

    indices: np.ndarray
    labels: np.ndarray
    val_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def validation_mask(labels: np.ndarray, fraction: float = 0.1) -> np.ndarray:
    """Last ``fraction`` of each class (by position, i.e. by ordinal).

    Classes with fewer than two members stay entirely in training.
    """
    mask = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        pos = np.flatnonzero(labels == c)
        if len(pos) < 2:
            continue
        n_val = max(1, int(fraction * len(pos)))
        mask[pos[-n_val:]] = True
    return mask


def _domain_codes(offline: Corpus, partition: CertifiedPartition) -> np.ndarray:
    pi = partition.pi
    return np.fromiter((pi.get(e, 0) for e in offline.event_ids), dtype=np.int64, count=len(offline))


# ---------------------------------------------------------------------------
# gate
# ---------------------------------------------------------------------------


def build_gate_dataset(
    offline: Corpus,
    partition: CertifiedPartition,
    subsample_ratio: float = 3.0,
    val_fraction: float = 0.1,
    seed: int = 0,
) -> RouterDataset:
    domains = _domain_codes(offline, partition)
    expert = np.flatnonzero(domains != 0)
    universal = np.flatnonzero(domains == 0)
    if len(expert) == 0:
        raise RouterError("no expert-domain lines: no failure domain was certified")
    cap = int(subsample_ratio * len(expert))
    if len(universal) > cap:
        rng = np.random.default_rng(seed)
        universal = np.sort(rng.choice(universal, size=cap, replace=False))
    idx = np.sort(np.concatenate([expert, universal]))
    labels = (domains[idx] != 0).astype(np.int64)
    return RouterDataset(idx, labels, validation_mask(labels, val_fraction))


@dataclass
class GateModel:
    classifier: LinearClassifier
    threshold: float = GATE_THRESHOLD
    log: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.threshold != GATE_THRESHOLD:
            raise RouterError("the gate threshold is fixed at 0.5")

    def score(self, X) -> np.ndarray:
        return self.classifier.predict_proba(X)


def _recall_at_half(model: LinearClassifier, X, y) -> float | None:
    pos = y == 1
    if not pos.any():
        return None
    return float(np.mean(model.predict_proba(X[pos]) >= GATE_THRESHOLD))


def train_gate(
    dataset: RouterDataset,
    X,
    config: TrainConfig = TrainConfig(),
    recall_target: float = 0.95,
    max_epochs: int = 20,
) -> GateModel:
    """``X`` holds the plain features of ``dataset.indices`` rows, in order."""
    val = dataset.val_mask
    if not (dataset.labels[val] == 1).any():
        raise RouterError("gate validation split has no expert-domain lines")
    y = dataset.labels
    Xt, Xv = X[~val], X[val]
    clf, log = train(
        Xt,
        y[~val],
        config=config,
        schedule=Schedule(max_epochs=max_epochs, target=recall_target),
        validate=lambda m: _recall_at_half(m, Xv, y[val]),
    )
    if not log.target_reached:
        logger.warning("gate recall target %.2f not reached (best %.4f)", recall_target, log.best_metric or 0.0)
    info = log.to_dict()
    info["target_reached"] = log.target_reached
    return GateModel(clf, GATE_THRESHOLD, info)


# ---------------------------------------------------------------------------
# selector
# ---------------------------------------------------------------------------


def class_weights(counts) -> np.ndarray:
    """w_c = N_total / ((C-1) * count_c) over the non-universal domains."""
    counts = np.asarray(counts, dtype=np.float64)
    if len(counts) == 0:
        raise RouterError("class weights need at least one domain")
    if np.any(counts <= 0):
        raise RouterError("every expert domain needs at least one line")
    return counts.sum() / (len(counts) * counts)


def build_selector_dataset(
    offline: Corpus, partition: CertifiedPartition, val_fraction: float = 0.1
) -> RouterDataset:
    """All expert-domain lines; target j stands for domain j+1."""
    domains = _domain_codes(offline, partition)
    idx = np.flatnonzero(domains != 0)
    if len(idx) == 0:
        raise RouterError("no expert-domain lines: no failure domain was certified")
    labels = domains[idx] - 1
    return RouterDataset(idx, labels, validation_mask(labels, val_fraction))


@dataclass
class SelectorModel:
    """``classifier`` is None for the constant selector of a one-domain partition."""

    classifier: LinearClassifier | None
    n_domains: int
    class_weights: np.ndarray
    log: dict = field(default_factory=dict)

    @property
    def constant(self) -> bool:
        return self.classifier is None

    def distribution(self, X) -> np.ndarray:
        if self.classifier is None:
            return np.ones((X.shape[0], 1))
        return self.classifier.predict_proba(X)

    def predict(self, X) -> np.ndarray:
        """Domain indices (1-based); argmax ties go to the lowest index."""
        if self.classifier is None:
            return np.ones(X.shape[0], dtype=np.int64)
        return np.argmax(self.classifier.logits(X), axis=1).astype(np.int64) + 1


def train_selector(
    dataset: RouterDataset,
    X,
    n_domains: int,
    config: TrainConfig = TrainConfig(),
    accuracy_target: float = 0.80,
    patience: int = 1,
    max_epochs: int = 20,
) -> SelectorModel:
    """``n_domains`` counts expert domains only."""
    counts = np.bincount(dataset.labels, minlength=n_domains)
    weights = class_weights(counts)
    if n_domains == 1:
        return SelectorModel(None, 1, weights, {"constant": True})
    val = dataset.val_mask
    y = dataset.labels
    if not val.any():
        raise RouterError("selector validation split is empty")
    Xt, Xv, yv = X[~val], X[val], y[val]

    def accuracy(m: LinearClassifier) -> float:
        return float(np.mean(np.argmax(m.logits(Xv), axis=1) == yv))

    try:
        clf, log = train(
            Xt,
            y[~val],
            n_classes=n_domains,
            class_weight=weights,
            config=config,
            schedule=Schedule(max_epochs=max_epochs, target=accuracy_target, patience=patience),
            validate=accuracy,
        )
    except TrainingError as exc:
        raise RouterError(f"selector training failed: {exc}") from exc
    return SelectorModel(clf, n_domains, weights, log.to_dict())


# ---------------------------------------------------------------------------
# routing
# ---------------------------------------------------------------------------


def route_scores(gate_scores: np.ndarray, selected: np.ndarray | None) -> np.ndarray:
    """0 (universal) where g < 0.5, else the selected domain."""
    gate_scores = np.asarray(gate_scores)
    if selected is None:
        return np.zeros(len(gate_scores), dtype=np.int64)
    return np.where(gate_scores < GATE_THRESHOLD, 0, selected).astype(np.int64)


def route(gate: GateModel, selector: SelectorModel | None, X) -> tuple[np.ndarray, np.ndarray]:
    """(domain index per row, gate score per row) for plain-feature rows ``X``."""
    g = gate.score(X)
    selected = selector.predict(X) if selector is not None else None
    return route_scores(g, selected), g


def route_line(gate: GateModel, selector: SelectorModel | None, featurizer: HashingFeaturizer, raw: str) -> int:
    return int(route(gate, selector, featurizer.transform([raw]))[0][0])
