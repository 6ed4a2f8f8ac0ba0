"""Reference text-classifier backbone.

Every trained component (gate, selector, experts) goes through the same four
entry points, which is where a transformer plugin would attach instead:

``featurize``            raw text -> sparse vector
``adapt_unsupervised``   unsupervised adaptation on PU-normal lines (shared
                         by all experts); a transformer plugin would run
                         masked-language-model pre-training here and freeze
                         its lower layers before fine-tuning
``train``                supervised focal-loss fitting
``score``                probability (binary) or class distribution

The reference implementation hashes word unigrams, word bigrams and byte
trigrams into ``dim`` buckets and fits linear models by mini-batch gradient
descent.
"""

from __future__ import annotations

import logging
import zlib
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

DEFAULT_DIM = 2**18
PROB_EPS = 1e-7
LOGIT_CLIP = 16.0

_M1 = np.uint32(0x85EBCA6B)
_M2 = np.uint32(0xC2B2AE35)


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def _fmix32(h: np.ndarray) -> np.ndarray:
    h = h ^ (h >> np.uint32(16))
    h = h * _M1
    h = h ^ (h >> np.uint32(13))
    h = h * _M2
    return h ^ (h >> np.uint32(16))


def _l2_normalize(X: sp.csr_matrix) -> sp.csr_matrix:
    sq = X.data * X.data
    row_nnz = np.diff(X.indptr)
    norms = np.zeros(X.shape[0])
    nonempty = row_nnz > 0
    if sq.size:
        norms[nonempty] = np.sqrt(np.add.reduceat(sq, X.indptr[:-1][nonempty]))
    scale = np.repeat(np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0), row_nnz)
    X.data = X.data * scale
    return X


@dataclass(frozen=True)
class HashingFeaturizer:
    """Hashed n-gram counts; deterministic for a fixed (dim, seed)."""

    dim: int = DEFAULT_DIM
    seed: int = 0

    def _salts(self) -> tuple[int, int, int]:
        s = self.seed & 0xFFFFFFFF
        return s, zlib.crc32(b"bigram", s), zlib.crc32(b"trigram", s)

    def ngram_buckets(self, text: str) -> dict[str, list[int]]:
        """Bucket of every n-gram of one text, grouped by family."""
        words = text.lower().encode("utf-8").split()
        s_uni, s_bi, s_tri = self._salts()
        padded = b" " + b" ".join(words) + b" " if words else b""
        buf = np.frombuffer(padded, dtype=np.uint8).astype(np.uint32)
        tri = []
        if buf.size >= 3:
            codes = (buf[:-2] << np.uint32(16)) | (buf[1:-1] << np.uint32(8)) | buf[2:]
            tri = (_fmix32(codes ^ np.uint32(s_tri)) % np.uint32(self.dim)).tolist()
        return {
            "unigram": [zlib.crc32(w, s_uni) % self.dim for w in words],
            "bigram": [zlib.crc32(a + b" " + b, s_bi) % self.dim for a, b in zip(words, words[1:])],
            "trigram": tri,
        }

    def counts(self, texts: Sequence[str]) -> sp.csr_matrix:
        n = len(texts)
        dim = self.dim
        s_uni, s_bi, s_tri = self._salts()
        crc = zlib.crc32
        rows: list[int] = []
        cols: list[int] = []
        padded: list[bytes] = []
        for r, text in enumerate(texts):
            b = text.lower().encode("utf-8")
            words = b.split()
            for w in words:
                cols.append(crc(w, s_uni) % dim)
            for a, c in zip(words, words[1:]):
                cols.append(crc(a + b" " + c, s_bi) % dim)
            rows.extend([r] * (2 * len(words) - 1 if words else 0))
            padded.append(b" " + b" ".join(words) + b" " if words else b"")

        lens = np.fromiter((len(p) for p in padded), dtype=np.int64, count=n)
        buf = np.frombuffer(b"".join(padded), dtype=np.uint8).astype(np.uint32)
        if buf.size >= 3:
            line_of = np.repeat(np.arange(n, dtype=np.int64), lens)
            ok = line_of[:-2] == line_of[2:]
            tri = (buf[:-2] << np.uint32(16)) | (buf[1:-1] << np.uint32(8)) | buf[2:]
            tri = tri[ok]
            tri_cols = (_fmix32(tri ^ np.uint32(s_tri)) % np.uint32(dim)).astype(np.int64)
            tri_rows = line_of[:-2][ok]
        else:
            tri_cols = tri_rows = np.empty(0, dtype=np.int64)

        all_rows = np.concatenate([np.asarray(rows, dtype=np.int64), tri_rows])
        all_cols = np.concatenate([np.asarray(cols, dtype=np.int64), tri_cols])
        data = np.ones(all_rows.size, dtype=np.float64)
        X = sp.csr_matrix((data, (all_rows, all_cols)), shape=(n, dim))
        X.sum_duplicates()
        X.sort_indices()
        return X

    def transform(self, texts: Sequence[str], idf: np.ndarray | None = None) -> sp.csr_matrix:
        return self.from_counts(self.counts(texts), idf)

    @staticmethod
    def from_counts(counts: sp.csr_matrix, idf: np.ndarray | None = None) -> sp.csr_matrix:
        """Weighted, L2-normalized copy of a ``counts`` matrix."""
        X = counts.copy()
        if idf is not None:
            X.data = X.data * idf[X.indices]
        return _l2_normalize(X)


def featurize(raw: str, dim: int = DEFAULT_DIM, seed: int = 0) -> sp.csr_matrix:
    """L2-normalized hashed n-gram counts of one message, as a 1 x dim row."""
    return HashingFeaturizer(dim, seed).transform([raw])


@dataclass
class BackboneState:
    """Featurizer plus the statistics fitted by ``adapt_unsupervised``."""

    featurizer: HashingFeaturizer
    idf: np.ndarray | None = None
    n_adapt_lines: int = 0

    @property
    def dim(self) -> int:
        return self.featurizer.dim

    def transform(self, texts: Sequence[str]) -> sp.csr_matrix:
        return self.featurizer.transform(texts, self.idf)


def adapt_unsupervised(
    lines: Sequence[str],
    cap: int = 200_000,
    *,
    dim: int = DEFAULT_DIM,
    hash_seed: int = 0,
    seed: int = 0,
) -> BackboneState:
    """Fit smoothed IDF weights on a uniform sample of at most ``cap`` lines."""
    if len(lines) == 0:
        raise ValueError("adaptation pool is empty")
    rng = np.random.default_rng(seed)
    n = min(cap, len(lines))
    if n < len(lines):
        chosen = np.sort(rng.choice(len(lines), size=n, replace=False))
        sample = [lines[i] for i in chosen]
    else:
        sample = list(lines)
    feat = HashingFeaturizer(dim, hash_seed)
    df = np.zeros(dim, dtype=np.int64)
    for start in range(0, n, 20_000):
        X = feat.counts(sample[start : start + 20_000])
        df += np.bincount(X.indices, minlength=dim)
    idf = (np.log((1.0 + n) / (1.0 + df)) + 1.0).astype(np.float32)
    return BackboneState(feat, idf, n)


# ---------------------------------------------------------------------------
# focal loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FocalLossConfig:
    gamma: float = 2.0
    alpha: float = 0.75

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def focal_loss(p_hat, y, cfg: FocalLossConfig = FocalLossConfig()):
    """-alpha_t (1 - p_t)^gamma log p_t with p_hat clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(p_hat, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y)
    p_t = np.where(y == 1, p, 1.0 - p)
    alpha_t = np.where(y == 1, cfg.alpha, 1.0 - cfg.alpha)
    loss = -alpha_t * (1.0 - p_t) ** cfg.gamma * np.log(p_t)
    return loss if loss.ndim else float(loss)


def focal_loss_gradient(logit, y, cfg: FocalLossConfig = FocalLossConfig()):
    """d focal_loss(sigmoid(logit), y) / d logit in closed form."""
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(y)
    g, a = cfg.gamma, cfg.alpha
    p, q = sigmoid(z), sigmoid(-z)
    log_p = -np.logaddexp(0.0, -z)
    log_q = -np.logaddexp(0.0, z)
    pos = a * (g * p * q**g * log_p - q ** (g + 1.0))
    neg = (1.0 - a) * (p ** (g + 1.0) - g * q * p**g * log_q)
    grad = np.where(y == 1, pos, neg)
    return grad if grad.ndim else float(grad)


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def multiclass_focal_loss(Z: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    P = np.clip(softmax(Z), PROB_EPS, 1.0)
    p_t = P[np.arange(len(y)), y]
    return -((1.0 - p_t) ** gamma) * np.log(p_t)


def multiclass_focal_gradient(Z: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """Gradient of ``multiclass_focal_loss`` with respect to the logits ``Z``."""
    P = softmax(Z)
    rows = np.arange(len(y))
    p_t = np.clip(P[rows, y], PROB_EPS, 1.0)
    one_minus = np.maximum(1.0 - p_t, 0.0)
    if gamma > 0:
        lead = gamma * np.maximum(one_minus, 1e-300) ** (gamma - 1.0) * p_t * np.log(p_t)
    else:
        lead = np.zeros_like(p_t)
    coef = lead - one_minus**gamma
    onehot = np.zeros_like(P)
    onehot[rows, y] = 1.0
    return coef[:, None] * (onehot - P)


# ---------------------------------------------------------------------------
# linear models
# ---------------------------------------------------------------------------


@dataclass
class LinearClassifier:
    """One output row for a binary model, one row per class otherwise."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float32))
        self.bias = np.atleast_1d(np.asarray(self.bias, dtype=np.float32))
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias must have one entry per output row")

    @classmethod
    def zeros(cls, dim: int, n_classes: int = 2) -> LinearClassifier:
        rows = 1 if n_classes == 2 else n_classes
        return cls(np.zeros((rows, dim), np.float32), np.zeros(rows, np.float32))

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def binary(self) -> bool:
        return self.weights.shape[0] == 1

    @property
    def n_classes(self) -> int:
        return 2 if self.binary else self.weights.shape[0]

    def logits(self, X) -> np.ndarray:
        if X.shape[1] != self.dim:
            raise ValueError(f"feature dim {X.shape[1]} != model dim {self.dim}")
        Z = X @ self.weights.T.astype(np.float64) if not sp.issparse(X) else X @ self.weights.T
        return np.asarray(Z, dtype=np.float64) + self.bias.astype(np.float64)

    def predict_proba(self, X) -> np.ndarray:
        Z = self.logits(X)
        return sigmoid(Z[:, 0]) if self.binary else softmax(Z)


def score(model: LinearClassifier, X) -> np.ndarray:
    """Probability per row (binary) or class distribution per row (multiclass)."""
    return model.predict_proba(X)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 2.0
    alpha: float = 0.75
    learning_rate: float = 0.1
    batch_size: int = 256
    seed: int = 0

    @property
    def focal(self) -> FocalLossConfig:
        return FocalLossConfig(self.gamma, self.alpha)


@dataclass(frozen=True)
class Schedule:
    """Stopping rule.  ``check_every=None`` validates once per epoch."""

    max_epochs: int | None = 20
    max_steps: int | None = None
    check_every: int | None = None
    target: float | None = None
    patience: int | None = None


@dataclass
class TrainLog:
    steps: int = 0
    epochs: int = 0
    history: list[tuple[int, float]] = field(default_factory=list)
    best_metric: float | None = None
    best_step: int | None = None
    stop_reason: str = "budget"

    @property
    def target_reached(self) -> bool:
        return self.stop_reason == "target"

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "epochs": self.epochs,
            "best_metric": self.best_metric,
            "best_step": self.best_step,
            "stop_reason": self.stop_reason,
            "history": [[s, m] for s, m in self.history],
        }


class TrainingError(ValueError):
    pass


def train(
    X,
    y,
    *,
    n_classes: int = 2,
    sample_weight: np.ndarray | None = None,
    class_weight: np.ndarray | None = None,
    config: TrainConfig = TrainConfig(),
    schedule: Schedule = Schedule(),
    validate: Callable[[LinearClassifier], float | None] | None = None,
) -> tuple[LinearClassifier, TrainLog]:
    """Mini-batch gradient descent on the mean weighted focal loss.

    Binary models use the alpha-balanced focal loss; multiclass models use
    the softmax focal loss with optional per-class weights.  With
    ``validate`` the best checkpoint is returned (ties go to the later one).
    """
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n == 0:
        raise TrainingError("no training examples")
    if X.shape[0] != n:
        raise TrainingError("X and y disagree on the number of examples")
    if n_classes == 2:
        if len(np.unique(y)) < 2:
            raise TrainingError("binary training set contains a single class")
    elif n_classes < 2:
        raise TrainingError("need at least two classes")
    if schedule.max_epochs is None and schedule.max_steps is None:
        raise TrainingError("schedule needs max_epochs or max_steps")
    if sp.issparse(X):
        X = X.tocsr()
    sw = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if class_weight is not None:
        sw = sw * np.asarray(class_weight, dtype=np.float64)[y]

    dim = X.shape[1]
    rows = 1 if n_classes == 2 else n_classes
    W = np.zeros((rows, dim))
    b = np.zeros(rows)
    rng = np.random.default_rng(config.seed)
    lr, bs = config.learning_rate, config.batch_size
    focal = config.focal
    log = TrainLog()
    best: LinearClassifier | None = None
    stale = 0

    def snapshot() -> LinearClassifier:
        return LinearClassifier(W.astype(np.float32), b.astype(np.float32))

    def check() -> bool:
        nonlocal best, stale
        model = snapshot()
        metric = validate(model) if validate is not None else None
        if metric is None:
            best = model
            return False
        log.history.append((log.steps, float(metric)))
        improved = log.best_metric is None or metric > log.best_metric
        if log.best_metric is None or metric >= log.best_metric:
            best, log.best_metric, log.best_step = model, float(metric), log.steps
        stale = 0 if improved else stale + 1
        if schedule.target is not None and metric >= schedule.target:
            log.stop_reason = "target"
            return True
        if schedule.patience is not None and stale >= schedule.patience:
            log.stop_reason = "patience"
            return True
        return False

    stop = False
    while not stop:
        if schedule.max_epochs is not None and log.epochs >= schedule.max_epochs:
            break
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            batch = perm[start : start + bs]
            Xb, yb, wb = X[batch], y[batch], sw[batch]
            Z = np.asarray(Xb @ W.T).reshape(len(batch), rows) + b
            if rows == 1:
                G = (focal_loss_gradient(Z[:, 0], yb, focal) * wb)[:, None]
            else:
                G = multiclass_focal_gradient(Z, yb, focal.gamma) * wb[:, None]
            G /= len(batch)
            W -= lr * np.asarray(Xb.T @ G).T
            b -= lr * G.sum(axis=0)
            log.steps += 1
            if schedule.check_every and log.steps % schedule.check_every == 0:
                if check():
                    stop = True
                    break
            if schedule.max_steps is not None and log.steps >= schedule.max_steps:
                stop = True
                break
        else:
            log.epochs += 1
            if not schedule.check_every and check():
                stop = True
                continue
            continue
        log.epochs += 1 if start + bs >= n else 0

    if validate is None or best is None or log.best_metric is None:
        best = snapshot()
    if not np.all(np.isfinite(best.weights)):
        raise TrainingError("training diverged (non-finite weights)")
    return best, log
