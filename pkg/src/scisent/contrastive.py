"""Triplet loss with batch-all mining, pairwise contrastive loss, and SGD training
of the encoder projection."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Hashable, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import LabeledSentence
from .encoder import EncoderModel, featurize_batch, project_features

log = logging.getLogger(__name__)

DISTANCES = ("euclidean", "cosine")
LOSSES = ("batch_all_triplet", "pairwise_contrastive")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 5.0
    epochs: int = 20
    batch_size: int = 32
    peak_lr: float = 1.0
    warmup_fraction: float = 0.10
    distance: str = "euclidean"
    seed: int = 0
    loss: str = "batch_all_triplet"
    # average over positive-loss triplets only instead of all valid ones
    positives_only: bool = False

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1]")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# distances and per-sample losses

def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def distance(x, y, kind: str = "euclidean") -> float:
    x, y = _check_pair(x, y)
    if kind == "euclidean":
        return float(np.linalg.norm(x - y))
    if kind == "cosine":
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        if nx == 0 or ny == 0:
            raise ValueError("cosine distance is undefined for zero vectors")
        return float(1.0 - x @ y / (nx * ny))
    raise ValueError(f"unknown distance {kind!r}")


def triplet_loss(a, p, n, margin: float, kind: str = "euclidean") -> float:
    """``max(d(a, p) - d(a, n) + margin, 0)``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    _check_pair(a, p)
    _check_pair(a, n)
    return max(distance(a, p, kind) - distance(a, n, kind) + margin, 0.0)


def pairwise_contrastive_loss(a, b, rho: int, margin: float, kind: str = "euclidean") -> float:
    """``d^2`` for similar pairs (rho=1), ``max(margin - d, 0)^2`` for dissimilar."""
    if rho not in (0, 1):
        raise ValueError("rho must be 0 or 1")
    d = distance(a, b, kind)
    return d * d if rho == 1 else max(margin - d, 0.0) ** 2


def pairwise_distances(x: np.ndarray, kind: str = "euclidean") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == "euclidean":
        diff = x[:, None, :] - x[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if kind == "cosine":
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0):
            raise ValueError(f"cosine distance is undefined for zero vector at row {int(np.argmin(norms))}")
        u = x / norms[:, None]
        return 1.0 - u @ u.T
    raise ValueError(f"unknown distance {kind!r}")


# ---------------------------------------------------------------------------
# batch-all mining

def _triplet_mask(labels: Sequence[Hashable]) -> np.ndarray:
    _, codes = np.unique(np.asarray([str(lab) for lab in labels]), return_inverse=True)
    same = codes[:, None] == codes[None, :]
    pos = same & ~np.eye(len(codes), dtype=bool)
    return pos[:, :, None] & ~same[:, None, :]


def mine_batch_all(labels: Sequence[Hashable]) -> list[tuple[int, int, int]]:
    """Every valid (anchor, positive, negative) index triple, in lexicographic order."""
    if len(labels) == 0:
        return []
    a, p, n = np.nonzero(_triplet_mask(labels))
    return list(zip(a.tolist(), p.tolist(), n.tolist()))


def expected_triplet_count(labels: Sequence[Hashable]) -> int:
    n = len(labels)
    _, counts = np.unique(np.asarray([str(lab) for lab in labels]), return_counts=True)
    return int(sum(c * (c - 1) * (n - c) for c in counts.tolist()))


def _triplet_terms(x: np.ndarray, labels, margin: float, kind: str):
    d = pairwise_distances(x, kind)
    mask = _triplet_mask(labels)
    hinge = d[:, :, None] - d[:, None, :] + margin
    return d, mask, np.where(mask, np.maximum(hinge, 0.0), 0.0)


def batch_all_loss(batch_vecs, labels, margin: float, kind: str = "euclidean",
                   positives_only: bool = False) -> tuple[float, int]:
    """Mean triplet loss over all valid triplets of the batch and their count.

    A batch with no valid triplet gives ``(0.0, 0)``.
    """
    x = np.asarray(batch_vecs, dtype=np.float64)
    if len(x) != len(labels):
        raise ValueError("batch_vecs and labels differ in length")
    if len(x) == 0:
        return 0.0, 0
    _, mask, losses = _triplet_terms(x, labels, margin, kind)
    count = int(mask.sum())
    denom = int((losses > 0).sum()) if positives_only else count
    if count == 0 or denom == 0:
        return 0.0, count
    return float(losses.sum() / denom), count


# ---------------------------------------------------------------------------
# gradients w.r.t. embeddings

def _distance_grad(x: np.ndarray, d: np.ndarray, coef: np.ndarray, kind: str) -> np.ndarray:
    """Gradient of ``sum_ij coef[i, j] * d(x_i, x_j)`` with respect to ``x``.

    Pairs at zero distance contribute nothing (subgradient 0).
    """
    s = coef + coef.T
    if kind == "euclidean":
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(d > 0, s / d, 0.0)
        return k.sum(axis=1)[:, None] * x - k @ x
    norms = np.linalg.norm(x, axis=1)
    u = x / norms[:, None]
    cos = 1.0 - d
    return -(s @ u - (s * cos).sum(axis=1)[:, None] * u) / norms[:, None]


def batch_loss_and_grad(x: np.ndarray, labels, config: TrainConfig):
    """Loss, valid-sample count and gradient w.r.t. the batch embeddings ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if config.loss == "pairwise_contrastive":
        return _pairwise_loss_and_grad(x, labels, config)
    d, mask, losses = _triplet_terms(x, labels, config.margin, config.distance)
    count = int(mask.sum())
    active = losses > 0
    denom = int(active.sum()) if config.positives_only else count
    if count == 0 or denom == 0:
        return 0.0, count, np.zeros_like(x)
    w = active / denom
    # d(a,p) enters with +1, d(a,n) with -1
    coef = w.sum(axis=2) - w.sum(axis=1)
    return float(losses.sum() / denom), count, _distance_grad(x, d, coef, config.distance)


def _pairwise_loss_and_grad(x, labels, config: TrainConfig):
    n = len(x)
    if n < 2:
        return 0.0, 0, np.zeros_like(x)
    d = pairwise_distances(x, config.distance)
    codes = np.asarray([str(lab) for lab in labels])
    similar = codes[:, None] == codes[None, :]
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    slack = np.maximum(config.margin - d, 0.0)
    per_pair = np.where(similar, d * d, slack * slack)
    npairs = int(upper.sum())
    loss = float(per_pair[upper].sum() / npairs)
    coef = np.where(upper, np.where(similar, 2.0 * d, -2.0 * slack), 0.0) / npairs
    return loss, npairs, _distance_grad(x, d, coef, config.distance)


def _normalize_grad(e: np.ndarray, g_y: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    y = e / norms
    return (g_y - (g_y * y).sum(axis=1, keepdims=True) * y) / norms


def _objective_and_grad(features: sp.csr_matrix, labels, w: np.ndarray,
                        config: TrainConfig, normalize: bool):
    """Batch loss and gradient w.r.t. the projection rows touched by ``features``.

    Returns ``(loss, count, rows, grad_rows)`` where ``rows`` are the active
    feature columns.
    """
    rows = np.unique(features.indices)
    sub = features[:, rows]
    w_rows = w[rows]
    e = np.asarray(sub @ w_rows)
    x = project_features(sub, w_rows, normalize) if normalize else e
    loss, count, g = batch_loss_and_grad(x, labels, config)
    if normalize and count:
        g = _normalize_grad(e, g)
    grad_rows = np.asarray(sub.T @ g)
    if not np.all(np.isfinite(grad_rows)) or not math.isfinite(loss):
        raise TrainingError(_first_nonfinite_triplet(x, labels, config))
    return loss, count, rows, grad_rows


def _first_nonfinite_triplet(x, labels, config) -> str:
    d = pairwise_distances(x, config.distance)
    for a, p, n in mine_batch_all(labels):
        if not (np.isfinite(d[a, p]) and np.isfinite(d[a, n])):
            return f"non-finite gradient at triplet ({a}, {p}, {n})"
    return "non-finite gradient"


def loss_gradient(model: EncoderModel, features: sp.csr_matrix | Sequence[str], labels,
                  config: TrainConfig = TrainConfig()) -> np.ndarray:
    """Gradient of the batch loss with respect to every projection entry."""
    if not sp.issparse(features):
        features = featurize_batch(list(features), model.featurizer)
    w = model.projection.astype(np.float64)
    _, _, rows, grad_rows = _objective_and_grad(sp.csr_matrix(features), labels, w, config,
                                                model.normalize_output)
    grad = np.zeros_like(w)
    grad[rows] = grad_rows
    return grad


def batch_objective(model: EncoderModel, features: sp.csr_matrix, labels,
                    config: TrainConfig = TrainConfig()) -> float:
    x = project_features(features, model.projection, model.normalize_output)
    return batch_loss_and_grad(x, labels, config)[0]


# ---------------------------------------------------------------------------
# schedule and training

def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    return math.ceil(warmup_fraction * total_steps)


def lr_schedule(step: int, total_steps: int, peak_lr: float, warmup_fraction: float) -> float:
    """Linear warm-up to ``peak_lr`` then linear decay towards 0.

    Warm-up: ``peak * (step + 1) / W``; after: ``peak * (T - step) / (T - W)``.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    w = warmup_steps(total_steps, warmup_fraction)
    if step < w:
        return peak_lr * (step + 1) / w
    return peak_lr * (total_steps - step) / (total_steps - w)


@dataclass(frozen=True)
class ValidationTriplet:
    anchor: str
    positive: str
    negative: str


def build_validation_triplets(validation: Sequence[LabeledSentence], seed: int = 0
                              ) -> tuple[list[ValidationTriplet], int]:
    """One triplet per eligible anchor with a random positive and negative.

    Returns the triplets and the number of anchors skipped because their
    label has a single sample (or no other label exists).
    """
    rng = np.random.default_rng(seed)
    labels = np.array([s.label.value for s in validation])
    triplets, skipped = [], 0
    for i, s in enumerate(validation):
        positives = np.flatnonzero(labels == labels[i])
        positives = positives[positives != i]
        negatives = np.flatnonzero(labels != labels[i])
        if len(positives) == 0 or len(negatives) == 0:
            skipped += 1
            continue
        p = positives[rng.integers(len(positives))]
        n = negatives[rng.integers(len(negatives))]
        triplets.append(ValidationTriplet(s.id, validation[p].id, validation[n].id))
    if skipped:
        log.warning("skipped %d validation anchors without a usable positive/negative", skipped)
    return triplets, skipped


def triplet_accuracy(model: EncoderModel, sentences: Sequence[LabeledSentence],
                     triplets: Sequence[ValidationTriplet], kind: str = "euclidean",
                     projection: np.ndarray | None = None) -> float:
    """Fraction of triplets with d(anchor, positive) < d(anchor, negative)."""
    if not triplets:
        return float("nan")
    index = {s.id: i for i, s in enumerate(sentences)}
    feats = featurize_batch([s.text for s in sentences], model.featurizer)
    w = model.projection if projection is None else projection
    x = project_features(feats, w, model.normalize_output)
    hits = 0
    for t in triplets:
        a, p, n = x[index[t.anchor]], x[index[t.positive]], x[index[t.negative]]
        hits += distance(a, p, kind) < distance(a, n, kind)
    return hits / len(triplets)


@dataclass
class TrainResult:
    model: EncoderModel
    history: list[dict]
    skipped_batches: int


def train(model: EncoderModel, corpus: Sequence[LabeledSentence],
          config: TrainConfig = TrainConfig(),
          validation: Sequence[LabeledSentence] = (),
          validation_triplets: Sequence[ValidationTriplet] = (),
          on_record: Callable[[dict], None] | None = None) -> TrainResult:
    """Plain SGD over seeded shuffled minibatches with warm-up/linear-decay lr.

    Emits one history record per step and one per epoch (with validation
    triplet accuracy when validation triplets are given).
    """
    labels = np.array([s.label.value for s in corpus])
    if len(set(labels.tolist())) < 2:
        raise TrainingError("training corpus needs at least two labels")
    features = featurize_batch([s.text for s in corpus], model.featurizer)
    w = model.projection.astype(np.float64)
    n = len(corpus)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = config.epochs * steps_per_epoch
    rng = np.random.default_rng(config.seed)
    history: list[dict] = []
    skipped = 0

    def emit(rec):
        history.append(rec)
        if on_record:
            on_record(rec)

    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = np.sort(order[b * config.batch_size:(b + 1) * config.batch_size])
            lr = lr_schedule(step, total, config.peak_lr, config.warmup_fraction)
            loss, count, rows, grad_rows = _objective_and_grad(
                features[idx], labels[idx], w, config, model.normalize_output)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step}")
            if count == 0:
                skipped += 1
            elif loss > 0:
                w[rows] -= lr * grad_rows
            emit({"step": step, "epoch": epoch, "lr": lr, "loss": loss,
                  "valid_triplet_count": count, "skipped_batches": skipped})
            step += 1
        rec = {"epoch": epoch, "end_of_epoch": True, "skipped_batches": skipped}
        if validation_triplets:
            rec["validation_triplet_accuracy"] = triplet_accuracy(
                model, validation, validation_triplets, config.distance, projection=w)
        emit(rec)

    trained = model.with_projection(w.astype(model.projection.dtype))
    return TrainResult(trained, history, skipped)
