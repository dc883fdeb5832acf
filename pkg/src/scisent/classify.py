"""Embedding-space classifiers and F1-micro.

KNN uses k = floor(sqrt(N)) neighbours weighted by inverse distance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from scipy.special import logsumexp

from .clusteval import EvalReport

log = logging.getLogger(__name__)

CLASSIFIERS = ("knn", "centroid", "logreg")


def _sq_dists(q: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = q[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


# ---------------------------------------------------------------------------
# KNN

@dataclass
class KnnModel:
    x: np.ndarray
    y: list
    k: int
    weighting: str = "distance"


def sqrt_neighbors(n: int) -> int:
    return max(1, math.isqrt(n))


def knn_fit(x, y: Sequence[Hashable], weighting: str = "distance", k: int | None = None) -> KnnModel:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty training set")
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    if weighting not in ("distance", "uniform"):
        raise ValueError(f"unknown weighting {weighting!r}")
    k = sqrt_neighbors(len(x)) if k is None else k
    if not 1 <= k <= len(x):
        raise ValueError(f"k must lie in [1, {len(x)}]")
    return KnnModel(x, list(y), k, weighting)


def _vote(model: KnnModel, order: np.ndarray, dists: np.ndarray):
    """Label with the highest score; ties go to the label seen at the lowest training index."""
    nearest = order[:model.k]
    d = dists[nearest]
    if model.weighting == "distance":
        zero = d == 0
        if zero.any():
            nearest, weights = nearest[zero], np.ones(int(zero.sum()))
        else:
            weights = 1.0 / d
    else:
        weights = np.ones(len(nearest))
    scores: dict = {}
    first: dict = {}
    for i, w in zip(nearest.tolist(), weights.tolist()):
        lab = model.y[i]
        scores[lab] = scores.get(lab, 0.0) + w
        first[lab] = min(first.get(lab, i), i)
    return max(scores, key=lambda lab: (scores[lab], -first[lab]))


def knn_predict_many(model: KnnModel, queries) -> list:
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if q.shape[1] != model.x.shape[1]:
        raise ValueError(f"query dimension {q.shape[1]} != {model.x.shape[1]}")
    out = []
    for start in range(0, len(q), 256):
        d = np.sqrt(_sq_dists(q[start:start + 256], model.x))
        for row in d:
            # stable sort: equal distances keep training order
            order = np.argsort(row, kind="stable")
            out.append(_vote(model, order, row))
    return out


def knn_predict(model: KnnModel, query):
    return knn_predict_many(model, np.asarray(query, dtype=np.float64)[None, :])[0]


# ---------------------------------------------------------------------------
# nearest centroid

@dataclass
class CentroidModel:
    labels: list
    centroids: np.ndarray


def centroid_fit(x, y: Sequence[Hashable]) -> CentroidModel:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty training set")
    labels = sorted(set(y), key=str)
    y_arr = np.asarray([str(v) for v in y])
    cents = []
    for lab in labels:
        members = x[y_arr == str(lab)]
        if len(members) == 0:
            raise ValueError(f"label {lab} has no samples")
        cents.append(members.mean(axis=0))
    return CentroidModel(labels, np.array(cents))


def centroid_predict(model: CentroidModel, queries) -> list:
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    # labels are sorted, so argmin's first-index rule picks the smaller label
    idx = np.argmin(_sq_dists(q, model.centroids), axis=1)
    return [model.labels[i] for i in idx]


# ---------------------------------------------------------------------------
# multinomial logistic regression

@dataclass
class LogRegModel:
    labels: list
    weights: np.ndarray
    bias: np.ndarray

    def predict_proba(self, x) -> np.ndarray:
        z = np.atleast_2d(np.asarray(x, dtype=np.float64)) @ self.weights + self.bias
        return np.exp(z - logsumexp(z, axis=1, keepdims=True))

    def predict(self, x) -> list:
        return [self.labels[i] for i in np.argmax(self.predict_proba(x), axis=1)]


def logreg_loss_and_grad(w: np.ndarray, b: np.ndarray, x: np.ndarray, onehot: np.ndarray,
                         l2: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy plus ``l2/2 * ||w||^2``, with gradients."""
    n = len(x)
    z = x @ w + b
    lse = logsumexp(z, axis=1, keepdims=True)
    loss = float(-(onehot * (z - lse)).sum() / n + 0.5 * l2 * (w * w).sum())
    r = (np.exp(z - lse) - onehot) / n
    return loss, x.T @ r + l2 * w, r.sum(axis=0)


def logreg_fit(x, y: Sequence[Hashable], l2: float = 1e-4, epochs: int = 200, lr: float = 0.1,
               seed: int = 0) -> LogRegModel:
    """Full-batch gradient descent from zero weights.

    ``seed`` is unused in full-batch mode and kept for a future minibatch mode.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = sorted(set(y), key=str)
    if len(labels) < 2:
        raise ValueError("logistic regression needs at least two labels")
    index = {lab: i for i, lab in enumerate(labels)}
    onehot = np.zeros((len(x), len(labels)))
    onehot[np.arange(len(x)), [index[v] for v in y]] = 1.0
    w = np.zeros((x.shape[1], len(labels)))
    b = np.zeros(len(labels))
    for epoch in range(epochs):
        loss, gw, gb = logreg_loss_and_grad(w, b, x, onehot, l2)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        w -= lr * gw
        b -= lr * gb
    return LogRegModel(labels, w, b)


# ---------------------------------------------------------------------------
# metrics

def f1_micro(y_true: Sequence, y_pred: Sequence) -> float:
    if len(y_true) != len(y_pred):
        raise ValueError("length mismatch")
    if len(y_true) == 0:
        raise ValueError("empty inputs")
    labels = set(y_true) | set(y_pred)
    tp = fp = fn = 0
    for lab in labels:
        tp += sum(t == lab and p == lab for t, p in zip(y_true, y_pred))
        fp += sum(t != lab and p == lab for t, p in zip(y_true, y_pred))
        fn += sum(t == lab and p != lab for t, p in zip(y_true, y_pred))
    return 2 * tp / (2 * tp + fp + fn)


@dataclass
class ConfusionMatrix:
    labels: list
    counts: np.ndarray

    def to_tsv(self) -> str:
        names = [str(lab) for lab in self.labels]
        lines = ["true\\pred\t" + "\t".join(names)]
        for name, row in zip(names, self.counts):
            lines.append(name + "\t" + "\t".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion_matrix(y_true: Sequence, y_pred: Sequence) -> ConfusionMatrix:
    labels = sorted(set(y_true) | set(y_pred), key=str)
    idx = {lab: i for i, lab in enumerate(labels)}
    m = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        m[idx[t], idx[p]] += 1
    return ConfusionMatrix(labels, m)


def per_label_scores(cm: ConfusionMatrix) -> dict[str, float]:
    out = {}
    for i, lab in enumerate(cm.labels):
        tp = cm.counts[i, i]
        pred = cm.counts[:, i].sum()
        true = cm.counts[i, :].sum()
        p = tp / pred if pred else 0.0
        r = tp / true if true else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out[f"precision.{lab}"] = float(p)
        out[f"recall.{lab}"] = float(r)
        out[f"f1.{lab}"] = float(f)
    return out


def fit_predict(classifier: str, train_x, train_y, test_x, seed: int = 0) -> list:
    if classifier == "knn":
        return knn_predict_many(knn_fit(train_x, train_y), test_x)
    if classifier == "centroid":
        return centroid_predict(centroid_fit(train_x, train_y), test_x)
    if classifier == "logreg":
        return logreg_fit(train_x, train_y, seed=seed).predict(test_x)
    raise ValueError(f"unknown classifier {classifier!r}; choose from {CLASSIFIERS}")


def classification_eval(train_x, train_y: Sequence, test_x, test_y: Sequence,
                        classifier: str = "knn", seed: int = 0) -> EvalReport:
    """Fit on train embeddings, score F1-micro and per-label metrics on test."""
    if len(test_y) == 0:
        raise ValueError("empty test set")
    train_y = [str(v) for v in train_y]
    test_y = [str(v) for v in test_y]
    unseen = set(test_y) - set(train_y)
    if unseen:
        log.warning("test labels absent from training data: %s", sorted(unseen))
    pred = [str(v) for v in fit_predict(classifier, train_x, train_y, test_x, seed)]
    cm = confusion_matrix(test_y, pred)
    metrics = {"f1_micro": f1_micro(test_y, pred)}
    metrics.update(per_label_scores(cm))
    extra = {"classifier": classifier, "confusion": cm, "n_train": len(train_y)}
    if classifier == "knn":
        extra["k"] = sqrt_neighbors(len(train_y))
    return EvalReport(metrics, extra)
