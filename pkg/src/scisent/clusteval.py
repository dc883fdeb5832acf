"""k-means clustering and partition-agreement metrics (ARI, AMI, Silhouette)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy.special import gammaln


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    restarts_used: int
    # per-restart inertia after each assignment step
    traces: list[list[float]] = field(default_factory=list)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with a centre
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rest[rng.integers(len(rest))])
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dists(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def _assign(x, centers):
    d = _sq_dists(x, centers)
    labels = np.argmin(d, axis=1)
    dist = d[np.arange(len(x)), labels]
    k = len(centers)
    # re-seed empty clusters with the point farthest from its centroid,
    # taken only from clusters that can spare a member
    while True:
        sizes = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(sizes == 0)
        if len(empty) == 0:
            return labels, dist
        donors = sizes[labels] > 1
        far = int(np.argmax(np.where(donors, dist, -1.0)))
        j = int(empty[0])
        centers[j] = x[far]
        labels[far] = j
        dist[far] = 0.0


def _lloyd(x, centers, max_iter, tol):
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        labels, dist = _assign(x, centers)
        trace.append(float(dist.sum()))
        new = np.array([x[labels == j].mean(axis=0) for j in range(len(centers))])
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift <= tol:
            break
    labels, dist = _assign(x, centers)
    trace.append(float(dist.sum()))
    return labels, centers, float(dist.sum()), it, trace


def kmeans(x, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300,
           tol: float = 1e-4) -> ClusterResult:
    """Lloyd's algorithm from k-means++ seeds; best inertia over ``restarts``.

    Ties in inertia keep the earlier restart; ties in assignment go to the
    lowest cluster index.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be 2-D")
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    rng = np.random.default_rng(seed)
    best = None
    traces = []
    for _ in range(max(1, restarts)):
        centers = kmeans_plusplus(x, k, rng)
        labels, centers, inertia, iters, trace = _lloyd(x, centers, max_iter, tol)
        traces.append(trace)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia, iters)
    labels, centers, inertia, iters = best
    return ClusterResult(labels, centers, inertia, iters, len(traces), traces)


# ---------------------------------------------------------------------------
# contingency-based agreement

@dataclass
class ContingencyTable:
    counts: np.ndarray
    row_labels: list
    col_labels: list

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def contingency(u: Sequence[Hashable], v: Sequence[Hashable]) -> ContingencyTable:
    if len(u) != len(v):
        raise ValueError(f"partitions differ in length: {len(u)} vs {len(v)}")
    rows = sorted(set(u), key=str)
    cols = sorted(set(v), key=str)
    ri = {r: i for i, r in enumerate(rows)}
    ci = {c: j for j, c in enumerate(cols)}
    table = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for a, b in zip(u, v):
        table[ri[a], ci[b]] += 1
    return ContingencyTable(table, rows, cols)


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(table: ContingencyTable) -> float:
    n = table.n
    if n < 2:
        raise ValueError("ARI needs at least two samples")
    index = _comb2(table.counts).sum()
    sa = _comb2(table.row_sums).sum()
    sb = _comb2(table.col_sums).sum()
    expected = sa * sb / _comb2(n)
    denom = 0.5 * (sa + sb) - expected
    if denom == 0:
        return 1.0
    return float((index - expected) / denom)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def mutual_information(table: ContingencyTable) -> float:
    n = table.n
    c = table.counts.astype(np.float64)
    a = table.row_sums.astype(np.float64)[:, None]
    b = table.col_sums.astype(np.float64)[None, :]
    nz = c > 0
    return float((c[nz] / n * np.log(n * c[nz] / (a * b)[nz])).sum())


def expected_mutual_information(table: ContingencyTable) -> float:
    """E[MI] under the permutation model, by the exact hypergeometric sum."""
    n = table.n
    a = table.row_sums
    b = table.col_sums
    lg = gammaln
    emi = 0.0
    for ai in a.tolist():
        for bj in b.tolist():
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if lo > hi:
                continue
            k = np.arange(lo, hi + 1, dtype=np.float64)
            log_p = (lg(ai + 1) + lg(bj + 1) + lg(n - ai + 1) + lg(n - bj + 1)
                     - lg(n + 1) - lg(k + 1) - lg(ai - k + 1) - lg(bj - k + 1)
                     - lg(n - ai - bj + k + 1))
            emi += float((k / n * np.log(n * k / (ai * bj)) * np.exp(log_p)).sum())
    return emi


def ami(table: ContingencyTable) -> float:
    """Adjusted mutual information with the arithmetic-mean entropy normalizer."""
    n = table.n
    if n < 1:
        raise ValueError("AMI needs at least one sample")
    mi = mutual_information(table)
    emi = expected_mutual_information(table)
    h = 0.5 * (_entropy(table.row_sums, n) + _entropy(table.col_sums, n))
    denom = h - emi
    if abs(denom) <= 1e-12 * max(1.0, h):
        return 1.0
    return float((mi - emi) / denom)


def silhouette(x, assignments) -> float:
    """Mean silhouette with Euclidean distance; singleton clusters score 0."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(assignments)
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise ValueError("silhouette needs at least two clusters")
    n = len(x)
    sums = np.zeros((n, len(clusters)))
    for start in range(0, n, 1024):
        diff = x[start:start + 1024, None, :] - x[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        for j, c in enumerate(clusters):
            sums[start:start + 1024, j] = d[:, labels == c].sum(axis=1)
    sizes = np.array([(labels == c).sum() for c in clusters], dtype=np.float64)
    own = np.searchsorted(clusters, labels)
    own_size = sizes[own]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[np.arange(n), own] / (own_size - 1)
        means = sums / sizes[None, :]
    means[np.arange(n), own] = np.inf
    b = means.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(own_size > 1, (b - a) / np.maximum(a, b), 0.0)
    # coincident points in a cluster and at its neighbours: a = b = 0
    s = np.nan_to_num(s, nan=0.0)
    return float(s.mean())


@dataclass
class EvalReport:
    """Named raw metric values (fractions, not percentages)."""

    metrics: dict[str, float]
    extra: dict = field(default_factory=dict)

    def scaled(self) -> dict[str, float]:
        return {k: round(100.0 * v, 2) for k, v in self.metrics.items()}

    def table(self, keys: Sequence[str] | None = None) -> str:
        keys = list(keys or self.metrics)
        s = self.scaled()
        return "\t".join(keys) + "\n" + "\t".join(f"{s[k]:.2f}" for k in keys) + "\n"


def cluster_eval(x, true_labels: Sequence[Hashable], seed: int = 0, restarts: int = 10) -> EvalReport:
    """k-means with k = number of distinct labels, scored against the labels."""
    if len(true_labels) == 0:
        raise ValueError("no labels")
    k = len(set(true_labels))
    res = kmeans(x, k, seed=seed, restarts=restarts)
    table = contingency(list(true_labels), res.assignments.tolist())
    metrics = {"ari": ari(table), "ami": ami(table)}
    n_found = len(np.unique(res.assignments))
    metrics["silhouette"] = silhouette(x, res.assignments) if n_found >= 2 else 0.0
    return EvalReport(metrics, {"k": k, "inertia": res.inertia, "iterations": res.iterations})
