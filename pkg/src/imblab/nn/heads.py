"""Classifier-head variants: class-dependent temperatures, k-NN and the open-set head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import ClassStats


def cdt_temperatures(stats: ClassStats, gamma_cdt: float) -> np.ndarray:
    """a_c = (n_max / n_c) ** gamma_cdt, so rarer classes get larger temperatures."""
    if gamma_cdt < 0:
        raise ValueError("gamma_cdt must be >= 0")
    counts = stats.counts.astype(np.float64)
    return (counts.max() / counts) ** gamma_cdt


def cdt_logits(raw_logits, temperatures) -> np.ndarray:
    z = np.asarray(raw_logits, dtype=np.float64)
    a = np.asarray(temperatures, dtype=np.float64)
    if z.shape[-1] != a.shape[0]:
        raise ValueError(f"{z.shape[-1]} logits for {a.shape[0]} temperatures")
    if np.any(a <= 0):
        raise ValueError("temperatures must be positive")
    return z / a


def knn_predict(train_x, train_y, query, k: int) -> np.ndarray:
    """Majority vote of the k Euclidean nearest neighbours.

    Vote ties go to the class with the smaller summed neighbour distance,
    then to the lower class index. Distance ties at the k-th neighbour are
    resolved by training order.
    """
    X = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    y = np.asarray(train_y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k must lie in 1..{X.shape[0]}, got {k}")
    single = np.ndim(query) == 1
    Q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    K = int(y.max()) + 1
    out = np.empty(Q.shape[0], dtype=np.int64)
    for i, q in enumerate(Q):
        d = np.sqrt(np.sum((X - q) ** 2, axis=1))
        nn = np.argsort(d, kind="stable")[:k]
        votes = np.bincount(y[nn], minlength=K)
        dist = np.bincount(y[nn], weights=d[nn], minlength=K)
        best = np.flatnonzero(votes == votes.max())
        best = best[np.lexsort((best, dist[best]))]
        out[i] = best[0]
    return int(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class OpenHead:
    centroids: np.ndarray
    threshold: float

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("open threshold must be > 0")

    @property
    def num_classes(self) -> int:
        return self.centroids.shape[0]

    def to_dict(self) -> dict:
        return {
            "centroids": self.centroids.tolist(),
            "threshold": None if math.isinf(self.threshold) else self.threshold,
        }


def oltr_reachability(head: OpenHead, v) -> np.ndarray:
    """Minimum Euclidean distance from each row of ``v`` to any centroid."""
    V = np.atleast_2d(np.asarray(v, dtype=np.float64))
    d = np.sqrt(((V[:, None, :] - head.centroids[None, :, :]) ** 2).sum(axis=-1))
    r = d.min(axis=1)
    return float(r[0]) if np.ndim(v) == 1 else r


def oltr_fit_centroids(features, labels, num_classes=None, percentile: float = 95.0) -> OpenHead:
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    K = int(y.max()) + 1 if num_classes is None else int(num_classes)
    centroids = np.zeros((K, F.shape[1]))
    for c in range(K):
        members = F[y == c]
        if members.shape[0] == 0:
            raise ValueError(f"class {c} has no feature vectors")
        centroids[c] = members.mean(axis=0)
    reach = oltr_reachability(OpenHead(centroids, math.inf), F)
    theta = float(np.percentile(reach, percentile))
    if theta <= 0:
        # every training vector sits on its centroid; any positive distance is open
        theta = float(np.finfo(np.float64).tiny)
    return OpenHead(centroids, theta)


def open_decision(head: OpenHead, v, closed_logits) -> np.ndarray:
    """Closed-set argmax, or ``K`` (the open label) when reachability exceeds the threshold."""
    z = np.atleast_2d(np.asarray(closed_logits, dtype=np.float64))
    pred = np.argmax(z, axis=1)
    reach = np.atleast_1d(oltr_reachability(head, v))
    pred = np.where(reach > head.threshold, z.shape[1], pred)
    return int(pred[0]) if np.ndim(closed_logits) == 1 else pred
