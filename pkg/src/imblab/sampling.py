"""Training-time re-balancing: class samplers, SMOTE and instance combiners."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import ClassStats, Dataset
from .losses import log_softmax

SAMPLER_KINDS = ("instance_balanced", "class_balanced", "progressive", "reversed")
COMBINER_KINDS = ("none", "mixup", "remix", "bbn")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "instance_balanced"
    t: int = 0
    T: int = 1

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler {self.kind!r}; expected one of {SAMPLER_KINDS}")
        if self.T < 1 or not 0 <= self.t <= self.T:
            raise ValueError(f"need 0 <= t <= T and T >= 1, got t={self.t}, T={self.T}")


@dataclass(frozen=True)
class CombinerSpec:
    kind: str = "none"
    alpha: float = 1.0
    kappa: float = 3.0
    tau: float = 0.5
    bbn_schedule: str = "parabolic"

    def __post_init__(self):
        if self.kind not in COMBINER_KINDS:
            raise ValueError(f"unknown combiner {self.kind!r}; expected one of {COMBINER_KINDS}")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.bbn_schedule not in BBN_SCHEDULES:
            raise ValueError(f"unknown BBN schedule {self.bbn_schedule!r}")


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def class_distribution(spec: SamplerSpec, stats: ClassStats) -> np.ndarray:
    K = stats.num_classes
    instance = stats.frequencies
    uniform = np.full(K, 1.0 / K)
    if spec.kind == "instance_balanced":
        return instance.copy()
    if spec.kind == "class_balanced":
        return uniform
    if spec.kind == "progressive":
        r = spec.t / spec.T
        return (1.0 - r) * instance + r * uniform
    # reversed: class at sorted rank r takes the frequency of rank K-1-r
    out = np.empty(K)
    order = stats.order
    out[order] = instance[order[::-1]]
    return out


def sample_batch(spec: SamplerSpec, stats: ClassStats, labels, batch: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Draw ``batch`` indices into ``labels``: a class first, then a uniform member."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    labels = np.asarray(labels, dtype=np.int64)
    members = [np.flatnonzero(labels == k) for k in range(stats.num_classes)]
    probs = class_distribution(spec, stats)
    classes = rng.choice(stats.num_classes, size=batch, p=probs)
    sizes = np.array([m.size for m in members])
    empty = [int(c) for c in np.unique(classes) if sizes[c] == 0]
    if empty:
        raise ValueError(f"class {empty[0]} has no samples to draw")
    picks = rng.integers(0, sizes[classes])
    return np.array([members[c][i] for c, i in zip(classes, picks)], dtype=np.int64)


# ---------------------------------------------------------------------------
# SMOTE
# ---------------------------------------------------------------------------


def smote_oversample(dataset: Dataset, stats: ClassStats, k_neighbors: int, target_counts,
                     rng: np.random.Generator) -> Dataset:
    """Append synthetic minority samples interpolated toward same-class neighbours.

    Classes with fewer than two samples are skipped with a warning.
    """
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    if not dataset.is_categorical:
        raise ValueError("SMOTE needs categorical labels")
    target_counts = np.asarray(target_counts, dtype=np.int64)
    if target_counts.shape != (stats.num_classes,):
        raise ValueError("one target count per class expected")
    feats, labels, ids = [dataset.features], [dataset.labels], list(dataset.ids)
    groups = None if dataset.group_key is None else list(dataset.group_key)
    stamps = None if dataset.timestamp is None else [dataset.timestamp]
    for c in range(stats.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        need = int(target_counts[c]) - members.size
        if need <= 0:
            continue
        if members.size < 2:
            warnings.warn(f"SMOTE: class {c} has {members.size} sample(s); skipped")
            continue
        X = dataset.features[members]
        k = min(k_neighbors, members.size - 1)
        _, nn = cKDTree(X).query(X, k=k + 1)
        nn = np.asarray(nn).reshape(members.size, k + 1)[:, 1:]
        base = rng.integers(0, members.size, size=need)
        pick = nn[base, rng.integers(0, k, size=need)]
        u = rng.random(need)[:, None]
        feats.append(X[base] + u * (X[pick] - X[base]))
        labels.append(np.full(need, c, dtype=np.int64))
        ids.extend(f"smote-{c}-{j}" for j in range(need))
        if groups is not None:
            groups.extend(dataset.group_key[members[b]] for b in base)
        if stamps is not None:
            stamps.append(dataset.timestamp[members[base]])
    return Dataset(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        ids=tuple(ids),
        num_classes=dataset.num_classes,
        unit=dataset.unit,
        group_key=None if groups is None else tuple(groups),
        timestamp=None if stamps is None else np.concatenate(stamps),
    )


# ---------------------------------------------------------------------------
# combiners
# ---------------------------------------------------------------------------


def _lam_shape(h, lam):
    lam = np.asarray(lam, dtype=np.float64)
    if np.ndim(h) == 2 and lam.ndim == 1:
        return lam[:, None]
    return lam


def _draw_lambda(h_i, alpha, rng, lam):
    if lam is not None:
        return np.asarray(lam, dtype=np.float64)
    if rng is None:
        raise ValueError("need an rng or an explicit lambda")
    size = None if np.ndim(h_i) == 1 else np.shape(h_i)[0]
    return np.asarray(rng.beta(alpha, alpha, size=size))


def mixup_combine(h_i, h_j, y_i, y_j, alpha: float = 1.0, rng=None, lam=None):
    """Convex interpolation of hidden vectors and their label vectors.

    Batches are supported: each row pair gets its own lambda.
    Returns (mixed_h, mixed_y, lambda).
    """
    h_i, h_j = np.asarray(h_i, dtype=np.float64), np.asarray(h_j, dtype=np.float64)
    if h_i.shape != h_j.shape:
        raise ValueError(f"shape mismatch {h_i.shape} vs {h_j.shape}")
    lam = _draw_lambda(h_i, alpha, rng, lam)
    lh = _lam_shape(h_i, lam)
    y_i, y_j = np.asarray(y_i, dtype=np.float64), np.asarray(y_j, dtype=np.float64)
    ly = _lam_shape(y_i, lam)
    return lh * h_i + (1.0 - lh) * h_j, ly * y_i + (1.0 - ly) * y_j, lam


def remix_label_weight(lam_x, n_i, n_j, kappa: float, tau: float):
    lam_x = np.asarray(lam_x, dtype=np.float64)
    n_i = np.asarray(n_i, dtype=np.float64)
    n_j = np.asarray(n_j, dtype=np.float64)
    lam_y = lam_x.copy()
    to_j = (n_i / n_j >= kappa) & (lam_x < tau)
    to_i = (n_j / n_i >= kappa) & (1.0 - lam_x < tau)
    lam_y = np.where(to_j, 0.0, lam_y)
    lam_y = np.where(to_i, 1.0, lam_y)
    return lam_y


def remix_combine(h_i, h_j, y_i, y_j, n_i, n_j, alpha: float = 1.0, kappa: float = 3.0,
                  tau: float = 0.5, rng=None, lam=None):
    """Mixup on features with the label weight pushed toward the minority class.

    Returns (mixed_h, mixed_y, label_weight).
    """
    if np.any(np.asarray(n_i) < 1) or np.any(np.asarray(n_j) < 1):
        raise ValueError("class counts must be >= 1")
    h_i, h_j = np.asarray(h_i, dtype=np.float64), np.asarray(h_j, dtype=np.float64)
    if h_i.shape != h_j.shape:
        raise ValueError(f"shape mismatch {h_i.shape} vs {h_j.shape}")
    lam_x = _draw_lambda(h_i, alpha, rng, lam)
    lam_y = remix_label_weight(lam_x, n_i, n_j, kappa, tau)
    lh = _lam_shape(h_i, lam_x)
    y_i, y_j = np.asarray(y_i, dtype=np.float64), np.asarray(y_j, dtype=np.float64)
    ly = _lam_shape(y_i, lam_y)
    return lh * h_i + (1.0 - lh) * h_j, ly * y_i + (1.0 - ly) * y_j, lam_y


BBN_SCHEDULES = {
    "parabolic": lambda t, T: 1.0 - (t / T) ** 2,
    "linear": lambda t, T: 1.0 - t / T,
    "constant": lambda t, T: 0.5,
}


def bbn_beta(t: int, T: int, schedule: str = "parabolic") -> float:
    if T < 1:
        raise ValueError("T must be >= 1")
    return float(BBN_SCHEDULES[schedule](t, T))


def bbn_combine(logits_c, logits_r, y_c, y_r, beta: float):
    """Mix the two branch logits and the two-target cross-entropy.

    Returns (mixed_logits, mean_loss, grad of the mean loss wrt mixed_logits).
    """
    lc = np.asarray(logits_c, dtype=np.float64)
    lr = np.asarray(logits_r, dtype=np.float64)
    if lc.shape != lr.shape:
        raise ValueError(f"branch logit shapes differ: {lc.shape} vs {lr.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    single = lc.ndim == 1
    z = beta * lc + (1.0 - beta) * lr
    z2 = np.atleast_2d(z)
    yc = np.atleast_1d(np.asarray(y_c, dtype=np.int64))
    yr = np.atleast_1d(np.asarray(y_r, dtype=np.int64))
    logp = log_softmax(z2)
    rows = np.arange(z2.shape[0])
    per = beta * -logp[rows, yc] + (1.0 - beta) * -logp[rows, yr]
    target = np.zeros_like(z2)
    target[rows, yc] += beta
    target[rows, yr] += 1.0 - beta
    grad = (np.exp(logp) - target) / z2.shape[0]
    loss = float(np.mean(per))
    if single:
        return z, loss, grad[0]
    return z, loss, grad
