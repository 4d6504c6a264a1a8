"""Foundational data types shared by every other module."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

HEAD, MIDDLE, TAIL = "head", "middle", "tail"
PARTITION_TAGS = (HEAD, MIDDLE, TAIL)


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


def derive_seed(seed: int, *keys) -> int:
    """Derive a child 64-bit seed from a parent seed and a path of keys.

    Used to fork independent streams (per class, per stage) without sharing
    generator state.
    """
    h = hashlib.sha256(str(int(seed)).encode())
    for key in keys:
        h.update(b"/")
        h.update(str(key).encode())
    return int.from_bytes(h.digest()[:8], "little")


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Counter-based Philox generator; identical streams on every platform."""
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.Generator(np.random.Philox(int(seed) % 2**64))


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus labels and optional split keys.

    ``num_classes`` is set for categorical labels and ``None`` for continuous
    targets, in which case ``unit`` carries the label unit opaquely.
    """

    features: np.ndarray
    labels: np.ndarray
    ids: tuple = ()
    num_classes: Optional[int] = None
    unit: str = ""
    group_key: Optional[tuple] = None
    timestamp: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        n = feats.shape[0]
        if self.num_classes is not None:
            labels = np.asarray(self.labels)
            if labels.size and not np.issubdtype(labels.dtype, np.integer):
                if not np.all(np.equal(np.mod(labels, 1), 0)):
                    raise ValueError("categorical labels must be integers")
            labels = labels.astype(np.int64)
            if self.num_classes < 1:
                raise ValueError("num_classes must be >= 1")
            bad = np.flatnonzero((labels < 0) | (labels >= self.num_classes))
            if bad.size:
                raise ValueError(
                    f"label {labels[bad[0]]} at row {bad[0]} outside 0..{self.num_classes - 1}"
                )
        else:
            labels = np.asarray(self.labels, dtype=np.float64)
        if labels.ndim != 1 or labels.shape[0] != n:
            raise ValueError(f"expected {n} labels, got shape {labels.shape}")
        ids = tuple(str(i) for i in self.ids) if len(self.ids) else tuple(str(i) for i in range(n))
        if len(ids) != n:
            raise ValueError(f"expected {n} ids, got {len(ids)}")
        group_key = self.group_key
        if group_key is not None:
            group_key = tuple(str(g) for g in group_key)
            if len(group_key) != n:
                raise ValueError(f"expected {n} group keys, got {len(group_key)}")
        timestamp = self.timestamp
        if timestamp is not None:
            timestamp = np.asarray(timestamp)
            if timestamp.shape != (n,):
                raise ValueError(f"expected {n} timestamps, got shape {timestamp.shape}")
            if timestamp.size and not np.issubdtype(timestamp.dtype, np.integer):
                raise ValueError("timestamps must be integers")
            timestamp = timestamp.astype(np.int64)
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "group_key", group_key)
        object.__setattr__(self, "timestamp", timestamp)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_categorical(self) -> bool:
        return self.num_classes is not None

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            ids=tuple(self.ids[i] for i in idx),
            num_classes=self.num_classes,
            unit=self.unit,
            group_key=None if self.group_key is None else tuple(self.group_key[i] for i in idx),
            timestamp=None if self.timestamp is None else self.timestamp[idx],
        )


# ---------------------------------------------------------------------------
# Class statistics
# ---------------------------------------------------------------------------


def partition_by_counts(counts) -> tuple:
    """Tag classes head/middle/tail by contiguous thirds of the count order.

    Group sizes are ceil(K/3), ceil(K/3) and the remainder; equal counts are
    broken by lower class index first. Fewer than three classes are all head.
    """
    counts = np.asarray(counts)
    K = counts.shape[0]
    tags = [HEAD] * K
    if K < 3:
        return tuple(tags)
    order = sort_by_count(counts)
    third = math.ceil(K / 3)
    for rank, c in enumerate(order):
        if rank >= 2 * third:
            tags[c] = TAIL
        elif rank >= third:
            tags[c] = MIDDLE
    return tuple(tags)


def sort_by_count(counts) -> np.ndarray:
    """Class indices ordered by count descending, lower index first on ties."""
    counts = np.asarray(counts)
    return np.lexsort((np.arange(counts.shape[0]), -counts)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ClassStats:
    counts: np.ndarray
    frequencies: np.ndarray
    order: np.ndarray
    imbalance_ratio: float
    partition: tuple

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def classes_tagged(self, tag: str) -> np.ndarray:
        return np.array([k for k, t in enumerate(self.partition) if t == tag], dtype=np.int64)

    @classmethod
    def from_counts(cls, counts) -> "ClassStats":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size == 0:
            raise ValueError("counts must be a non-empty 1-D sequence")
        if counts.sum() == 0:
            raise ValueError("empty label list")
        zero = np.flatnonzero(counts <= 0)
        if zero.size:
            raise ValueError(f"class {int(zero[0])} has no samples")
        freqs = counts / counts.sum()
        order = sort_by_count(counts)
        ratio = float(counts[order[0]] / counts[order[-1]])
        for arr in (counts, freqs, order):
            arr.setflags(write=False)
        return cls(
            counts=counts,
            frequencies=freqs,
            order=order,
            imbalance_ratio=ratio,
            partition=partition_by_counts(counts),
        )

    def to_dict(self) -> dict:
        return {
            "counts": [int(c) for c in self.counts],
            "frequencies": [float(f) for f in self.frequencies],
            "order": [int(o) for o in self.order],
            "imbalance_ratio": self.imbalance_ratio,
            "partition": list(self.partition),
        }


def build_class_stats(labels: Sequence[int], K: int) -> ClassStats:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty label list")
    if np.any((labels < 0) | (labels >= K)):
        raise ValueError(f"labels must lie in 0..{K - 1}")
    return ClassStats.from_counts(np.bincount(labels, minlength=K))


# ---------------------------------------------------------------------------
# Confusion matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Entry (j, k) counts samples of true class j predicted as class k."""

    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
            raise ValueError(f"confusion matrix must be square and non-empty, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("confusion matrix entries must be non-negative")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def K(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def predicted(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def confusion_from_predictions(true, predicted, K: int) -> ConfusionMatrix:
    true = np.asarray(true, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if true.shape != predicted.shape or true.ndim != 1:
        raise ValueError(f"length mismatch: {true.shape} vs {predicted.shape}")
    if true.size == 0:
        raise ValueError("no samples to evaluate")
    for name, arr in (("true", true), ("predicted", predicted)):
        bad = np.flatnonzero((arr < 0) | (arr >= K))
        if bad.size:
            raise ValueError(f"{name} label {arr[bad[0]]} at index {bad[0]} outside 0..{K - 1}")
    counts = np.bincount(true * K + predicted, minlength=K * K).reshape(K, K)
    return ConfusionMatrix(counts)
