"""CSV ingestion and synthetic long-tailed datasets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset, make_rng

INT64_RANGE = (-(2**63), 2**63 - 1)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of a dataset CSV.

    ``feature_columns`` defaults to every header starting with ``f`` followed by
    digits, in numeric order. Categorical labels are mapped through
    ``classes`` (label strings in class-index order) when given, otherwise
    parsed as integers in 0..num_classes-1. ``task`` is "classification" or
    "regression".
    """

    task: str = "classification"
    label_column: str = "label"
    id_column: Optional[str] = "id"
    feature_columns: Optional[tuple] = None
    classes: Optional[tuple] = None
    num_classes: Optional[int] = None
    group_column: Optional[str] = None
    timestamp_column: Optional[str] = None
    timestamp_range: tuple = INT64_RANGE
    unit: str = ""


def _feature_headers(header):
    cols = [h for h in header if len(h) > 1 and h[0] == "f" and h[1:].isdigit()]
    return tuple(sorted(cols, key=lambda h: int(h[1:])))


def load_csv_dataset(path, schema: CsvSchema = CsvSchema()) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file (header row required)") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    pos = {h: i for i, h in enumerate(header)}
    feat_cols = schema.feature_columns or _feature_headers(header)
    if not feat_cols:
        raise ValueError(f"{path}: no feature columns found")
    needed = list(feat_cols) + [schema.label_column]
    for opt in (schema.id_column, schema.group_column, schema.timestamp_column):
        if opt is not None and (opt != schema.id_column or opt in pos):
            needed.append(opt)
    for col in needed:
        if col not in pos:
            raise ValueError(f"{path}: missing column {col!r}")

    n = len(rows)
    X = np.empty((n, len(feat_cols)))
    fidx = [pos[c] for c in feat_cols]
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r + 2} has {len(row)} cells, header has {len(header)}")
        for j, (c, i) in enumerate(zip(feat_cols, fidx)):
            try:
                X[r, j] = float(row[i])
            except ValueError:
                raise ValueError(f"{path}: row {r + 2}, column {c!r}: "
                                 f"non-numeric value {row[i]!r}") from None
    raw_labels = [row[pos[schema.label_column]].strip() for row in rows]
    if schema.task == "regression":
        try:
            labels = np.array([float(v) for v in raw_labels])
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric regression label ({exc})") from None
        K = None
    elif schema.task == "classification":
        labels, K = _categorical(raw_labels, schema, path)
    else:
        raise ValueError(f"unknown task {schema.task!r}")

    ids = ()
    if schema.id_column is not None and schema.id_column in pos:
        ids = tuple(row[pos[schema.id_column]] for row in rows)
    groups = None
    if schema.group_column is not None:
        groups = tuple(row[pos[schema.group_column]] for row in rows)
    stamps = None
    if schema.timestamp_column is not None:
        lo, hi = schema.timestamp_range
        stamps = np.empty(n, dtype=np.int64)
        for r, row in enumerate(rows):
            cell = row[pos[schema.timestamp_column]].strip()
            try:
                v = int(cell)
            except ValueError:
                raise ValueError(f"{path}: row {r + 2}: timestamp {cell!r} is not an integer") from None
            if not lo <= v <= hi:
                raise ValueError(f"{path}: row {r + 2}: timestamp {v} outside [{lo}, {hi}]")
            stamps[r] = v
    return Dataset(features=X, labels=labels, ids=ids, num_classes=K, unit=schema.unit,
                   group_key=groups, timestamp=stamps)


def _categorical(raw, schema, path):
    if schema.classes is not None:
        lookup = {str(c): k for k, c in enumerate(schema.classes)}
        out = []
        for r, v in enumerate(raw):
            if v not in lookup:
                raise ValueError(f"{path}: row {r + 2}: unknown label {v!r}")
            out.append(lookup[v])
        return np.array(out, dtype=np.int64), len(schema.classes)
    if schema.num_classes is None:
        raise ValueError("categorical schema needs 'classes' or 'num_classes'")
    K = int(schema.num_classes)
    out = []
    for r, v in enumerate(raw):
        try:
            k = int(v)
        except ValueError:
            raise ValueError(f"{path}: row {r + 2}: unknown label {v!r}") from None
        if not 0 <= k < K:
            raise ValueError(f"{path}: row {r + 2}: unknown label {v!r}")
        out.append(k)
    return np.array(out, dtype=np.int64), K


def write_dataset(dataset: Dataset, path) -> None:
    """Write the CSV layout ``load_csv_dataset`` reads, floats at 17 digits."""
    d = dataset.n_features
    header = ["id"] + [f"f{j}" for j in range(d)] + ["label"]
    if dataset.group_key is not None:
        header.append("group")
    if dataset.timestamp is not None:
        header.append("timestamp")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            label = dataset.labels[i]
            row = [dataset.ids[i]] + [format(v, ".17g") for v in dataset.features[i]]
            row.append(str(int(label)) if dataset.is_categorical else format(float(label), ".17g"))
            if dataset.group_key is not None:
                row.append(dataset.group_key[i])
            if dataset.timestamp is not None:
                row.append(str(int(dataset.timestamp[i])))
            w.writerow(row)


# ---------------------------------------------------------------------------
# synthetic long-tailed data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    K: int = 10
    rho: float = 100.0
    n_total: int = 5000
    d: int = 32
    decay: str = "power_law"
    sigma: float = 1.0
    radius: float = 3.0  # class-mean distance from the origin, in units of sigma

    def __post_init__(self):
        if self.K < 1 or self.n_total < 1 or self.d < 1:
            raise ValueError("K, n_total and d must be positive")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")
        if self.decay not in ("power_law", "exponential"):
            raise ValueError(f"unknown decay {self.decay!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


def class_counts(spec: SyntheticSpec) -> np.ndarray:
    """Per-class counts, largest first, with n_1 / n_K = rho up to rounding.

    Power law: n_k proportional to k**-a with a = log(rho) / log(K).
    Exponential: n_k proportional to r**(k-1) with r = rho**(-1 / (K-1)).
    """
    K = spec.K
    k = np.arange(1, K + 1, dtype=np.float64)
    if K == 1 or spec.rho == 1:
        shape = np.ones(K)
    elif spec.decay == "power_law":
        shape = k ** (-math.log(spec.rho) / math.log(K))
    else:
        shape = spec.rho ** (-(k - 1) / (K - 1))
    counts = np.rint(spec.n_total * shape / shape.sum()).astype(np.int64)
    if counts.min() < 2:
        raise ValueError(f"infeasible: rho={spec.rho} with n_total={spec.n_total} leaves a "
                         f"class with {counts.min()} sample(s); need >= 2")
    return counts


def class_means(spec: SyntheticSpec, seed: int) -> np.ndarray:
    """Frozen class means: radius * sigma along a unit direction drawn per (seed, class)."""
    means = np.empty((spec.K, spec.d))
    for c in range(spec.K):
        u = make_rng(seed, "mean", c).standard_normal(spec.d)
        means[c] = spec.radius * spec.sigma * u / np.linalg.norm(u)
    return means


def generate_synthetic_lt(spec: SyntheticSpec, seed: int, counts=None) -> Dataset:
    """Gaussian classes with long-tailed counts.

    Class-conditional draws depend only on (seed, class): the first m samples
    of class c are identical whatever the other classes' counts are.
    """
    counts = class_counts(spec) if counts is None else np.asarray(counts, dtype=np.int64)
    if counts.shape != (spec.K,):
        raise ValueError("one count per class expected")
    means = class_means(spec, seed)
    feats, labels, ids = [], [], []
    for c in range(spec.K):
        noise = make_rng(seed, "samples", c).standard_normal((int(counts[c]), spec.d))
        feats.append(means[c] + spec.sigma * noise)
        labels.append(np.full(int(counts[c]), c, dtype=np.int64))
        ids.extend(f"c{c}-{i}" for i in range(int(counts[c])))
    # interleave classes deterministically so files are not class-sorted
    X = np.concatenate(feats)
    y = np.concatenate(labels)
    perm = make_rng(seed, "order").permutation(y.size)
    return Dataset(features=X[perm], labels=y[perm], ids=tuple(ids[i] for i in perm),
                   num_classes=spec.K)


def resample_label_distribution(dataset: Dataset, target_counts, rng=None,
                                mode: str = "replicate") -> Dataset:
    """Change the label distribution while keeping each class's samples.

    ``replicate`` repeats every sample of class k target/current times (exact
    integer multiples only); ``subsample`` draws targets without replacement.
    """
    if not dataset.is_categorical:
        raise ValueError("resampling needs categorical labels")
    K = dataset.num_classes
    current = np.bincount(dataset.labels, minlength=K)
    target = np.asarray(target_counts, dtype=np.int64)
    if target.shape != (K,):
        raise ValueError("one target count per class expected")
    keep = []
    if mode == "replicate":
        for k in range(K):
            if current[k] == 0:
                if target[k]:
                    raise ValueError(f"class {k} has no samples to replicate")
                continue
            if target[k] % current[k] or target[k] < current[k]:
                raise ValueError(f"class {k}: target {target[k]} is not a positive multiple "
                                 f"of {current[k]}")
        mult = np.where(current > 0, target // np.maximum(current, 1), 0)
        keep = np.repeat(np.arange(len(dataset)), mult[dataset.labels])
        copies = np.concatenate([np.arange(m) for m in mult[dataset.labels]]) if len(dataset) \
            else np.array([], dtype=np.int64)
        out = dataset.subset(keep)
        ids = tuple(f"{i}#{r}" if r else i for i, r in zip(out.ids, copies))
        return Dataset(out.features, out.labels, ids, out.num_classes, out.unit,
                       out.group_key, out.timestamp)
    if mode == "subsample":
        if rng is None:
            raise ValueError("subsample mode needs an rng")
        for k in range(K):
            if target[k] > current[k] or target[k] < 0:
                raise ValueError(f"class {k}: target {target[k]} exceeds {current[k]} samples")
            members = np.flatnonzero(dataset.labels == k)
            keep.append(rng.choice(members, size=int(target[k]), replace=False))
        return dataset.subset(np.sort(np.concatenate(keep)))
    raise ValueError(f"unknown mode {mode!r}")
