"""Deterministic train/valid/test partitioning.

Supported methods: ``standard`` (class-balanced test and valid sets sized by
the minority class), ``random``, ``temporal`` and ``group``, each optionally
wrapped as an open variant that holds the smallest classes out of training.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Dataset, make_rng

BASE_METHODS = ("standard", "random", "temporal", "group")
METHOD_ALIASES = {"time": "temporal", "scaffold": "group"}


def canonical_method(name: str) -> tuple:
    """Return (base_method, is_open) for names like ``open-scaffold``."""
    is_open = name.startswith("open-")
    base = name[5:] if is_open else name
    base = METHOD_ALIASES.get(base, base)
    if base not in BASE_METHODS:
        raise ValueError(f"unknown split method {name!r}")
    return base, is_open


@dataclass(frozen=True)
class SplitPlan:
    method: str = "random"
    fractions: tuple = (0.8, 0.1, 0.1)
    open_fraction: float = 0.0
    seed: int = 0
    cutoffs: Optional[tuple] = None

    def __post_init__(self):
        canonical_method(self.method)
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f <= 0 for f in fr):
            raise ValueError(f"fractions must be three positive numbers, got {self.fractions}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(fr)}")
        object.__setattr__(self, "fractions", fr)
        if not 0.0 <= self.open_fraction < 1.0:
            raise ValueError(f"open_fraction must lie in [0, 1), got {self.open_fraction}")
        if self.open_fraction > 0 and not self.is_open:
            raise ValueError("open_fraction > 0 needs an open-* split method")
        if self.cutoffs is not None:
            object.__setattr__(self, "cutoffs", tuple(int(c) for c in self.cutoffs))

    @property
    def base_method(self) -> str:
        return canonical_method(self.method)[0]

    @property
    def is_open(self) -> bool:
        return canonical_method(self.method)[1]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "fractions": list(self.fractions),
            "open_fraction": self.open_fraction,
            "seed": self.seed,
            "cutoffs": None if self.cutoffs is None else list(self.cutoffs),
        }


@dataclass(frozen=True, eq=False)
class SplitResult:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    open_classes: tuple = ()
    plan: SplitPlan = field(default_factory=SplitPlan)

    def to_dict(self) -> dict:
        return {
            "train": [int(i) for i in self.train],
            "valid": [int(i) for i in self.valid],
            "test": [int(i) for i in self.test],
            "open_classes": [int(c) for c in self.open_classes],
            "plan": self.plan.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitResult":
        plan = data["plan"]
        return cls(
            train=np.asarray(data["train"], dtype=np.int64),
            valid=np.asarray(data["valid"], dtype=np.int64),
            test=np.asarray(data["test"], dtype=np.int64),
            open_classes=tuple(int(c) for c in data["open_classes"]),
            plan=SplitPlan(
                method=plan["method"],
                fractions=tuple(plan["fractions"]),
                open_fraction=plan["open_fraction"],
                seed=plan["seed"],
                cutoffs=None if plan.get("cutoffs") is None else tuple(plan["cutoffs"]),
            ),
        )


def _result(train, valid, test, plan, open_classes=()):
    arrs = [np.sort(np.asarray(a, dtype=np.int64)) for a in (train, valid, test)]
    return SplitResult(*arrs, open_classes=tuple(sorted(int(c) for c in open_classes)), plan=plan)


# ---------------------------------------------------------------------------
# base methods over an index pool
# ---------------------------------------------------------------------------


def _standard(dataset: Dataset, plan: SplitPlan, pool: np.ndarray):
    if not dataset.is_categorical:
        raise ValueError("standard split needs categorical labels")
    labels = dataset.labels[pool]
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("standard split needs at least two classes (balanced test undefined)")
    counts = {int(c): int(np.sum(labels == c)) for c in classes}
    for c, n_c in counts.items():
        if n_c < 3:
            raise ValueError(f"class {c} has {n_c} samples; standard split needs >= 3")
    n_min = min(counts.values())
    _, f_valid, f_test = plan.fractions
    c_test = max(1, math.floor(f_test * n_min))
    c_valid = max(1, math.floor(f_valid * n_min))
    rng = make_rng(plan.seed, "standard")
    train, valid, test = [], [], []
    for c in classes:
        members = pool[labels == c]
        if members.size < c_test + c_valid + 1:
            raise ValueError(
                f"class {int(c)} has {members.size} samples, needs {c_test + c_valid + 1}"
            )
        perm = rng.permutation(members)
        test.append(perm[:c_test])
        valid.append(perm[c_test:c_test + c_valid])
        train.append(perm[c_test + c_valid:])
    return np.concatenate(train), np.concatenate(valid), np.concatenate(test)


def _cut_sizes(n, fractions):
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    n_valid = min(n_valid, n - n_train)
    return n_train, n_valid


def _random(dataset: Dataset, plan: SplitPlan, pool: np.ndarray):
    rng = make_rng(plan.seed, "random")
    perm = rng.permutation(pool)
    n_train, n_valid = _cut_sizes(perm.size, plan.fractions)
    return perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:]


def _temporal(dataset: Dataset, plan: SplitPlan, pool: np.ndarray):
    if dataset.timestamp is None:
        raise ValueError("temporal split needs timestamps")
    ts = dataset.timestamp[pool]
    if ts.size and ts.min() == ts.max():
        raise ValueError("all timestamps are equal; no temporal order")
    order = np.argsort(ts, kind="stable")
    srt = pool[order]
    ts_sorted = ts[order]
    n = srt.size
    if plan.cutoffs is not None:
        if len(plan.cutoffs) != 2:
            raise ValueError("temporal cutoffs must be (train_end, valid_end)")
        # train: ts <= cutoffs[0]; valid: cutoffs[0] < ts <= cutoffs[1]
        train_end = int(np.searchsorted(ts_sorted, plan.cutoffs[0], side="right"))
        valid_end = int(np.searchsorted(ts_sorted, plan.cutoffs[1], side="right"))
    else:
        n_train, n_valid = _cut_sizes(n, plan.fractions)

        def _boundary(k):
            # every sample sharing the timestamp at position k-1 joins the earlier side
            if k <= 0:
                return 0
            return int(np.searchsorted(ts_sorted, ts_sorted[min(k, n) - 1], side="right"))

        train_end = _boundary(n_train)
        valid_end = max(train_end, _boundary(n_train + n_valid))
    if valid_end == train_end:
        warnings.warn("temporal split: boundary ties leave the validation set empty")
    if valid_end >= n:
        warnings.warn("temporal split: boundary ties leave the test set empty")
    return srt[:train_end], srt[train_end:valid_end], srt[valid_end:]


def _group(dataset: Dataset, plan: SplitPlan, pool: np.ndarray):
    if dataset.group_key is None:
        raise ValueError("group split needs group keys")
    keys = [dataset.group_key[i] for i in pool]
    groups: dict = {}
    for idx, key in zip(pool, keys):
        groups.setdefault(key, []).append(int(idx))
    names = sorted(groups)
    rng = make_rng(plan.seed, "group")
    shuffled = [names[i] for i in rng.permutation(len(names))]
    # stable sort keeps the seeded order among equal-size groups
    shuffled.sort(key=lambda g: -len(groups[g]))
    targets = np.asarray(plan.fractions) * pool.size
    filled = np.zeros(3)
    parts = ([], [], [])
    for g in shuffled:
        deficit = targets - filled
        j = int(np.argmax(deficit))
        parts[j].extend(groups[g])
        filled[j] += len(groups[g])
    return tuple(np.asarray(p, dtype=np.int64) for p in parts)


_BASE = {"standard": _standard, "random": _random, "temporal": _temporal, "group": _group}


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _check_base(plan, expected):
    if plan.base_method != expected:
        raise ValueError(f"plan method {plan.method!r} is not {expected!r}")


def standard_split(dataset: Dataset, plan: SplitPlan) -> SplitResult:
    _check_base(plan, "standard")
    return _result(*_standard(dataset, plan, np.arange(len(dataset))), plan)


def random_split(dataset: Dataset, plan: SplitPlan) -> SplitResult:
    _check_base(plan, "random")
    return _result(*_random(dataset, plan, np.arange(len(dataset))), plan)


def temporal_split(dataset: Dataset, plan: SplitPlan) -> SplitResult:
    _check_base(plan, "temporal")
    return _result(*_temporal(dataset, plan, np.arange(len(dataset))), plan)


def group_split(dataset: Dataset, plan: SplitPlan) -> SplitResult:
    _check_base(plan, "group")
    return _result(*_group(dataset, plan, np.arange(len(dataset))), plan)


def open_classes_for(counts, open_fraction: float) -> tuple:
    """The ceil(open_fraction * K) smallest classes, lower index first on ties."""
    counts = np.asarray(counts)
    K = counts.size
    n_open = math.ceil(open_fraction * K - 1e-12) if open_fraction > 0 else 0
    if n_open >= K - 1 and n_open > 0:
        raise ValueError(f"holding out {n_open} of {K} classes leaves nothing to train")
    order = np.lexsort((np.arange(K), counts))
    return tuple(sorted(int(c) for c in order[:n_open]))


def open_holdout(dataset: Dataset, plan: SplitPlan) -> SplitResult:
    if not dataset.is_categorical:
        raise ValueError("open split needs categorical labels")
    K = dataset.num_classes
    if K < 3:
        raise ValueError("open split needs K >= 3")
    counts = np.bincount(dataset.labels, minlength=K)
    held = open_classes_for(counts, plan.open_fraction)
    is_open = np.isin(dataset.labels, held)
    pool = np.flatnonzero(~is_open)
    train, valid, test = _BASE[plan.base_method](dataset, plan, pool)
    test = np.concatenate([test, np.flatnonzero(is_open)])
    return _result(train, valid, test, plan, held)


def split_dataset(dataset: Dataset, plan: SplitPlan) -> SplitResult:
    if plan.is_open:
        return open_holdout(dataset, plan)
    return _result(*_BASE[plan.base_method](dataset, plan, np.arange(len(dataset))), plan)
