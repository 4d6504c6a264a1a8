"""Evaluation metrics for imbalanced classification and regression.

Balanced accuracy and balanced F1 are computed from per-class conditional
rates (row-normalized confusion counts), which makes them invariant to the
label distribution of the evaluated set.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .core import PARTITION_TAGS, ClassStats, ConfusionMatrix


@dataclass
class MetricReport:
    values: dict = field(default_factory=dict)
    subsets: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def __contains__(self, key):
        return key in self.values

    def to_dict(self) -> dict:
        out = dict(self.values)
        if self.subsets:
            out["subsets"] = {name: sub.to_dict() for name, sub in self.subsets.items()}
        if self.meta:
            out["meta"] = self.meta
        return out

    def to_json(self) -> str:
        return dumps_17(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        data = dict(data)
        subsets = {k: cls.from_dict(v) for k, v in data.pop("subsets", {}).items()}
        meta = data.pop("meta", {})
        values = {k: (math.nan if v is None else v) for k, v in data.items()}
        return cls(values=values, subsets=subsets, meta=meta)


def _fmt(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return "null"
        return format(v, ".17g")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_fmt(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[" + ", ".join(_fmt(v, indent, level + 1) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_17(obj, indent: int = 2) -> str:
    """JSON with every float written at 17 significant digits; NaN becomes null."""
    return _fmt(obj, indent, 0) + "\n"


# ---------------------------------------------------------------------------
# Balanced classification metrics
# ---------------------------------------------------------------------------


def _rates(cm: ConfusionMatrix, support=None, strict: bool = True) -> np.ndarray:
    """Row-normalized counts; rows without support are zero unless ``strict``."""
    support = cm.support() if support is None else np.asarray(support)
    if strict and np.any(support <= 0):
        k = int(np.flatnonzero(support <= 0)[0])
        raise ValueError(f"class {k} has no true samples; recall undefined")
    denom = np.where(support > 0, support, 1).astype(np.float64)
    return cm.counts / denom[:, None]


def per_class_recall(cm: ConfusionMatrix, strict: bool = True) -> np.ndarray:
    return np.diag(_rates(cm, strict=strict)).copy()


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    return float(np.mean(per_class_recall(cm)))


def _support_from(cm: ConfusionMatrix, stats: Optional[ClassStats]):
    if stats is None:
        return cm.support()
    if stats.num_classes != cm.K:
        raise ValueError(f"stats describe {stats.num_classes} classes, confusion matrix has {cm.K}")
    return stats.counts


def _balanced_precisions(cm: ConfusionMatrix, stats: Optional[ClassStats] = None,
                         strict: bool = True) -> np.ndarray:
    # TP_k / (TP_k + sum_j (n_k/n_j) FP_{j->k}) divided through by n_k: diag
    # rate over the column sum of conditional rates.
    rates = _rates(cm, _support_from(cm, stats), strict)
    col = rates.sum(axis=0)
    diag = np.diag(rates)
    out = np.zeros(cm.K)
    nz = col > 0
    out[nz] = diag[nz] / col[nz]
    if cm.K == 1 and not nz[0]:
        out[0] = 1.0
    return out


def balanced_precision(cm: ConfusionMatrix, stats: Optional[ClassStats], k: int) -> float:
    """Precision of class ``k`` with cross-class false positives rescaled by n_k/n_j.

    ``stats`` supplies the class counts of the evaluated set; when omitted they
    are the row sums of ``cm``. A class never predicted scores 0.
    """
    if not 0 <= k < cm.K:
        raise ValueError(f"class {k} outside 0..{cm.K - 1}")
    return float(_balanced_precisions(cm, stats)[k])


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    s = a + b
    out = np.zeros_like(s)
    nz = s > 0
    out[nz] = 2.0 * a[nz] * b[nz] / s[nz]
    return out


def balanced_f1_per_class(cm: ConfusionMatrix, stats: Optional[ClassStats] = None,
                          strict: bool = True) -> np.ndarray:
    rec = np.diag(_rates(cm, _support_from(cm, stats), strict))
    return _harmonic(rec, _balanced_precisions(cm, stats, strict))


def balanced_f1(cm: ConfusionMatrix, stats: Optional[ClassStats] = None) -> float:
    return float(np.mean(balanced_f1_per_class(cm, stats)))


# ---------------------------------------------------------------------------
# Conventional classification metrics
# ---------------------------------------------------------------------------


def _prf(cm: ConfusionMatrix):
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    pred = c.sum(axis=0)
    sup = c.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, sup, out=np.zeros_like(tp), where=sup > 0)
    return precision, recall, _harmonic(precision, recall), sup


def cohen_kappa(cm: ConfusionMatrix) -> float:
    c = cm.counts.astype(np.float64)
    n = c.sum()
    p_o = np.trace(c) / n
    p_e = float(np.dot(c.sum(axis=1), c.sum(axis=0))) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def matthews_corrcoef(cm: ConfusionMatrix) -> float:
    c = cm.counts.astype(np.float64)
    t = c.sum(axis=1)
    p = c.sum(axis=0)
    correct = np.trace(c)
    s = c.sum()
    cov_yp = correct * s - np.dot(t, p)
    cov_pp = s * s - np.dot(p, p)
    cov_yy = s * s - np.dot(t, t)
    denom = math.sqrt(cov_pp * cov_yy)
    if denom == 0:
        return 0.0
    return float(cov_yp / denom)


def classification_report(cm: ConfusionMatrix) -> MetricReport:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    precision, recall, f1, sup = _prf(cm)
    values = {"accuracy": float(np.trace(cm.counts) / cm.total)}
    for k in range(cm.K):
        values[f"precision_{k}"] = float(precision[k])
        values[f"recall_{k}"] = float(recall[k])
        values[f"f1_{k}"] = float(f1[k])
    # Micro-averaged P = R = F1 = accuracy in single-label multi-class.
    values["micro_f1"] = values["accuracy"]
    values["macro_f1"] = float(np.mean(f1))
    values["weighted_f1"] = float(np.dot(f1, sup) / sup.sum())
    values["kappa"] = cohen_kappa(cm)
    values["mcc"] = matthews_corrcoef(cm)
    return MetricReport(values=values, meta={"K": cm.K})


def macro_f1(cm: ConfusionMatrix) -> float:
    return float(np.mean(_prf(cm)[2]))


def accuracy(cm: ConfusionMatrix) -> float:
    return float(np.trace(cm.counts) / cm.total)


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------


def _binary_auroc(score: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    ranks = rankdata(score)  # average ranks: ties count one half
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _binary_auprc(score: np.ndarray, positive: np.ndarray) -> float:
    order = np.argsort(-score, kind="stable")
    s = score[order]
    pos = positive[order].astype(np.float64)
    tp = np.cumsum(pos)
    fp = np.cumsum(1.0 - pos)
    # thresholds sit at the last index of each block of tied scores
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def _one_vs_rest(binary_fn, name, scores, true):
    scores = np.asarray(scores, dtype=np.float64)
    true = np.asarray(true, dtype=np.int64)
    if scores.ndim == 1:
        positive = true == 1
        if positive.all() or not positive.any():
            raise ValueError(f"{name} needs at least one positive and one negative sample")
        return binary_fn(scores, positive)
    if scores.shape[0] != true.shape[0]:
        raise ValueError(f"{scores.shape[0]} score rows for {true.shape[0]} labels")
    vals = []
    for k in range(scores.shape[1]):
        positive = true == k
        if positive.all() or not positive.any():
            warnings.warn(f"{name}: class {k} skipped (no positives or no negatives)")
            continue
        vals.append(binary_fn(scores[:, k], positive))
    if not vals:
        raise ValueError(f"{name} undefined: every class lacks positives or negatives")
    return float(np.mean(vals))


def auroc(scores, true) -> float:
    """Rank-statistic AUROC; 2-D scores give the unweighted one-vs-rest mean."""
    return _one_vs_rest(_binary_auroc, "auroc", scores, true)


def auprc(scores, true) -> float:
    """Step-wise average precision (no interpolation); one-vs-rest macro for 2-D scores."""
    return _one_vs_rest(_binary_auprc, "auprc", scores, true)


# ---------------------------------------------------------------------------
# Head / middle / tail breakdown
# ---------------------------------------------------------------------------


def _per_class_terms(cm: ConfusionMatrix, metric: str, strict: bool = True):
    if metric in ("balanced_accuracy", "recall"):
        return per_class_recall(cm, strict)
    if metric == "balanced_f1":
        return balanced_f1_per_class(cm, None, strict)
    if metric == "balanced_precision":
        return _balanced_precisions(cm, None, strict)
    raise ValueError(f"unknown metric {metric!r}")


def restricted_metric(cm: ConfusionMatrix, metric: str, classes, supported_only: bool = False) -> float:
    """``metric`` averaged over the per-class terms of ``classes`` only.

    With ``supported_only`` the confusion matrix may contain classes without
    true samples (they must not be listed in ``classes``).
    """
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size == 0:
        raise ValueError("no classes to average over")
    if metric == "accuracy":
        sup = cm.support()[classes]
        return float(np.diag(cm.counts)[classes].sum() / sup.sum())
    return float(np.mean(_per_class_terms(cm, metric, not supported_only)[classes]))


def subset_breakdown(cm: ConfusionMatrix, stats: ClassStats, metric: str = "balanced_accuracy",
                     extra_subsets: Optional[dict] = None) -> MetricReport:
    """Recompute ``metric`` over the classes carrying each partition tag.

    Tags come from ``stats`` (typically the training set); conditional rates
    come from ``cm``. Empty subsets are omitted with a warning.
    """
    if stats.num_classes > cm.K:
        raise ValueError(f"stats describe {stats.num_classes} classes, confusion matrix has {cm.K}")
    groups = {tag: stats.classes_tagged(tag) for tag in PARTITION_TAGS}
    if extra_subsets:
        groups.update({k: np.asarray(v, dtype=np.int64) for k, v in extra_subsets.items()})
    report = MetricReport(values={metric: restricted_metric(cm, metric, np.arange(cm.K))})
    for name, classes in groups.items():
        if classes.size == 0:
            warnings.warn(f"subset {name!r} is empty; omitted")
            continue
        report.subsets[name] = MetricReport(values={metric: restricted_metric(cm, metric, classes)})
    return report


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0:
        return math.nan
    return float(np.dot(da, db) / denom)


def regression_metrics(true, predicted) -> MetricReport:
    y = np.asarray(true, dtype=np.float64)
    yhat = np.asarray(predicted, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ValueError("no samples to evaluate")
    err = y - yhat
    mse = float(np.mean(err * err))
    values = {"mse": mse, "rmse": math.sqrt(mse), "mae": float(np.mean(np.abs(err)))}
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        warnings.warn("constant true values: r2, pcc and spearman are undefined")
        values.update(r2=math.nan, pcc=math.nan, spearman=math.nan)
        return MetricReport(values=values)
    values["r2"] = 1.0 - float(np.sum(err * err)) / ss_tot
    values["pcc"] = _pearson(y, yhat)
    values["spearman"] = _pearson(rankdata(y), rankdata(yhat))
    if math.isnan(values["pcc"]):
        warnings.warn("constant predictions: pcc and spearman are undefined")
    return MetricReport(values=values)
