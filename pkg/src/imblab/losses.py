"""Re-balancing losses with analytic gradients with respect to the logits.

Every classification loss accepts a single logit vector ``z`` of shape (K,)
with an integer label, or a batch of shape (n, K) with a label vector. For a
single vector the value is a float and the gradient has shape (K,). For a
batch, ``reduction="mean"`` returns the arithmetic mean and the gradient of
that mean; ``reduction="none"`` returns per-sample values and gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ClassStats

LOG_FLOOR = 1e-12

LOSS_KINDS = ("CE", "CS", "CB_Focal", "CB_CE", "BS", "IB", "FocalR", "DiVE", "MSE", "L1")
CLASSIFICATION_KINDS = ("CE", "CS", "CB_Focal", "CB_CE", "BS", "IB", "DiVE")
REGRESSION_KINDS = ("FocalR", "MSE", "L1")


@dataclass(frozen=True)
class LossSpec:
    """Loss kind plus its hyperparameters.

    ``gamma`` is the effective-number base for the class-balanced losses and
    the exponent of the sigmoid factor for FocalR; ``beta`` is the focal
    exponent for CB_Focal and the error scale for FocalR. ``epsilon`` floors
    the influence term of IB.
    """

    kind: str = "CE"
    gamma: float = 0.9999
    beta: float = 2.0
    lambda_kd: float = 0.5
    epsilon: float = 1e-3
    ib_mode: str = "features"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.kind in ("CB_Focal", "CB_CE") and not 0.0 < self.gamma < 1.0:
            raise ValueError(f"class-balanced gamma must lie in (0, 1), got {self.gamma}")
        if self.kind in ("CB_Focal", "FocalR") and self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.kind == "FocalR" and self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.lambda_kd <= 1.0:
            raise ValueError(f"lambda_kd must lie in [0, 1], got {self.lambda_kd}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.ib_mode not in ("features", "logits"):
            raise ValueError(f"unknown ib_mode {self.ib_mode!r}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _prepare(z, y):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    if z2.ndim != 2:
        raise ValueError(f"logits must be 1-D or 2-D, got shape {z.shape}")
    if not np.all(np.isfinite(z2)):
        raise ValueError("non-finite logits")
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape != (z2.shape[0],):
        raise ValueError(f"{y.shape[0]} labels for {z2.shape[0]} logit rows")
    K = z2.shape[1]
    if np.any((y < 0) | (y >= K)):
        raise ValueError(f"labels must lie in 0..{K - 1}")
    return z2, y, single


def _finish(values, grads, single, reduction):
    if single:
        return float(values[0]), grads[0]
    if reduction == "none":
        return values, grads
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    n = values.shape[0]
    return float(np.mean(values)), grads / n


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = np.asarray(z, dtype=np.float64)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _onehot(y, K):
    out = np.zeros((y.shape[0], K))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _ce_parts(z2, y):
    logp = log_softmax(z2)
    rows = np.arange(y.shape[0])
    value = -logp[rows, y]
    grad = np.exp(logp) - _onehot(y, z2.shape[1])
    return value, grad, np.exp(logp)


def _freq(stats: ClassStats, y, K):
    if stats.num_classes != K:
        raise ValueError(f"stats describe {stats.num_classes} classes, logits have {K}")
    pi = stats.frequencies[y]
    if np.any(pi <= 0):
        raise ValueError(f"class {int(y[np.argmin(pi)])} unseen in training statistics")
    return pi


# ---------------------------------------------------------------------------
# classification losses
# ---------------------------------------------------------------------------


def softmax_ce(z, y, reduction="mean"):
    z2, y, single = _prepare(z, y)
    value, grad, _ = _ce_parts(z2, y)
    return _finish(value, grad, single, reduction)


def cost_sensitive(z, y, stats: ClassStats, reduction="mean"):
    z2, y, single = _prepare(z, y)
    w = 1.0 / _freq(stats, y, z2.shape[1])
    value, grad, _ = _ce_parts(z2, y)
    return _finish(w * value, w[:, None] * grad, single, reduction)


def class_balanced_weight(n_y, gamma: float):
    """(1 - gamma) / (1 - gamma**n_y), the inverse effective number."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    n_y = np.asarray(n_y, dtype=np.float64)
    # -expm1(n log g) == 1 - g**n without cancellation for g near 1
    return -np.expm1(np.log(gamma)) / -np.expm1(n_y * np.log(gamma))


def class_balanced(z, y, stats: ClassStats, gamma: float, beta: float = 0.0,
                   variant: str = "focal", reduction="mean"):
    if variant not in ("focal", "ce"):
        raise ValueError(f"unknown variant {variant!r}")
    z2, y, single = _prepare(z, y)
    K = z2.shape[1]
    if stats.num_classes != K:
        raise ValueError(f"stats describe {stats.num_classes} classes, logits have {K}")
    counts = stats.counts[y]
    if np.any(counts < 1):
        raise ValueError("class-balanced weight needs n_y >= 1")
    w = class_balanced_weight(counts, gamma)
    ce, ce_grad, p = _ce_parts(z2, y)
    if variant == "ce" or beta == 0:
        return _finish(w * ce, w[:, None] * ce_grad, single, reduction)
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    rows = np.arange(y.shape[0])
    p_y = p[rows, y]
    q = 1.0 - p_y
    focal = q ** beta
    value = w * focal * ce
    # d/dz [ -(1-p_y)^b log p_y ] = -[(1-p_y)^b - b (1-p_y)^(b-1) p_y log p_y] (onehot - p)
    with np.errstate(divide="ignore", invalid="ignore"):
        dfocal = np.where(q > 0, beta * q ** (beta - 1.0) * p_y * ce, 0.0)
    coef = w * (focal + dfocal)
    grad = coef[:, None] * ce_grad
    return _finish(value, grad, single, reduction)


def balanced_softmax(z, y, stats: ClassStats, reduction="mean"):
    z2, y, single = _prepare(z, y)
    if stats.num_classes != z2.shape[1]:
        raise ValueError(f"stats describe {stats.num_classes} classes, logits have {z2.shape[1]}")
    if np.any(stats.frequencies <= 0):
        raise ValueError("balanced softmax needs every class frequency > 0")
    value, grad, _ = _ce_parts(z2 + np.log(stats.frequencies), y)
    return _finish(value, grad, single, reduction)


def influence(z, y, features=None, mode: str = "features") -> np.ndarray:
    """Per-sample influence magnitude used by IB.

    ``features`` mode returns ||p - onehot(y)||_1 * ||features||_1, the L1 norm
    of the final-layer weight gradient; ``logits`` mode drops the feature norm.
    """
    z2, y, _ = _prepare(z, y)
    _, grad, _ = _ce_parts(z2, y)
    infl = np.abs(grad).sum(axis=1)
    if mode == "features":
        if features is None:
            raise ValueError("features mode needs penultimate features")
        f = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if not np.all(np.isfinite(f)):
            raise ValueError("non-finite features")
        infl = infl * np.abs(f).sum(axis=1)
    elif mode != "logits":
        raise ValueError(f"unknown mode {mode!r}")
    return infl


def influence_balanced(z, y, stats: ClassStats, features=None, epsilon: float = 1e-3,
                       mode: str = "features", influence_value=None, reduction="mean"):
    """CE divided by pi_y times the floored influence.

    The influence is a stop-gradient weight; pass ``influence_value`` to hold
    it fixed (e.g. when differentiating numerically).
    """
    z2, y, single = _prepare(z, y)
    pi = _freq(stats, y, z2.shape[1])
    if influence_value is None:
        infl = influence(z2, y, features, mode)
    else:
        infl = np.atleast_1d(np.asarray(influence_value, dtype=np.float64))
    w = 1.0 / (pi * np.maximum(infl, epsilon))
    value, grad, _ = _ce_parts(z2, y)
    return _finish(w * value, w[:, None] * grad, single, reduction)


def dive_kd(student_z, teacher_p, y, lambda_kd: float, reduction="mean"):
    """(1 - lam) CE(hard label) + lam KL(teacher || softmax(student))."""
    if not 0.0 <= lambda_kd <= 1.0:
        raise ValueError(f"lambda_kd must lie in [0, 1], got {lambda_kd}")
    z2, y, single = _prepare(student_z, y)
    t = np.atleast_2d(np.asarray(teacher_p, dtype=np.float64))
    if t.shape != z2.shape:
        raise ValueError(f"teacher shape {t.shape} does not match logits {z2.shape}")
    if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("teacher_p must be a probability distribution per row")
    logs = log_softmax(z2)
    s = np.exp(logs)
    rows = np.arange(y.shape[0])
    ce = -logs[rows, y]
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = np.where(t > 0, np.log(np.maximum(t, LOG_FLOOR)), 0.0)
    kl = np.sum(np.where(t > 0, t * (logt - logs), 0.0), axis=1)
    value = (1.0 - lambda_kd) * ce + lambda_kd * kl
    grad = (1.0 - lambda_kd) * (s - _onehot(y, z2.shape[1])) + lambda_kd * (s - t)
    return _finish(value, grad, single, reduction)


# ---------------------------------------------------------------------------
# regression losses
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _reg_finish(values, grads, scalar, reduction):
    if scalar:
        return float(values[0]), float(grads[0])
    if reduction == "none":
        return values, grads
    return float(np.mean(values)), grads / values.shape[0]


def _reg_prepare(predicted, target):
    pred = np.atleast_1d(np.asarray(predicted, dtype=np.float64))
    tgt = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if pred.shape != tgt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {tgt.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(tgt))):
        raise ValueError("non-finite regression inputs")
    return pred, tgt, np.ndim(predicted) == 0


def focal_r(predicted, target, beta: float = 0.2, gamma: float = 1.0, reduction="mean"):
    """sigmoid(beta |e|)^gamma * |e| with e = predicted - target."""
    if beta < 0 or gamma < 0:
        raise ValueError("beta and gamma must be >= 0")
    pred, tgt, scalar = _reg_prepare(predicted, target)
    e = pred - tgt
    a = np.abs(e)
    sig = _sigmoid(beta * a)
    scale = sig ** gamma
    values = scale * a
    grads = np.sign(e) * scale * (1.0 + gamma * beta * a * (1.0 - sig))
    return _reg_finish(values, grads, scalar, reduction)


def mse_loss(predicted, target, reduction="mean"):
    pred, tgt, scalar = _reg_prepare(predicted, target)
    e = pred - tgt
    return _reg_finish(e * e, 2.0 * e, scalar, reduction)


def l1_loss(predicted, target, reduction="mean"):
    pred, tgt, scalar = _reg_prepare(predicted, target)
    e = pred - tgt
    return _reg_finish(np.abs(e), np.sign(e), scalar, reduction)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def evaluate_loss(spec: LossSpec, z, y, stats: Optional[ClassStats] = None, features=None,
                  teacher_p=None, reduction="none"):
    """Per-sample (or reduced) loss values and logit gradients for ``spec``."""
    kind = spec.kind
    if kind == "CE":
        return softmax_ce(z, y, reduction)
    if kind == "CS":
        return cost_sensitive(z, y, stats, reduction)
    if kind == "CB_CE":
        return class_balanced(z, y, stats, spec.gamma, 0.0, "ce", reduction)
    if kind == "CB_Focal":
        return class_balanced(z, y, stats, spec.gamma, spec.beta, "focal", reduction)
    if kind == "BS":
        return balanced_softmax(z, y, stats, reduction)
    if kind == "IB":
        return influence_balanced(z, y, stats, features, spec.epsilon, spec.ib_mode,
                                  reduction=reduction)
    if kind == "DiVE":
        if teacher_p is None:
            raise ValueError("DiVE needs teacher probabilities")
        return dive_kd(z, teacher_p, y, spec.lambda_kd, reduction)
    if kind == "FocalR":
        return focal_r(z, y, spec.beta, spec.gamma, reduction)
    if kind == "MSE":
        return mse_loss(z, y, reduction)
    if kind == "L1":
        return l1_loss(z, y, reduction)
    raise ValueError(f"unknown loss kind {kind!r}")
