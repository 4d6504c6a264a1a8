"""Training loop and evaluation for the MLP baselines."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..core import ClassStats, Dataset, build_class_stats, confusion_from_predictions, make_rng, \
    partition_by_counts, PARTITION_TAGS
from ..losses import LossSpec, evaluate_loss, softmax, CLASSIFICATION_KINDS, REGRESSION_KINDS
from ..metrics import MetricReport, auprc, auroc, balanced_accuracy, balanced_f1, \
    classification_report, regression_metrics, restricted_metric
from ..regimbal import BinScheme, KernelSpec, bin_labels, fds_scale, fds_statistics, \
    lds_smooth, lds_weights
from ..sampling import CombinerSpec, SamplerSpec, bbn_beta, remix_label_weight, sample_batch
from ..splits import SplitResult
from .heads import OpenHead, cdt_temperatures, oltr_fit_centroids, open_decision
from .model import MLP, classify, encode, encoder_backward, init_mlp, mlp_forward, \
    reinit_classifier
from .optim import OptimizerState, adam_step

SETTINGS = ("imbalanced_cls", "lt_cls", "open_lt", "imbalanced_reg")


class TrainingDiverged(RuntimeError):
    """Raised when a batch loss becomes non-finite.

    ``model`` holds the last parameters with a finite loss and ``history``
    the completed epochs.
    """

    def __init__(self, epoch, model, history):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch
        self.model = model
        self.history = history


@dataclass(frozen=True)
class TwoStage:
    drw: bool = False
    drs: bool = False
    start_epoch: int = 10


@dataclass(frozen=True)
class RegressionConfig:
    bins: int = 50
    bin_strategy: str = "equal_width"
    lds: Optional[KernelSpec] = None
    fds: Optional[KernelSpec] = None


@dataclass(frozen=True)
class TrainConfig:
    task: str = "classification"
    hidden: tuple = (1024, 256, 64)
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    momentum: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 2e-4
    warmup_epochs: int = 20
    warmup_factor: float = 0.01
    loss: LossSpec = field(default_factory=LossSpec)
    sampler: str = "instance_balanced"
    combiner: CombinerSpec = field(default_factory=CombinerSpec)
    two_stage: TwoStage = field(default_factory=TwoStage)
    decoupling: bool = False
    cdt_gamma: Optional[float] = None
    open_percentile: float = 95.0
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    select_best: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.two_stage.start_epoch < 0:
            raise ValueError("two_stage.start_epoch must be >= 0")
        # start_epoch == epochs is allowed: the switch simply never fires
        switching = self.two_stage.drw or self.two_stage.drs or self.decoupling
        if switching and self.two_stage.start_epoch > self.epochs:
            raise ValueError("two_stage.start_epoch must not exceed epochs")
        kinds = CLASSIFICATION_KINDS if self.task == "classification" else REGRESSION_KINDS
        if self.loss.kind not in kinds:
            raise ValueError(f"loss {self.loss.kind} does not apply to {self.task}")
        if self.task == "regression" and (self.combiner.kind != "none" or self.cdt_gamma):
            raise ValueError("combiners and CDT apply to classification only")
        if self.loss.kind == "DiVE" and self.combiner.kind != "none":
            raise ValueError("DiVE distillation does not combine with a sample combiner")
        if self.combiner.kind == "bbn" and (self.decoupling or self.two_stage.drs):
            raise ValueError("BBN uses its own samplers; drop decoupling/drs")


@dataclass
class TrainResult:
    model: MLP
    history: list
    best_epoch: int
    classes: np.ndarray  # original label of each model output (classification)
    train_stats: Optional[ClassStats] = None
    open_head: Optional[OpenHead] = None
    bins: Optional[BinScheme] = None
    teacher: Optional[MLP] = None


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def closed_classes(dataset: Dataset, split: SplitResult) -> np.ndarray:
    return np.array([c for c in range(dataset.num_classes) if c not in set(split.open_classes)],
                    dtype=np.int64)


def _label_map(classes: np.ndarray, K: int) -> np.ndarray:
    """Original label -> model output index; open classes map to len(classes)."""
    m = np.full(K, classes.size, dtype=np.int64)
    m[classes] = np.arange(classes.size)
    return m


def _batches(n, batch_size):
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def _loss(spec, z, y_a, y_b, w_a, stats, feats, teacher_p, sample_w):
    if not np.all(np.isfinite(z)):
        return math.nan, None
    va, ga = evaluate_loss(spec, z, y_a, stats, feats, teacher_p, reduction="none")
    if y_b is not None:
        vb, gb = evaluate_loss(spec, z, y_b, stats, feats, teacher_p, reduction="none")
        wa = w_a if ga.ndim == 1 else w_a[:, None]
        va = w_a * va + (1.0 - w_a) * vb
        ga = wa * ga + (1.0 - wa) * gb
    if sample_w is not None:
        va = va * sample_w
        ga = ga * (sample_w if ga.ndim == 1 else sample_w[:, None])
    n = va.shape[0]
    return float(np.mean(va)), ga / n


def _flatten(enc_grads, dW, db):
    out = []
    for pair in enc_grads:
        out.extend(pair)
    return out + [dW, db]


def _valid_score(model, dataset, idx, classes_map, task, label_mu, label_sd):
    """Validation BA over the classes present (classification) or MAE (regression)."""
    if idx.size == 0:
        return math.nan
    X = dataset.features[idx]
    out, _ = mlp_forward(model, X)
    if task == "regression":
        pred = out * label_sd + label_mu
        return float(np.mean(np.abs(pred - dataset.labels[idx])))
    y = classes_map[dataset.labels[idx]]
    pred = np.argmax(out, axis=1)
    K = out.shape[1]
    keep = y < K
    cm = confusion_from_predictions(y[keep], pred[keep], K)
    return balanced_accuracy_supported(cm)


def balanced_accuracy_supported(cm) -> float:
    present = np.flatnonzero(cm.support() > 0)
    return restricted_metric(cm, "balanced_accuracy", present, supported_only=True)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def train(dataset: Dataset, split: SplitResult, config: TrainConfig) -> TrainResult:
    """Fit an MLP on ``split.train`` following ``config``.

    The returned model is the best validation epoch when ``select_best`` is
    set and a validation set exists, otherwise the final epoch.
    """
    if split.train.size == 0:
        raise ValueError("empty training split")
    n_total = len(dataset)
    for name in ("train", "valid", "test"):
        idx = getattr(split, name)
        if idx.size and (idx.min() < 0 or idx.max() >= n_total):
            raise ValueError(f"{name} indices out of range")
    if config.task == "regression":
        if dataset.is_categorical:
            raise ValueError("regression task needs continuous labels")
        return _train_regression(dataset, split, config)
    if not dataset.is_categorical:
        raise ValueError("classification task needs categorical labels")
    teacher = None
    if config.loss.kind == "DiVE":
        teacher_cfg = replace(config, loss=LossSpec("CE"), sampler="class_balanced",
                              two_stage=TwoStage(), decoupling=False, cdt_gamma=None,
                              seed=int(make_rng(config.seed, "teacher").integers(2**62)))
        teacher = _train_classifier(dataset, split, teacher_cfg, None).model
    result = _train_classifier(dataset, split, config, teacher)
    result.teacher = teacher
    return result


def _train_classifier(dataset, split, config: TrainConfig, teacher: Optional[MLP]) -> TrainResult:
    classes = closed_classes(dataset, split)
    cmap = _label_map(classes, dataset.num_classes)
    train_idx = split.train
    y_train = cmap[dataset.labels[train_idx]]
    if np.any(y_train >= classes.size):
        raise ValueError("open classes leaked into the training split")
    K = classes.size
    stats = build_class_stats(y_train, K)
    X_train = dataset.features[train_idx]
    n = train_idx.size

    is_bbn = config.combiner.kind == "bbn"
    model = init_mlp(dataset.n_features, config.hidden, K, config.seed,
                     head="cdt" if config.cdt_gamma else "linear", branch=is_bbn)
    model.meta = {"classes": [int(c) for c in classes], "task": "classification"}
    temps = None
    if config.cdt_gamma:
        temps = cdt_temperatures(stats, config.cdt_gamma)
        model.temperatures = temps
    teacher_p = None
    if teacher is not None:
        teacher_p = softmax(mlp_forward(teacher, X_train)[0])

    opt = _optimizer(config)
    rng = make_rng(config.seed, "train")
    history = []
    best = (-math.inf, -1, model.copy())
    start = config.two_stage.start_epoch
    ts = config.two_stage
    ib_warmup = config.loss.kind == "IB"

    for epoch in range(config.epochs):
        opt.epoch = epoch
        late = epoch >= start
        loss_spec = config.loss
        if (ts.drw or ib_warmup) and not late:
            loss_spec = LossSpec("CE")
        stage2 = config.decoupling and late
        if config.decoupling and epoch == start:
            reinit_classifier(model, config.seed)
            opt = _optimizer(config)
            opt.epoch = epoch
        if stage2:
            sampler = "class_balanced"
        elif config.decoupling:
            sampler = "instance_balanced"
        elif ts.drs:
            sampler = "class_balanced" if late else "instance_balanced"
        else:
            sampler = config.sampler

        losses = []
        if is_bbn:
            beta = bbn_beta(epoch, config.epochs, config.combiner.bbn_schedule)
            for sl in _batches(n, config.batch_size):
                perm = rng.permutation(n)[: sl.stop - sl.start]
                rev = sample_batch(SamplerSpec("reversed"), stats, y_train, perm.size, rng)
                val = _bbn_step(model, opt, X_train, y_train, perm, rev, beta, loss_spec, stats, temps)
                losses.append(val)
                if not math.isfinite(val):
                    raise TrainingDiverged(epoch, best[2], history)
        else:
            for batch in _epoch_batches(sampler, epoch, config, stats, y_train, rng):
                val = _cls_step(model, opt, X_train, y_train, batch, loss_spec, stats, temps,
                                config.combiner, teacher_p, rng, classifier_only=stage2)
                losses.append(val)
                if not math.isfinite(val):
                    raise TrainingDiverged(epoch, best[2], history)

        score = _valid_score(model, dataset, split.valid, cmap, "classification", 0.0, 1.0)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                         "valid_BA": score, "lr": opt.current_lr()})
        if not config.select_best or math.isnan(score):
            best = (score, epoch, model)
        elif score > best[0]:
            best = (score, epoch, model.copy())

    final = best[2] if config.epochs else model
    final = final.copy()
    head = None
    if split.open_classes:
        feats, _ = encode(final, X_train)
        head = oltr_fit_centroids(feats, y_train, K, config.open_percentile)
    return TrainResult(model=final, history=history, best_epoch=best[1], classes=classes,
                       train_stats=stats, open_head=head)


def _optimizer(config):
    return OptimizerState(lr=config.lr, beta1=config.momentum, beta2=config.beta2,
                          weight_decay=config.weight_decay, warmup_epochs=config.warmup_epochs,
                          warmup_factor=config.warmup_factor)


def _epoch_batches(sampler, epoch, config, stats, y_train, rng):
    n = y_train.size
    if sampler == "instance_balanced":
        perm = rng.permutation(n)
        return [perm[sl] for sl in _batches(n, config.batch_size)]
    spec = SamplerSpec(sampler, t=epoch, T=max(config.epochs, 1))
    return [sample_batch(spec, stats, y_train, sl.stop - sl.start, rng)
            for sl in _batches(n, config.batch_size)]


def _cls_step(model, opt, X, y, batch, loss_spec, stats, temps, combiner, teacher_p, rng,
              classifier_only=False):
    feats, acts = encode(model, X[batch])
    yb = y[batch]
    y_b = w_a = None
    mixed = feats
    if combiner.kind in ("mixup", "remix"):
        perm = rng.permutation(batch.size)
        lam = rng.beta(combiner.alpha, combiner.alpha, size=batch.size)
        mixed = lam[:, None] * feats + (1.0 - lam[:, None]) * feats[perm]
        y_b = yb[perm]
        w_a = lam
        if combiner.kind == "remix":
            w_a = remix_label_weight(lam, stats.counts[yb], stats.counts[y_b],
                                     combiner.kappa, combiner.tau)
    z = classify(model, mixed)
    if temps is not None:
        z = z / temps
    tp = None if teacher_p is None else teacher_p[batch]
    val, gz = _loss(loss_spec, z, yb, y_b, w_a, stats, mixed, tp, None)
    if not math.isfinite(val):
        return val
    if temps is not None:
        gz = gz / temps
    W = model.weights[-1]
    dW = mixed.T @ gz
    db = gz.sum(axis=0)
    if classifier_only:
        adam_step(opt, [model.weights[-1], model.biases[-1]], [dW, db])
        return val
    g_mixed = gz @ W.T
    if combiner.kind in ("mixup", "remix"):
        g_feats = lam[:, None] * g_mixed
        np.add.at(g_feats, perm, (1.0 - lam[:, None]) * g_mixed)
    else:
        g_feats = g_mixed
    enc, _ = encoder_backward(model, acts, g_feats)
    adam_step(opt, model.params(), _flatten(enc, dW, db))
    return val


def _bbn_step(model, opt, X, y, conv_idx, rev_idx, beta, loss_spec, stats, temps):
    f_c, acts_c = encode(model, X[conv_idx])
    f_r, acts_r = encode(model, X[rev_idx])
    z = beta * classify(model, f_c) + (1.0 - beta) * classify(model, f_r, branch=True)
    if temps is not None:
        z = z / temps
    w_a = np.full(conv_idx.size, beta)
    val, gz = _loss(loss_spec, z, y[conv_idx], y[rev_idx], w_a, stats, f_c, None, None)
    if not math.isfinite(val):
        return val
    if temps is not None:
        gz = gz / temps
    g_c = beta * gz
    g_r = (1.0 - beta) * gz
    dWc, dbc = f_c.T @ g_c, g_c.sum(axis=0)
    dWr, dbr = f_r.T @ g_r, g_r.sum(axis=0)
    enc_c, _ = encoder_backward(model, acts_c, g_c @ model.weights[-1].T)
    enc_r, _ = encoder_backward(model, acts_r, g_r @ model.branch_weight.T)
    enc = [(a[0] + b[0], a[1] + b[1]) for a, b in zip(enc_c, enc_r)]
    adam_step(opt, model.params(), _flatten(enc, dWc, dbc) + [dWr, dbr])
    return val


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


def _train_regression(dataset: Dataset, split: SplitResult, config: TrainConfig) -> TrainResult:
    rc = config.regression
    train_idx = split.train
    X = dataset.features[train_idx]
    y_raw = dataset.labels[train_idx]
    mu = float(y_raw.mean())
    sd = float(y_raw.std()) or 1.0
    y = (y_raw - mu) / sd
    scheme, bin_idx = bin_labels(y_raw, rc.bins, rc.bin_strategy)
    sample_w = None
    if rc.lds is not None:
        counts = np.bincount(bin_idx, minlength=scheme.B)
        sample_w = lds_weights(bin_idx, lds_smooth(counts, rc.lds))
    model = init_mlp(dataset.n_features, config.hidden, 1, config.seed, head="regression")
    model.meta = {"task": "regression", "label_mean": mu, "label_std": sd,
                  "bins": rc.bins, "bin_strategy": rc.bin_strategy}
    opt = _optimizer(config)
    rng = make_rng(config.seed, "train")
    n = train_idx.size
    history = []
    best = (math.inf, -1, model.copy())
    fds_stats = None
    for epoch in range(config.epochs):
        opt.epoch = epoch
        losses = []
        perm = rng.permutation(n)
        for sl in _batches(n, config.batch_size):
            b = perm[sl]
            feats, acts = encode(model, X[b])
            scale = None
            if fds_stats is not None:
                scale = fds_scale(fds_stats, bin_idx[b])
                feats = (feats - fds_stats.mean[bin_idx[b]]) * scale + \
                    fds_stats.smoothed_mean[bin_idx[b]]
            z = classify(model, feats)[:, 0]
            sw = None if sample_w is None else sample_w[b]
            val, gz = _loss(config.loss, z, y[b], None, None, None, None, None, sw)
            losses.append(val)
            if not math.isfinite(val):
                raise TrainingDiverged(epoch, best[2], history)
            g2 = gz[:, None]
            dW, db = feats.T @ g2, g2.sum(axis=0)
            g_feats = g2 @ model.weights[-1].T
            if scale is not None:
                g_feats = g_feats * scale
            enc, _ = encoder_backward(model, acts, g_feats)
            adam_step(opt, model.params(), _flatten(enc, dW, db))
        if rc.fds is not None:
            feats_all, _ = encode(model, X)
            fds_stats = fds_statistics(feats_all, bin_idx, rc.fds, B=scheme.B)
        mae = _valid_score(model, dataset, split.valid, None, "regression", mu, sd)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "valid_MAE": mae, "lr": opt.current_lr()})
        if not config.select_best or math.isnan(mae):
            best = (mae, epoch, model)
        elif mae < best[0]:
            best = (mae, epoch, model.copy())
    final = (best[2] if config.epochs else model).copy()
    return TrainResult(model=final, history=history, best_epoch=best[1], classes=np.array([]),
                       bins=scheme)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(model: MLP, dataset: Dataset, split: SplitResult, setting: str,
             head: Optional[OpenHead] = None, indices=None) -> MetricReport:
    """Metric report on ``split.test`` (or on ``indices`` when given)."""
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; expected one of {SETTINGS}")
    idx = split.test if indices is None else np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("nothing to evaluate: empty test split")
    meta = {"setting": setting, "split": split.plan.method, "seed": split.plan.seed,
            "n_test": int(idx.size)}
    if setting == "imbalanced_reg":
        if dataset.is_categorical:
            raise ValueError("regression setting needs continuous labels")
        return _evaluate_regression(model, dataset, split, idx, meta)
    if not dataset.is_categorical:
        raise ValueError("classification settings need categorical labels")
    if setting == "open_lt" and head is None:
        raise ValueError("open_lt evaluation needs a fitted OpenHead")
    classes = np.asarray(model.meta.get("classes", range(model.out_dim)), dtype=np.int64)
    cmap = _label_map(classes, dataset.num_classes)
    K = classes.size
    train_stats = build_class_stats(cmap[dataset.labels[split.train]], K)
    y = cmap[dataset.labels[idx]]
    logits, acts = mlp_forward(model, dataset.features[idx])
    if setting == "open_lt":
        pred = open_decision(head, acts[-1], logits)
        n_out = K + 1
    else:
        if np.any(y >= K):
            raise ValueError("test split contains open classes; use the open_lt setting")
        pred = np.argmax(logits, axis=1)
        n_out = K
    cm = confusion_from_predictions(y, pred, n_out)
    present = np.flatnonzero(cm.support() > 0)
    if present.size < n_out:
        warnings.warn(f"classes {sorted(set(range(n_out)) - set(present))} have no test "
                      "samples; balanced metrics average over the rest")
    values = {
        "balanced_accuracy": restricted_metric(cm, "balanced_accuracy", present, True),
        "balanced_f1": restricted_metric(cm, "balanced_f1", present, True),
    }
    closed = y < K
    probs = softmax(logits[closed])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name, fn in (("auroc", auroc), ("auprc", auprc)):
            try:
                values[name] = fn(probs[:, 1] if K == 2 else probs, y[closed])
            except ValueError:
                values[name] = math.nan
    values.update(classification_report(cm).values)
    report = MetricReport(values=values, meta=meta)
    groups = {tag: train_stats.classes_tagged(tag) for tag in PARTITION_TAGS}
    if setting == "open_lt":
        groups["open"] = np.array([K])
    for tag, members in groups.items():
        members = np.intersect1d(members, present)
        if members.size == 0:
            continue
        report.subsets[tag] = MetricReport(values={
            m: restricted_metric(cm, m, members, True)
            for m in ("balanced_accuracy", "balanced_f1", "accuracy")
        })
    meta.update({
        "K": int(K),
        "classes": [int(c) for c in classes],
        "open_classes": [int(c) for c in split.open_classes],
        "train_class_stats": train_stats.to_dict(),
        "test_class_counts": [int(c) for c in cm.support()],
    })
    return report


def _evaluate_regression(model, dataset, split, idx, meta):
    mu = model.meta.get("label_mean", 0.0)
    sd = model.meta.get("label_std", 1.0)
    out, _ = mlp_forward(model, dataset.features[idx])
    pred = out * sd + mu
    true = dataset.labels[idx]
    report = regression_metrics(true, pred)
    report.meta = meta
    scheme, train_bins = bin_labels(dataset.labels[split.train], model.meta.get("bins", 50),
                                    model.meta.get("bin_strategy", "equal_width"))
    counts = np.bincount(train_bins, minlength=scheme.B)
    tags = np.array(partition_by_counts(counts))
    test_tags = tags[scheme.assign(true)]
    err = true - pred
    for tag in PARTITION_TAGS:
        sel = test_tags == tag
        if not sel.any():
            warnings.warn(f"regression subset {tag!r} has no test samples; omitted")
            continue
        e = err[sel]
        report.subsets[tag] = MetricReport(values={"mse": float(np.mean(e * e)),
                                                   "mae": float(np.mean(np.abs(e)))})
    meta["bin_counts"] = [int(c) for c in counts]
    return report
