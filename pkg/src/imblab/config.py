"""Experiment configuration: strict JSON parsing, defaults and serialization.

The layout follows the benchmark's JSON dictionary (``dataset`` / ``loss`` /
``train`` / ``setting``), with a dataset ``path`` or ``synthetic`` block in
place of named chemistry datasets. Unknown keys are errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .data import INT64_RANGE, CsvSchema, SyntheticSpec
from .losses import LossSpec
from .nn.train import RegressionConfig, TrainConfig, TwoStage
from .regimbal import KernelSpec
from .sampling import SAMPLER_KINDS, CombinerSpec
from .splits import SplitPlan, canonical_method


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


SETTING_NAMES = {
    "Imbalanced Classification": "imbalanced_cls",
    "LT Classification": "lt_cls",
    "Open LT": "open_lt",
    "Imbalanced Regression": "imbalanced_reg",
}
SETTING_LABELS = {v: k for k, v in SETTING_NAMES.items()}

LOSS_NAMES = {
    "CE": "CE", "CrossEntropy": "CE", "SoftmaxCE": "CE",
    "CS": "CS", "CostSensitiveCE": "CS",
    "CB_Focal": "CB_Focal", "ClassBalanceFocal": "CB_Focal",
    "CB_CE": "CB_CE", "ClassBalanceCE": "CB_CE",
    "BS": "BS", "BalancedSoftmaxCE": "BS",
    "IB": "IB", "InfluenceBalancedLoss": "IB",
    "DiVE": "DiVE", "DiVEKLD": "DiVE",
    "FocalR": "FocalR", "Focal-R": "FocalR",
    "MSE": "MSE", "L1": "L1", "MAE": "L1",
}

LOSS_DEFAULTS = {
    "CB_Focal": {"gamma": 0.9999, "beta": 2.0},
    "CB_CE": {"gamma": 0.9999},
    "FocalR": {"gamma": 1.0, "beta": 0.2},
    "DiVE": {"lambda_kd": 0.5},
    "IB": {"epsilon": 1e-3, "ib_mode": "features"},
}

COMBINER_NAMES = {
    "none": "none", "default": "none",
    "mixup": "mixup", "mix_up": "mixup", "manifold_mix": "mixup",
    "remix": "remix",
    "bbn": "bbn", "bbn_mix": "bbn",
}

# informational keys from the benchmark layout, carried through untouched
DATASET_INFO_KEYS = ("drug_encoding", "protein_encoding", "tier1_task", "tier2_task",
                     "dataset_name")


@dataclass(frozen=True)
class DatasetConfig:
    path: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    schema: CsvSchema = field(default_factory=CsvSchema)
    info: tuple = ()

    @property
    def task(self) -> str:
        return "classification" if self.synthetic is not None else self.schema.task


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    split: SplitPlan
    train: TrainConfig
    setting: str
    num_class: Optional[int] = None
    seed: int = 0
    output_dir: Optional[str] = None
    name: str = ""
    use_gpu: bool = False


# ---------------------------------------------------------------------------
# strict readers
# ---------------------------------------------------------------------------


class _Obj:
    """Consumes keys from a JSON object, remembering the path for errors."""

    def __init__(self, data, path):
        if not isinstance(data, dict):
            raise ConfigError(path, f"expected an object, got {type(data).__name__}")
        self.data = dict(data)
        self.path = path

    def sub(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key):
        return key in self.data

    def take(self, key, kind, default=..., allow_none=False):
        p = self.sub(key)
        if key not in self.data:
            if default is ...:
                raise ConfigError(p, "missing required key")
            return default
        v = self.data.pop(key)
        if v is None and allow_none:
            return None
        return _check_type(v, kind, p)

    def obj(self, key, required=True):
        p = self.sub(key)
        if key not in self.data:
            if required:
                raise ConfigError(p, "missing required key")
            return None
        v = self.data.pop(key)
        if v is None and not required:
            return None
        return _Obj(v, p)

    def done(self):
        if self.data:
            key = sorted(self.data)[0]
            raise ConfigError(self.sub(key), "unknown key")


def _check_type(v, kind, path):
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(path, f"expected a number, got {json.dumps(v)}")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(path, f"expected an integer, got {json.dumps(v)}")
        return v
    if kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(path, f"expected true/false, got {json.dumps(v)}")
        return v
    if kind is str:
        if not isinstance(v, str):
            raise ConfigError(path, f"expected a string, got {json.dumps(v)}")
        return v
    if kind is list:
        if not isinstance(v, list):
            raise ConfigError(path, f"expected a list, got {json.dumps(v)}")
        return v
    raise TypeError(kind)


def _guard(path, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


def _parse_dataset(o: _Obj, seed: int):
    info = tuple((k, o.take(k, str)) for k in DATASET_INFO_KEYS if o.has(k))
    path = o.take("path", str, None)
    syn = o.obj("synthetic", required=False)
    if (path is None) == (syn is None):
        raise ConfigError(o.path, "exactly one of 'path' or 'synthetic' is required")
    synthetic = None
    if syn is not None:
        kw = dict(
            K=syn.take("K", int, 10),
            rho=syn.take("rho", float, 100.0),
            n_total=syn.take("n_total", int, 5000),
            d=syn.take("d", int, 32),
            decay=syn.take("decay", str, "power_law"),
            sigma=syn.take("sigma", float, 1.0),
            radius=syn.take("radius", float, 3.0),
        )
        syn.done()
        synthetic = _guard(syn.path, SyntheticSpec, **kw)
    schema = CsvSchema()
    sch = o.obj("schema", required=False)
    if sch is not None:
        if synthetic is not None:
            raise ConfigError(sch.path, "schema applies to CSV datasets only")
        feats = sch.take("feature_columns", list, None, allow_none=True)
        classes = sch.take("classes", list, None, allow_none=True)
        tr = sch.take("timestamp_range", list, list(INT64_RANGE))
        kw = dict(
            task=sch.take("task", str, "classification"),
            label_column=sch.take("label_column", str, "label"),
            id_column=sch.take("id_column", str, "id", allow_none=True),
            feature_columns=None if feats is None else tuple(str(f) for f in feats),
            classes=None if classes is None else tuple(str(c) for c in classes),
            num_classes=sch.take("num_classes", int, None, allow_none=True),
            group_column=sch.take("group_column", str, None, allow_none=True),
            timestamp_column=sch.take("timestamp_column", str, None, allow_none=True),
            timestamp_range=tuple(int(v) for v in tr),
            unit=sch.take("unit", str, ""),
        )
        sch.done()
        if kw["task"] not in ("classification", "regression"):
            raise ConfigError(sch.sub("task"), f"unknown task {kw['task']!r}")
        schema = CsvSchema(**kw)
    sp = o.obj("split")
    method = sp.take("method", str)
    _guard(sp.sub("method"), canonical_method, method)
    fractions = sp.take("fractions", list, [0.8, 0.1, 0.1])
    open_fraction = sp.take("open_fraction", float, None)
    split_seed = sp.take("seed", int, seed)
    sp.take("by_class", bool, False)
    cutoffs = sp.take("cutoffs", list, None, allow_none=True)
    sp.done()
    is_open = canonical_method(method)[1]
    plan = _guard(sp.path, SplitPlan, method=method,
                  fractions=tuple(_check_type(f, float, sp.sub("fractions")) for f in fractions),
                  open_fraction=0.0 if open_fraction is None else open_fraction,
                  seed=split_seed, cutoffs=None if cutoffs is None else tuple(cutoffs))
    o.done()
    return DatasetConfig(path=path, synthetic=synthetic, schema=schema, info=info), plan, \
        open_fraction, is_open


def _parse_loss(o: _Obj) -> LossSpec:
    name = o.take("type", str)
    if name not in LOSS_NAMES:
        raise ConfigError(o.sub("type"), f"unknown loss {name!r}")
    kind = LOSS_NAMES[name]
    d = dict(LOSS_DEFAULTS.get(kind, {}))
    for key in ("gamma", "beta", "lambda_kd", "epsilon"):
        if o.has(key):
            d[key] = o.take(key, float)
    if o.has("ib_mode"):
        d["ib_mode"] = o.take("ib_mode", str)
    o.done()
    return _guard(o.path, LossSpec, kind=kind, **d)


def _kernel(o: Optional[_Obj]):
    if o is None:
        return None
    kw = dict(kind=o.take("kernel", str, "gaussian"), width=o.take("width", float, 2.0),
              truncation=o.take("truncation", int, 2))
    o.done()
    return _guard(o.path, KernelSpec, **kw)


def _parse_train(o: _Obj, loss: LossSpec, task: str, seed: int, regression: RegressionConfig,
                 open_percentile: float) -> TrainConfig:
    kw = dict(task=task, loss=loss, seed=seed, regression=regression,
              open_percentile=open_percentile)
    kw["batch_size"] = o.take("batch_size", int, 128)
    kw["epochs"] = o.take("epochs", int, 200)
    hidden = o.take("hidden", list, [1024, 256, 64])
    kw["hidden"] = tuple(_check_type(h, int, o.sub("hidden")) for h in hidden)
    opt = o.obj("optimizer", required=False)
    if opt is not None:
        otype = opt.take("type", str, "ADAM")
        if otype.upper() not in ("ADAM", "ADAMW"):
            raise ConfigError(opt.sub("type"), f"unsupported optimizer {otype!r}")
        kw["lr"] = opt.take("lr", float, 1e-3)
        kw["momentum"] = opt.take("momentum", float, 0.9)
        kw["beta2"] = opt.take("beta2", float, 0.999)
        kw["weight_decay"] = opt.take("wc", float, 2e-4)
        kw["warmup_epochs"] = opt.take("warmup_epochs", int, 20)
        kw["warmup_factor"] = opt.take("warmup_factor", float, 0.01)
        opt.done()
    comb = o.obj("combiner", required=False)
    if comb is not None:
        ctype = comb.take("type", str, "none")
        if ctype not in COMBINER_NAMES:
            raise ConfigError(comb.sub("type"), f"unknown combiner {ctype!r}")
        ckw = dict(kind=COMBINER_NAMES[ctype], alpha=comb.take("alpha", float, 1.0),
                   kappa=comb.take("kappa", float, 3.0), tau=comb.take("tau", float, 0.5),
                   bbn_schedule=comb.take("schedule", str, "parabolic"))
        comb.done()
        kw["combiner"] = _guard(comb.path, CombinerSpec, **ckw)
    samp = o.obj("sampler", required=False)
    if samp is not None:
        stype = samp.take("type", str, "instance_balanced")
        if stype not in SAMPLER_KINDS:
            raise ConfigError(samp.sub("type"), f"unknown sampler {stype!r}")
        samp.done()
        kw["sampler"] = stype
    ts = o.obj("two_stage", required=False)
    if ts is not None:
        kw["two_stage"] = TwoStage(drw=ts.take("drw", bool, False), drs=ts.take("drs", bool, False),
                                   start_epoch=ts.take("start_epoch", int, 10))
        ts.done()
    kw["decoupling"] = o.take("decoupling", bool, False)
    cdt = o.obj("cdt", required=False)
    if cdt is not None:
        kw["cdt_gamma"] = cdt.take("gamma", float)
        cdt.done()
    kw["select_best"] = o.take("select_best", bool, True)
    o.done()
    return _guard(o.path, TrainConfig, **kw)


def _parse_regression(o: Optional[_Obj]) -> RegressionConfig:
    if o is None:
        return RegressionConfig()
    kw = dict(bins=o.take("bins", int, 50), bin_strategy=o.take("bin_strategy", str, "equal_width"),
              lds=_kernel(o.obj("lds", required=False)), fds=_kernel(o.obj("fds", required=False)))
    o.done()
    if kw["bins"] < 2:
        raise ConfigError(o.sub("bins"), "need at least 2 bins")
    if kw["bin_strategy"] not in ("equal_width", "equal_count"):
        raise ConfigError(o.sub("bin_strategy"), f"unknown strategy {kw['bin_strategy']!r}")
    return RegressionConfig(**kw)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def parse_config_dict(data) -> ExperimentConfig:
    root = _Obj(data, "")
    missing = [k for k in ("dataset", "loss", "train", "setting") if k not in root.data]
    if missing:
        raise ConfigError("", f"missing required keys: {', '.join(missing)}")
    seed = root.take("seed", int, 0)
    output_dir = root.take("output_dir", str, None, allow_none=True)
    name = root.take("name", str, "")
    use_gpu = root.take("use_gpu", bool, False)

    setting_o = root.obj("setting")
    stype = setting_o.take("type", str)
    if stype not in SETTING_NAMES:
        raise ConfigError(setting_o.sub("type"), f"unknown setting {stype!r}")
    setting = SETTING_NAMES[stype]
    num_class = setting_o.take("num_class", int, None, allow_none=True)
    setting_o.done()

    dataset, plan, open_fraction, is_open = _parse_dataset(root.obj("dataset"), seed)
    task = dataset.task
    if setting == "imbalanced_reg" and task != "regression":
        raise ConfigError("setting.type", "Imbalanced Regression needs continuous labels, "
                          "but the dataset declares categorical labels")
    if setting != "imbalanced_reg" and task == "regression":
        raise ConfigError("setting.type", f"{stype} needs categorical labels, "
                          "but the dataset declares continuous labels")
    if setting == "open_lt":
        if not is_open:
            raise ConfigError("dataset.split.method", "Open LT needs an open-* split method")
        if open_fraction is None:
            raise ConfigError("dataset.split.open_fraction", "Open LT needs open_fraction")
        if open_fraction <= 0:
            raise ConfigError("dataset.split.open_fraction", "Open LT needs open_fraction > 0")
    elif is_open:
        raise ConfigError("dataset.split.method", "open-* split methods need the Open LT setting")
    if task == "classification":
        K = dataset.synthetic.K if dataset.synthetic is not None else (
            len(dataset.schema.classes) if dataset.schema.classes is not None
            else dataset.schema.num_classes)
        if num_class is None:
            raise ConfigError("setting.num_class", "missing required key")
        if K is not None and K != num_class:
            raise ConfigError("setting.num_class", f"{num_class} does not match the dataset's {K}")
        if dataset.synthetic is None and dataset.schema.classes is None \
                and dataset.schema.num_classes is None:
            dataset = DatasetConfig(dataset.path, None, _with(dataset.schema, num_classes=num_class),
                                    dataset.info)

    loss = _parse_loss(root.obj("loss"))
    regression = _parse_regression(root.obj("regression", required=False))
    open_o = root.obj("open", required=False)
    percentile = 95.0
    if open_o is not None:
        percentile = open_o.take("percentile", float, 95.0)
        open_o.done()
        if not 0 < percentile <= 100:
            raise ConfigError("open.percentile", "must lie in (0, 100]")
    train = _parse_train(root.obj("train"), loss, task, seed, regression, percentile)
    root.done()
    return ExperimentConfig(dataset=dataset, split=plan, train=train, setting=setting,
                            num_class=num_class, seed=seed, output_dir=output_dir, name=name,
                            use_gpu=use_gpu)


def _with(schema: CsvSchema, **changes) -> CsvSchema:
    from dataclasses import replace
    return replace(schema, **changes)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return parse_config_dict(data)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _kernel_dict(k: Optional[KernelSpec]):
    if k is None:
        return None
    return {"kernel": k.kind, "width": k.width, "truncation": k.truncation}


def serialize_config(cfg: ExperimentConfig) -> dict:
    """Canonical JSON-ready dict; ``parse_config_dict`` of it returns an equal config."""
    ds = cfg.dataset
    dataset = dict(ds.info)
    if ds.path is not None:
        dataset["path"] = ds.path
    if ds.synthetic is not None:
        s = ds.synthetic
        dataset["synthetic"] = {"K": s.K, "rho": s.rho, "n_total": s.n_total, "d": s.d,
                                "decay": s.decay, "sigma": s.sigma, "radius": s.radius}
    else:
        sc = ds.schema
        dataset["schema"] = {
            "task": sc.task, "label_column": sc.label_column, "id_column": sc.id_column,
            "feature_columns": None if sc.feature_columns is None else list(sc.feature_columns),
            "classes": None if sc.classes is None else list(sc.classes),
            "num_classes": sc.num_classes, "group_column": sc.group_column,
            "timestamp_column": sc.timestamp_column,
            "timestamp_range": list(sc.timestamp_range), "unit": sc.unit,
        }
    sp = cfg.split
    split = {"method": sp.method, "fractions": list(sp.fractions), "seed": sp.seed}
    if sp.is_open:
        split["open_fraction"] = sp.open_fraction
    if sp.cutoffs is not None:
        split["cutoffs"] = list(sp.cutoffs)
    dataset["split"] = split
    t = cfg.train
    loss = {"type": t.loss.kind, "gamma": t.loss.gamma, "beta": t.loss.beta,
            "lambda_kd": t.loss.lambda_kd, "epsilon": t.loss.epsilon, "ib_mode": t.loss.ib_mode}
    train = {
        "batch_size": t.batch_size, "epochs": t.epochs, "hidden": list(t.hidden),
        "optimizer": {"type": "ADAM", "lr": t.lr, "momentum": t.momentum, "beta2": t.beta2,
                      "wc": t.weight_decay, "warmup_epochs": t.warmup_epochs,
                      "warmup_factor": t.warmup_factor},
        "combiner": {"type": t.combiner.kind, "alpha": t.combiner.alpha, "kappa": t.combiner.kappa,
                     "tau": t.combiner.tau, "schedule": t.combiner.bbn_schedule},
        "sampler": {"type": t.sampler},
        "two_stage": {"drw": t.two_stage.drw, "drs": t.two_stage.drs,
                      "start_epoch": t.two_stage.start_epoch},
        "decoupling": t.decoupling,
        "select_best": t.select_best,
    }
    if t.cdt_gamma is not None:
        train["cdt"] = {"gamma": t.cdt_gamma}
    out = {
        "name": cfg.name,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "use_gpu": cfg.use_gpu,
        "dataset": dataset,
        "loss": loss,
        "train": train,
        "setting": {"type": SETTING_LABELS[cfg.setting], "num_class": cfg.num_class},
        "regression": {"bins": t.regression.bins, "bin_strategy": t.regression.bin_strategy,
                       "lds": _kernel_dict(t.regression.lds), "fds": _kernel_dict(t.regression.fds)},
        "open": {"percentile": t.open_percentile},
    }
    return out
