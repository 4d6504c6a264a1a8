"""Experiment orchestration and the ``imdrug-lab`` command line."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, serialize_config
from .core import Dataset
from .data import SyntheticSpec, generate_synthetic_lt, load_csv_dataset, write_dataset
from .metrics import MetricReport, dumps_17
from .nn.heads import OpenHead
from .nn.model import model_from_dict, model_to_dict
from .nn.train import TrainResult, evaluate, train
from .splits import SplitResult, split_dataset

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------


def load_dataset(config: ExperimentConfig) -> Dataset:
    ds = config.dataset
    if ds.synthetic is not None:
        return generate_synthetic_lt(ds.synthetic, config.seed)
    return load_csv_dataset(ds.path, ds.schema)


def baseline_name(config: ExperimentConfig) -> str:
    """Short method descriptor, e.g. ``BS+remix+drw``."""
    t = config.train
    parts = [t.loss.kind]
    if t.sampler != "instance_balanced":
        parts.append(t.sampler)
    if t.combiner.kind != "none":
        parts.append(t.combiner.kind)
    if t.two_stage.drw:
        parts.append("drw")
    if t.two_stage.drs:
        parts.append("drs")
    if t.decoupling:
        parts.append("decoupling")
    if t.cdt_gamma:
        parts.append("cdt")
    if t.task == "regression":
        if t.regression.lds is not None:
            parts.append("lds")
        if t.regression.fds is not None:
            parts.append("fds")
    return "+".join(parts)


def _attach_head(result: TrainResult):
    model = result.model
    if result.open_head is not None:
        model.meta["open_head"] = result.open_head.to_dict()
    return model


def head_from_model(model):
    data = model.meta.get("open_head")
    if data is None:
        return None
    theta = math.inf if data["threshold"] is None else float(data["threshold"])
    return OpenHead(np.asarray(data["centroids"], dtype=np.float64), theta)


def history_csv(history) -> str:
    buf = io.StringIO()
    cols = ["epoch", "train_loss", "valid_MAE" if history and "valid_MAE" in history[0]
            else "valid_BA", "lr"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in history:
        out = []
        for c in cols:
            v = row[c]
            if c == "epoch":
                out.append(str(int(v)))
            else:
                out.append("nan" if math.isnan(v) else format(float(v), ".17g"))
        w.writerow(out)
    return buf.getvalue()


def build_report(config, dataset, split, result) -> MetricReport:
    report = evaluate(result.model, dataset, split, config.setting, head=result.open_head)
    report.meta.update({
        "name": config.name or baseline_name(config),
        "baseline": baseline_name(config),
        "config_seed": config.seed,
        "best_epoch": int(result.best_epoch),
        "epochs": config.train.epochs,
    })
    if result.open_head is not None:
        report.meta["open_threshold"] = result.open_head.threshold
    return report


def _write_text(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _publish(tmp: Path, out: Path):
    """Move finished files from ``tmp`` into ``out``."""
    if not out.exists():
        os.replace(tmp, out)
        return
    for f in sorted(tmp.iterdir()):
        os.replace(f, out / f.name)
    tmp.rmdir()


def _staged_output(out: Path, writer):
    """Write into a sibling temp dir, then publish; nothing is left behind on failure."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.exists() and not out.is_dir():
        raise StageError("output", NotADirectoryError(str(out)))
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
    try:
        writer(tmp)
        _publish(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def run_experiment(config: ExperimentConfig, out_dir=None) -> MetricReport:
    """load/generate -> split -> train -> evaluate, writing report.json,
    history.csv, split.json and config-echo.json under ``out_dir``."""
    out_dir = out_dir if out_dir is not None else config.output_dir
    if out_dir is None:
        raise ConfigError("output_dir", "no output directory given")
    dataset = _stage("data", load_dataset, config)
    split = _stage("split", split_dataset, dataset, config.split)
    result = _stage("train", train, dataset, split, config.train)
    report = _stage("evaluate", build_report, config, dataset, split, result)

    def write(tmp: Path):
        _write_text(tmp / "report.json", report.to_json())
        _write_text(tmp / "history.csv", history_csv(result.history))
        _write_text(tmp / "split.json", dumps_17(split.to_dict()))
        _write_text(tmp / "config-echo.json", dumps_17(serialize_config(config)))

    _stage("output", _staged_output, Path(out_dir), write)
    return report


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def _pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    keep = np.isfinite(a) & np.isfinite(b)
    a, b = a[keep], b[keep]
    if a.size < 2:
        return math.nan
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(da @ da) * float(db @ db))
    if den == 0:
        return math.nan
    return float(da @ db) / den


def _numeric_keys(report: MetricReport):
    return {k for k, v in report.values.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)}


def compare_runs(reports, splits=None, metrics=None) -> dict:
    """Tabulate runs and correlate them.

    ``reports`` is a list of MetricReport (or paths). Returns a dict with
    ``runs`` (names), ``metrics`` (shared keys, sorted), ``table`` (run x
    metric), ``run_corr`` (run x run Pearson over the shared metrics) and,
    when ``splits=(a, b)``, ``split_corr``: per metric, the Pearson
    correlation between split a and split b values over baselines present
    in both (paired by name and seed).
    """
    loaded = []
    for r in reports:
        if not isinstance(r, MetricReport):
            with open(r, encoding="utf-8") as fh:
                rep = MetricReport.from_dict(json.load(fh))
            rep.meta.setdefault("name", Path(r).stem)
            r = rep
        loaded.append(r)
    if len(loaded) < 2:
        raise ValueError("compare needs at least 2 reports")
    shared = set.intersection(*(_numeric_keys(r) for r in loaded))
    if metrics is not None:
        missing = set(metrics) - shared
        if missing:
            raise ValueError(f"metrics not shared by all reports: {sorted(missing)}")
        shared = set(metrics)
    if not shared:
        raise ValueError("reports share no metrics")
    keys = sorted(shared)
    names = []
    for i, r in enumerate(loaded):
        base = str(r.meta.get("name", f"run{i}"))
        names.append(f"{base}@{r.meta.get('split', '?')}#{r.meta.get('config_seed', i)}")
    seen = {}
    for i, n in enumerate(names):
        if n in seen:
            names[i] = f"{n}~{i}"
        seen[n] = i
    table = np.array([[_float(r.values[k]) for k in keys] for r in loaded])
    R = len(loaded)
    run_corr = np.eye(R)
    for i in range(R):
        for j in range(i + 1, R):
            run_corr[i, j] = run_corr[j, i] = _pearson(table[i], table[j])
    out = {"runs": names, "metrics": keys, "table": table, "run_corr": run_corr,
           "splits": [r.meta.get("split") for r in loaded]}
    if splits is not None:
        a, b = splits
        idx_a = {(r.meta.get("name"), r.meta.get("config_seed")): i
                 for i, r in enumerate(loaded) if r.meta.get("split") == a}
        idx_b = {(r.meta.get("name"), r.meta.get("config_seed")): i
                 for i, r in enumerate(loaded) if r.meta.get("split") == b}
        pairs = sorted(set(idx_a) & set(idx_b), key=str)
        if len(pairs) < 2:
            raise ValueError(f"need >= 2 baselines run on both {a!r} and {b!r}")
        out["split_corr"] = {
            k: _pearson([table[idx_a[p], c] for p in pairs], [table[idx_b[p], c] for p in pairs])
            for c, k in enumerate(keys)
        }
        out["split_pairs"] = pairs
    return out


def _float(v):
    return math.nan if v is None else float(v)


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else format(float(v), ".17g")


def write_comparison(result: dict, out_csv) -> list:
    """Summary CSV plus ``<stem>.run_corr.csv`` and (optional) ``<stem>.split_corr.csv``."""
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    written = []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "split"] + result["metrics"])
    for name, split, row in zip(result["runs"], result["splits"], result["table"]):
        w.writerow([name, split] + [_fmt(v) for v in row])
    _write_text(out_csv, buf.getvalue())
    written.append(out_csv)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run"] + result["runs"])
    for name, row in zip(result["runs"], result["run_corr"]):
        w.writerow([name] + [_fmt(v) for v in row])
    p = out_csv.with_name(out_csv.stem + ".run_corr.csv")
    _write_text(p, buf.getvalue())
    written.append(p)

    if "split_corr" in result:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "pearson", "n_pairs"])
        for k, v in result["split_corr"].items():
            w.writerow([k, _fmt(v), len(result["split_pairs"])])
        p = out_csv.with_name(out_csv.stem + ".split_corr.csv")
        _write_text(p, buf.getvalue())
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def _cmd_gen_data(args):
    if args.config:
        cfg = load_config(args.config)
        if cfg.dataset.synthetic is None:
            raise ConfigError("dataset.synthetic", "gen-data needs a synthetic dataset block")
        spec, seed = cfg.dataset.synthetic, cfg.seed
    else:
        try:
            spec = SyntheticSpec(K=args.K, rho=args.rho, n_total=args.n_total, d=args.d,
                                 decay=args.decay, sigma=args.sigma, radius=args.radius)
        except ValueError as exc:
            raise ConfigError("synthetic", str(exc)) from None
        seed = args.seed
    ds = _stage("data", generate_synthetic_lt, spec, seed)
    _stage("output", write_dataset, ds, args.out)


def _load_split(path) -> SplitResult:
    with open(path, encoding="utf-8") as fh:
        return SplitResult.from_dict(json.load(fh))


def _cmd_split(args):
    cfg = load_config(args.config)
    dataset = _stage("data", load_dataset, cfg)
    split = _stage("split", split_dataset, dataset, cfg.split)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    _write_text(Path(args.out), dumps_17(split.to_dict()))


def _cmd_train(args):
    cfg = load_config(args.config)
    dataset = _stage("data", load_dataset, cfg)
    split = _stage("split", _load_split, args.split) if args.split else \
        _stage("split", split_dataset, dataset, cfg.split)
    result = _stage("train", train, dataset, split, cfg.train)
    model = _attach_head(result)

    def write(tmp: Path):
        _write_text(tmp / "model.json", json.dumps(model_to_dict(model)) + "\n")
        _write_text(tmp / "history.csv", history_csv(result.history))
        _write_text(tmp / "split.json", dumps_17(split.to_dict()))

    _stage("output", _staged_output, Path(args.out), write)


def _cmd_eval(args):
    cfg = load_config(args.config)
    dataset = _stage("data", load_dataset, cfg)
    split = _stage("split", _load_split, args.split) if args.split else \
        _stage("split", split_dataset, dataset, cfg.split)
    with open(args.model, encoding="utf-8") as fh:
        model = _stage("evaluate", model_from_dict, json.load(fh))
    report = _stage("evaluate", evaluate, model, dataset, split, cfg.setting,
                    head=head_from_model(model))
    report.meta.update({"name": cfg.name or baseline_name(cfg), "baseline": baseline_name(cfg),
                        "config_seed": cfg.seed})
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    _write_text(Path(args.out), report.to_json())


def _cmd_run(args):
    cfg = load_config(args.config)
    report = run_experiment(cfg, args.out)
    ba = report.values.get("balanced_accuracy", report.values.get("mae"))
    print(f"done: {Path(args.out or cfg.output_dir) / 'report.json'}  "
          f"({'BA' if 'balanced_accuracy' in report.values else 'MAE'}={ba:.4f})")


def _cmd_compare(args):
    splits = tuple(args.splits) if args.splits else None
    result = compare_runs(args.reports, splits=splits, metrics=args.metrics)
    for p in write_comparison(result, args.out):
        print(p)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imdrug-lab", allow_abbrev=False,
                                description="Imbalanced-learning experiments on tabular features.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic long-tailed CSV", allow_abbrev=False)
    g.add_argument("--config", help="take the synthetic block and seed from a config")
    g.add_argument("--K", type=int, default=10)
    g.add_argument("--rho", type=float, default=100.0)
    g.add_argument("--n-total", type=int, default=5000)
    g.add_argument("--d", type=int, default=32)
    g.add_argument("--decay", default="power_law", choices=["power_law", "exponential"])
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--radius", type=float, default=3.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen_data)

    s = sub.add_parser("split", help="compute and save the configured split", allow_abbrev=False)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_split)

    t = sub.add_parser("train", help="train and save model.json + history.csv", allow_abbrev=False)
    t.add_argument("--config", required=True)
    t.add_argument("--split", help="reuse a saved split.json")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model", allow_abbrev=False)
    e.add_argument("--config", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--split", help="reuse a saved split.json")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=_cmd_eval)

    r = sub.add_parser("run", help="full pipeline", allow_abbrev=False)
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (default: config output_dir)")
    r.set_defaults(fn=_cmd_run)

    c = sub.add_parser("compare", help="summarize and correlate reports", allow_abbrev=False)
    c.add_argument("--reports", nargs="+", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--splits", nargs=2, metavar=("SPLIT_A", "SPLIT_B"))
    c.add_argument("--metrics", nargs="+")
    c.set_defaults(fn=_cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
