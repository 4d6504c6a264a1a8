"""Acceptance criteria 1-11, one test each.

Every test prints one ``[criterion N] PASS|FAIL`` line (also collected into
the pytest terminal summary). Run with ``pytest tests/test_acceptance.py -s``.
"""

import contextlib
import json
import math
import time
import warnings

import numpy as np
import pytest

from imblab.cli import _pearson, main
from imblab.core import ClassStats, ConfusionMatrix
from imblab.data import SyntheticSpec, generate_synthetic_lt
from imblab.losses import LossSpec
from imblab.metrics import accuracy, balanced_accuracy, balanced_f1, balanced_precision, macro_f1
from imblab.nn.heads import OpenHead, oltr_reachability, open_decision
from imblab.nn.model import encode, predict_logits
from imblab.nn.train import TrainConfig, TwoStage, evaluate, train
from imblab.regimbal import KernelSpec, fds_calibrate, fds_statistics, lds_smooth
from imblab.sampling import CombinerSpec, SamplerSpec, class_distribution, sample_batch
from imblab.splits import SplitPlan, split_dataset

from conftest import ACCEPTANCE_LINES, random_cm, replicate_row
from gradcheck import model_gradcheck, numeric_grad, random_loss_case, rel_error
from test_metrics import lcm_balanced, oracle_macro_f1


@contextlib.contextmanager
def criterion(n, title, budget=None):
    """Time the block and report one pass/fail line; a blown budget is a failure."""
    info = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        dt = time.perf_counter() - t0
        over = budget is not None and dt >= budget
        status = "PASS" if ok and not over else "FAIL"
        extra = f"  {info['detail']}" if "detail" in info else ""
        limit = f" (limit {budget:g}s)" if budget else ""
        line = f"[criterion {n:2d}] {status}  {title}  {dt:.2f}s{limit}{extra}"
        print(line)
        ACCEPTANCE_LINES.append(line)
    assert not over, f"criterion {n} took {dt:.2f}s, limit {budget}s"


# -- exact metric properties -------------------------------------------------------

def test_criterion_01_replication_invariance():
    with criterion(1, "BA/balanced-F1 invariant to class replication", budget=1.0) as info:
        rng = np.random.default_rng(1)
        worst, cases = 0.0, 0
        for K in (2, 5, 10):
            for _ in range(7):
                cm = random_cm(rng, K)
                ba, bf = balanced_accuracy(cm), balanced_f1(cm)
                for m in (2, 5, 10):
                    for k in range(K):
                        rep = replicate_row(cm, k, m)
                        worst = max(worst, abs(balanced_accuracy(rep) - ba),
                                    abs(balanced_f1(rep) - bf))
                cases += 1
        witness = ConfusionMatrix(np.array([[80, 10], [5, 5]]))
        acc_shift = abs(accuracy(replicate_row(witness, 1, 10)) - accuracy(witness))
        info["detail"] = f"{cases} matrices, max change {worst:.1e}, accuracy witness {acc_shift:.3f}"
        assert cases >= 20 and worst < 1e-12
        assert acc_shift > 1e-3


def test_criterion_02_lcm_oracle():
    with criterion(2, "balanced F1 == macro-F1 of LCM-balanced matrix", budget=1.0) as info:
        rng = np.random.default_rng(2)
        worst = 0.0
        for i in range(100):
            cm = random_cm(rng, int(rng.integers(2, 7)), high=12)
            worst = max(worst, abs(balanced_f1(cm) - oracle_macro_f1(lcm_balanced(cm.counts))))
        info["detail"] = f"100 cases, max diff {worst:.1e}"
        assert worst < 1e-12


def test_criterion_03_balanced_reduction():
    with criterion(3, "uniform counts: balanced precision/F1 == vanilla") as info:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            K = int(rng.integers(2, 8))
            n = int(rng.integers(3, 40))
            counts = np.stack([rng.multinomial(n, rng.dirichlet(np.ones(K))) for _ in range(K)])
            cm = ConfusionMatrix(counts)
            stats = ClassStats.from_counts(cm.support())
            for k in range(K):
                col = counts[:, k].sum()
                vanilla = counts[k, k] / col if col else 0.0
                worst = max(worst, abs(balanced_precision(cm, stats, k) - vanilla))
            worst = max(worst, abs(balanced_f1(cm, stats) - macro_f1(cm)),
                        abs(balanced_f1(cm, stats) - oracle_macro_f1(counts)))
        info["detail"] = f"100 matrices, max diff {worst:.1e}"
        assert worst < 1e-14


# -- gradients -----------------------------------------------------------------------

def test_criterion_04_gradients():
    with criterion(4, "finite-difference gradient checks", budget=30.0) as info:
        worst = {}
        for i, kind in enumerate(["CE", "CS", "CB_CE", "CB_Focal", "BS", "IB", "FocalR", "DiVE"]):
            rng = np.random.default_rng(400 + i)
            w = 0.0
            for _ in range(100):
                f, g, z = random_loss_case(kind, rng)
                w = max(w, rel_error(g, numeric_grad(f, z, 1e-5)))
            worst[kind] = w
        kinds = ["CE", "CS", "CB_CE", "CB_Focal", "BS", "DiVE"]
        worst["MLP"] = max(model_gradcheck(s, kinds[s % len(kinds)]) for s in range(100))
        info["detail"] = "max rel err " + ", ".join(f"{k} {v:.0e}" for k, v in worst.items())
        assert max(worst.values()) < 1e-4


def test_criterion_05_majority_predictor():
    with criterion(5, "always-majority predictor scores BA = 1/K") as info:
        got = {}
        for K in (2, 10, 100):
            counts = np.zeros((K, K), dtype=np.int64)
            counts[:, 0] = np.maximum(1, (1000 * np.arange(1, K + 1, dtype=float) ** -1.5).astype(int))
            got[K] = balanced_accuracy(ConfusionMatrix(counts))
        info["detail"] = ", ".join(f"K={K}: {v!r}" for K, v in got.items())
        assert all(v == 1.0 / K for K, v in got.items())


# -- samplers, LDS/FDS ------------------------------------------------------------

def test_criterion_06_sampler_laws():
    with criterion(6, "progressive endpoints and class-balanced frequencies") as info:
        counts = (900, 90, 10)
        stats = ClassStats.from_counts(counts)
        inst = class_distribution(SamplerSpec("instance_balanced"), stats)
        cb = class_distribution(SamplerSpec("class_balanced"), stats)
        T = 90
        assert np.array_equal(class_distribution(SamplerSpec("progressive", 0, T), stats), inst)
        assert np.array_equal(class_distribution(SamplerSpec("progressive", T, T), stats), cb)
        labels = np.repeat(np.arange(3), counts)
        n = 10**5
        idx = sample_batch(SamplerSpec("class_balanced"), stats, labels, n, np.random.default_rng(6))
        freq = np.bincount(labels[idx], minlength=3) / n
        sigma = math.sqrt((1 / 3) * (2 / 3) / n)
        z = np.abs(freq - 1 / 3) / sigma
        info["detail"] = f"frequencies {np.round(freq, 4).tolist()}, max |z| {z.max():.2f}"
        assert np.all(z < 3)


def test_criterion_07_lds_fds_fixed_points():
    with criterion(7, "LDS/FDS fixed points") as info:
        rng = np.random.default_rng(7)
        mass_err, fds_err = 0.0, 0.0
        for _ in range(50):
            p = rng.integers(0, 500, size=int(rng.integers(1, 60))).astype(float)
            p[rng.integers(p.size)] += 1
            assert np.array_equal(lds_smooth(p, KernelSpec("identity")), p)
            for kern in (KernelSpec("gaussian", 2.0, 2), KernelSpec("triangular", 1.0, 3),
                         KernelSpec("gaussian", 5.0, 10)):
                mass_err = max(mass_err, abs(lds_smooth(p, kern).sum() - p.sum()) / p.sum())
            f = rng.normal(size=(40, 5))
            b = rng.integers(0, 4, size=40)
            b[:4] = np.arange(4)
            st_ = fds_statistics(f, b, KernelSpec("identity"))
            for i in range(40):
                fds_err = max(fds_err, np.max(np.abs(fds_calibrate(f[i], b[i], st_) - f[i])))
        info["detail"] = f"relative mass error {mass_err:.1e}, FDS identity error {fds_err:.1e}"
        assert mass_err < 1e-9 and fds_err < 1e-12


# -- directional reproductions -------------------------------------------------------

LT_DATA = SyntheticSpec(K=10, rho=100, n_total=5000, d=32)
BASE = dict(hidden=(64, 32), epochs=30, warmup_epochs=2)


def fit_eval(ds, split, seed, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = train(ds, split, TrainConfig(seed=seed, **BASE, **kw))
        return evaluate(result.model, ds, split, "lt_cls")


@pytest.mark.slow
def test_criterion_08_rebalancing_beats_vanilla():
    with criterion(8, "BS and CS beat CE on BA; tail gain > head gain", budget=300.0) as info:
        rows = {}
        for seed in range(5):
            ds = generate_synthetic_lt(LT_DATA, seed)
            split = split_dataset(ds, SplitPlan("standard", (0.7, 0.1, 0.2), seed=seed))
            for kind in ("CE", "BS", "CS"):
                rep = fit_eval(ds, split, seed, loss=LossSpec(kind))
                rows[seed, kind] = (rep["balanced_accuracy"],
                                    rep.subsets["head"]["balanced_accuracy"],
                                    rep.subsets["tail"]["balanced_accuracy"])
        mean = {k: np.mean([rows[s, k][0] for s in range(5)]) for k in ("CE", "BS", "CS")}
        tail_wins = {k: sum((rows[s, k][2] - rows[s, "CE"][2]) > (rows[s, k][1] - rows[s, "CE"][1])
                            for s in range(5)) for k in ("BS", "CS")}
        info["detail"] = (f"mean BA CE {mean['CE']:.3f} BS {mean['BS']:.3f} CS {mean['CS']:.3f}; "
                          f"tail>head gain seeds BS {tail_wins['BS']}/5 CS {tail_wins['CS']}/5")
        assert mean["BS"] > mean["CE"] and mean["CS"] > mean["CE"]
        assert tail_wins["BS"] >= 4 and tail_wins["CS"] >= 4


BASELINES = {
    "CE": dict(loss=LossSpec("CE")),
    "BS": dict(loss=LossSpec("BS")),
    "CS": dict(loss=LossSpec("CS")),
    "CB_CE": dict(loss=LossSpec("CB_CE")),
    "CB_Focal": dict(loss=LossSpec("CB_Focal")),
    "CE+cbs": dict(sampler="class_balanced"),
    "CE+mixup": dict(combiner=CombinerSpec("mixup")),
    "CS+drw": dict(loss=LossSpec("CS"), two_stage=TwoStage(drw=True, start_epoch=15)),
}


@pytest.mark.slow
def test_criterion_09_split_rank_correlation():
    with criterion(9, "standard-vs-random split correlation: BA above accuracy",
                   budget=900.0) as info:
        wins, pairs = 0, []
        for seed in range(5):
            ds = generate_synthetic_lt(LT_DATA, seed)
            vals = {}
            for method in ("standard", "random"):
                split = split_dataset(ds, SplitPlan(method, (0.7, 0.1, 0.2), seed=seed))
                for name, kw in BASELINES.items():
                    rep = fit_eval(ds, split, seed, **kw)
                    vals[method, name] = (rep["balanced_accuracy"], rep["accuracy"])
            r_ba = _pearson([vals["standard", n][0] for n in BASELINES],
                            [vals["random", n][0] for n in BASELINES])
            r_acc = _pearson([vals["standard", n][1] for n in BASELINES],
                             [vals["random", n][1] for n in BASELINES])
            wins += r_ba > r_acc
            pairs.append(f"{r_ba:.2f}/{r_acc:.2f}")
        info["detail"] = f"r(BA)/r(acc) per seed {pairs}; {wins}/5 seeds"
        assert wins >= 4


# -- open LT ---------------------------------------------------------------------------

def test_criterion_10_open_lt_plumbing():
    with criterion(10, "open LT: 2 held-out classes, theta=inf closed, far probe open") as info:
        spec = SyntheticSpec(K=10, rho=100, n_total=2000, d=16)
        ds = generate_synthetic_lt(spec, 10)
        split = split_dataset(ds, SplitPlan("open-standard", (0.7, 0.1, 0.2), open_fraction=0.2,
                                            seed=10))
        train_classes = set(np.unique(ds.labels[split.train]).tolist())
        absent = sorted(set(range(10)) - train_classes)
        assert len(absent) == 2 and tuple(absent) == tuple(split.open_classes)
        result = train(ds, split, TrainConfig(hidden=(32, 16), epochs=5, warmup_epochs=1,
                                              seed=10))
        model, head = result.model, result.open_head
        X = ds.features[split.test]
        feats, logits = encode(model, X)[0], predict_logits(model, X)
        inf_head = OpenHead(head.centroids, math.inf)
        same = np.array_equal(open_decision(inf_head, feats, logits), np.argmax(logits, axis=1))
        train_feats = encode(model, ds.features[split.train])[0]
        max_reach = float(np.max(oltr_reachability(head, train_feats)))
        rng = np.random.default_rng(10)
        far_open = 0
        for _ in range(200):
            u = rng.normal(size=feats.shape[1])
            probe = head.centroids[rng.integers(head.num_classes)] + \
                (10 + 90 * rng.random()) * max(max_reach, 1.0) * 2 * u / np.linalg.norm(u)
            assert oltr_reachability(head, probe) > 10 * max_reach
            far_open += open_decision(head, probe, rng.normal(size=head.num_classes)) == \
                head.num_classes
        info["detail"] = (f"absent {absent}, theta=inf bit-exact {same}, "
                          f"far probes open {far_open}/200")
        assert same and far_open == 200


# -- determinism -------------------------------------------------------------------------

def test_criterion_11_run_determinism(tmp_path):
    with criterion(11, "two `run` invocations give byte-identical report.json") as info:
        cfg = {
            "seed": 11,
            "dataset": {"synthetic": {"K": 10, "rho": 100, "n_total": 2000, "d": 16},
                        "split": {"method": "standard", "fractions": [0.7, 0.1, 0.2]}},
            "loss": {"type": "BalancedSoftmaxCE"},
            "train": {"epochs": 8, "hidden": [32, 16], "combiner": {"type": "remix"},
                      "optimizer": {"warmup_epochs": 2}},
            "setting": {"type": "LT Classification", "num_class": 10},
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for name in ("a", "b"):
            assert main(["run", "--config", str(path), "--out", str(tmp_path / name)]) == 0
            outs.append((tmp_path / name / "report.json").read_bytes())
        info["detail"] = f"{len(outs[0])} bytes, identical {outs[0] == outs[1]}"
        assert outs[0] == outs[1]
