import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imblab.core import ClassStats, Dataset
from imblab.losses import softmax_ce
from imblab.sampling import CombinerSpec, SamplerSpec, bbn_beta, bbn_combine, class_distribution, \
    mixup_combine, remix_combine, sample_batch, smote_oversample


def labels_for(counts):
    return np.repeat(np.arange(len(counts)), counts)


def test_progressive_endpoints_exact():
    stats = ClassStats.from_counts([900, 90, 10])
    inst = class_distribution(SamplerSpec("instance_balanced"), stats)
    cb = class_distribution(SamplerSpec("class_balanced"), stats)
    assert np.array_equal(class_distribution(SamplerSpec("progressive", 0, 50), stats), inst)
    assert np.array_equal(class_distribution(SamplerSpec("progressive", 50, 50), stats), cb)
    mid = class_distribution(SamplerSpec("progressive", 25, 50), stats)
    np.testing.assert_allclose(mid, 0.5 * inst + 0.5 * cb)


def test_reversed_mirrors_frequencies():
    stats = ClassStats.from_counts([10, 900, 90])
    p = class_distribution(SamplerSpec("reversed"), stats)
    np.testing.assert_allclose(p, np.array([900, 10, 90]) / 1000)


@pytest.mark.parametrize("counts", [(90, 10), (900, 90, 10)])
def test_class_balanced_binomial_bounds(counts):
    stats = ClassStats.from_counts(counts)
    labels = labels_for(counts)
    n = 10**5
    idx = sample_batch(SamplerSpec("class_balanced"), stats, labels, n, np.random.default_rng(0))
    K = len(counts)
    freq = np.bincount(labels[idx], minlength=K) / n
    sigma = math.sqrt((1 / K) * (1 - 1 / K) / n)
    assert np.all(np.abs(freq - 1 / K) < 3 * sigma)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["instance_balanced", "class_balanced", "progressive", "reversed"]),
       st.lists(st.integers(1, 30), min_size=1, max_size=5), st.integers(0, 2**31))
def test_sample_batch_valid_indices(kind, counts, seed):
    stats = ClassStats.from_counts(counts)
    labels = np.random.default_rng(seed).permutation(labels_for(counts))
    spec = SamplerSpec(kind, 3, 10)
    idx = sample_batch(spec, stats, labels, 50, np.random.default_rng(seed))
    assert idx.min() >= 0 and idx.max() < labels.size
    p = class_distribution(spec, stats)
    assert abs(p.sum() - 1) < 1e-12
    assert np.all(p[labels[idx]] > 0)


def test_sample_batch_reproducible():
    stats = ClassStats.from_counts([5, 3])
    a = sample_batch(SamplerSpec("class_balanced"), stats, labels_for([5, 3]), 20,
                     np.random.default_rng(7))
    b = sample_batch(SamplerSpec("class_balanced"), stats, labels_for([5, 3]), 20,
                     np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_sampler_spec_validation():
    with pytest.raises(ValueError):
        SamplerSpec("weird")
    with pytest.raises(ValueError):
        SamplerSpec("progressive", 5, 3)


# -- SMOTE -------------------------------------------------------------------

def smote_ds(X, y, K):
    return Dataset(np.asarray(X, float), np.asarray(y), tuple(str(i) for i in range(len(y))), K)


def test_smote_two_points_on_segment():
    ds = smote_ds([[0.0, 0.0], [2.0, 4.0], [9.0, 9.0], [9.5, 9.0], [8.0, 9.0]], [0, 0, 1, 1, 1], 2)
    stats = ClassStats.from_counts([2, 3])
    out = smote_oversample(ds, stats, 1, [10, 3], np.random.default_rng(0))
    assert len(out) == 13
    np.testing.assert_array_equal(out.features[:5], ds.features)
    new = out.features[5:]
    assert np.all(out.labels[5:] == 0)
    # colinear with (0,0)-(2,4) and inside the segment
    np.testing.assert_allclose(new[:, 1], 2 * new[:, 0])
    assert np.all((new[:, 0] >= 0) & (new[:, 0] <= 2))


def test_smote_unchanged_and_single_sample_warning():
    ds = smote_ds([[0.0], [1.0], [5.0]], [0, 0, 1], 2)
    stats = ClassStats.from_counts([2, 1])
    same = smote_oversample(ds, stats, 3, [2, 1], np.random.default_rng(0))
    np.testing.assert_array_equal(same.features, ds.features)
    with pytest.warns(UserWarning, match="skipped"):
        out = smote_oversample(ds, stats, 3, [2, 4], np.random.default_rng(0))
    assert len(out) == 3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_smote_convex_hull(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 3))
    y = np.array([0] * 8 + [1] * 4)
    ds = smote_ds(X, y, 2)
    out = smote_oversample(ds, ClassStats.from_counts([8, 4]), k, [8, 20], rng)
    new = out.features[12:]
    lo, hi = X[8:].min(axis=0), X[8:].max(axis=0)
    assert np.all(new >= lo - 1e-12) and np.all(new <= hi + 1e-12)
    np.testing.assert_array_equal(out.features[:12], X)


# -- mixup / remix -------------------------------------------------------------

def test_mixup_examples():
    h, y, lam = mixup_combine(np.array([3.0, 1.0]), np.array([0.0, 9.0]), [1, 0], [0, 1], lam=1.0)
    assert np.array_equal(h, [3.0, 1.0]) and np.array_equal(y, [1, 0])
    h, y, _ = mixup_combine(np.array([0.0, 0.0]), np.array([2.0, 4.0]), [1, 0], [0, 1], lam=0.5)
    assert np.array_equal(h, [1.0, 2.0])
    _, y, _ = mixup_combine(np.zeros((5, 2)), np.ones((5, 2)), np.eye(3)[[0, 1, 2, 0, 1]],
                            np.eye(3)[[2, 2, 1, 0, 0]], rng=np.random.default_rng(1))
    np.testing.assert_allclose(y.sum(axis=1), 1.0)


def test_remix_rules():
    hi, hj, yi, yj = np.zeros(2), np.ones(2), np.array([1.0, 0]), np.array([0, 1.0])
    _, y, ly = remix_combine(hi, hj, yi, yj, 100, 10, kappa=3, tau=0.5, lam=0.1)
    assert ly == 0.0 and np.array_equal(y, yj)
    _, _, ly = remix_combine(hi, hj, yi, yj, 10, 10, lam=0.3)
    assert ly == 0.3
    _, _, ly = remix_combine(hi, hj, yi, yj, 10, 100, kappa=3, tau=0.5, lam=0.9)
    assert ly == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_remix_infinite_kappa_is_mixup(seed):
    h_i = np.random.default_rng(seed).normal(size=(6, 3))
    h_j = np.random.default_rng(seed + 1).normal(size=(6, 3))
    yi, yj = np.eye(3)[[0, 1, 2, 0, 1, 2]], np.eye(3)[[1, 1, 0, 2, 2, 0]]
    a = mixup_combine(h_i, h_j, yi, yj, 0.4, np.random.default_rng(seed))
    b = remix_combine(h_i, h_j, yi, yj, np.full(6, 1000), np.full(6, 1), 0.4, math.inf, 0.5,
                      np.random.default_rng(seed))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


# -- BBN ---------------------------------------------------------------------

def test_bbn_examples():
    z, _, _ = bbn_combine(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0, 1, 0.5)
    np.testing.assert_array_equal(z, [0.5, 0.5])
    assert bbn_beta(0, 10) == 1.0 and bbn_beta(10, 10) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.0, 1.0]))
def test_bbn_endpoints_single_branch(seed, beta):
    rng = np.random.default_rng(seed)
    lc, lr = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    yc, yr = rng.integers(0, 3, 4), rng.integers(0, 3, 4)
    z, loss, grad = bbn_combine(lc, lr, yc, yr, beta)
    ref = softmax_ce(lc, yc) if beta == 1.0 else softmax_ce(lr, yr)
    assert loss == ref[0]
    np.testing.assert_array_equal(grad, ref[1])


def test_combiner_spec_validation():
    with pytest.raises(ValueError):
        CombinerSpec("cutmix")
    with pytest.raises(ValueError):
        CombinerSpec("remix", tau=2.0)
