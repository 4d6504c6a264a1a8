import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imblab.regimbal import BinScheme, KernelSpec, bin_labels, fds_calibrate, fds_statistics, \
    lds_smooth, lds_weights


def direct_smooth(counts, weight, r):
    """Scatter each source bin's mass over its in-range neighbours, by explicit loops."""
    B = len(counts)
    out = [0.0] * B
    for b in range(B):
        nbrs = [b + o for o in range(-r, r + 1) if 0 <= b + o < B]
        ws = [weight(b2 - b) for b2 in nbrs]
        tot = sum(ws)
        for b2, w in zip(nbrs, ws):
            out[b2] += counts[b] * w / tot
    return np.array(out)


def test_equal_width_edges():
    labels = np.linspace(0, 1, 101)
    scheme, idx = bin_labels(labels, 10)
    np.testing.assert_allclose(scheme.edges, np.linspace(0, 1, 11))
    assert idx.min() == 0 and idx.max() == 9


def test_equal_count_bins():
    labels = np.random.default_rng(0).permutation(np.arange(100.0))
    _, idx = bin_labels(labels, 10, "equal_count")
    assert np.bincount(idx).tolist() == [10] * 10


def test_edge_goes_lower():
    scheme = BinScheme(np.array([0.0, 1.0, 2.0, 3.0]))
    assert scheme.assign([1.0, 2.0, 1.5, 0.0, 3.0]).tolist() == [0, 1, 1, 0, 2]


def test_bin_errors():
    with pytest.raises(ValueError):
        bin_labels([1.0, 1.0], 5)
    with pytest.raises(ValueError):
        bin_labels([0.0, 1.0], 1)


def test_identity_noop_bitexact():
    p = np.array([3.0, 0.0, 7.5, 1e-300, 2.0])
    out = lds_smooth(p, KernelSpec("identity"))
    assert np.array_equal(out, p)


def test_symmetric_output():
    out = lds_smooth([0, 12, 0], KernelSpec("gaussian", 1.0, 1))
    assert out[0] == out[2] and out.sum() == pytest.approx(12)


def test_gaussian_direct_oracle():
    w = lambda d: math.exp(-0.5 * d * d)
    out = lds_smooth([10, 0, 0], KernelSpec("gaussian", 1.0, 2))
    np.testing.assert_allclose(out, direct_smooth([10, 0, 0], w, 2), rtol=1e-14)
    tot = 1 + math.exp(-0.5) + math.exp(-2)
    np.testing.assert_allclose(out, 10 * np.array([1, math.exp(-0.5), math.exp(-2)]) / tot)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=30).filter(lambda v: sum(v) > 0),
       st.sampled_from(["identity", "gaussian", "triangular"]), st.floats(0.3, 5), st.integers(0, 6))
def test_mass_conservation_and_oracle(counts, kind, width, trunc):
    k = KernelSpec(kind, width, trunc)
    out = lds_smooth(counts, k)
    assert abs(out.sum() - sum(counts)) <= 1e-9 * max(1.0, sum(counts))
    if kind != "identity":
        weight = (lambda d: math.exp(-0.5 * (d / width) ** 2)) if kind == "gaussian" \
            else (lambda d: max(0.0, 1 - abs(d) / (width + 1)))
        np.testing.assert_allclose(out, direct_smooth(counts, weight, trunc), rtol=1e-12, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 10))
def test_linearity(seed, a):
    rng = np.random.default_rng(seed)
    p, q = rng.random(12), rng.random(12)
    k = KernelSpec("gaussian", 1.5, 3)
    np.testing.assert_allclose(lds_smooth(a * p + q, k), a * lds_smooth(p, k) + lds_smooth(q, k),
                               rtol=1e-12)


def test_lds_weights():
    smoothed = np.array([10.0, 5.0, 1.0])
    bins = np.array([0] * 50 + [1] * 30 + [2] * 20)
    w = lds_weights(bins, smoothed, clip_percentile=100)
    assert w.mean() == pytest.approx(1.0)
    assert w[0] < w[60] < w[-1]
    assert np.all(np.isfinite(w)) and np.all(w > 0)
    with pytest.raises(ValueError):
        lds_weights(np.array([0, 1]), np.array([1.0, 0.0]))


def test_fds_identity_kernel():
    rng = np.random.default_rng(1)
    f = rng.normal(size=(30, 4))
    b = np.arange(30) % 3
    st_ = fds_statistics(f, b, KernelSpec("identity"))
    assert np.array_equal(st_.smoothed_mean, st_.mean) and np.array_equal(st_.smoothed_var, st_.var)
    for i in range(30):
        assert np.max(np.abs(fds_calibrate(f[i], b[i], st_) - f[i])) < 1e-12


def test_fds_identical_bins_fixed_point():
    f = np.tile(np.array([[1.0, 2.0], [3.0, -1.0]]), (3, 1))
    b = np.repeat([0, 1, 2], 2)
    st_ = fds_statistics(f, b, KernelSpec("gaussian", 2.0, 2))
    np.testing.assert_allclose(st_.smoothed_mean, st_.mean, atol=1e-15)
    np.testing.assert_allclose(st_.smoothed_var, st_.var, atol=1e-15)


def test_fds_triangular_two_bins():
    # width 0.5: weight at offset 1 is 1 - 1/1.5 = 1/3, normalized (0.75, 0.25)
    f = np.array([[0.0], [2.0], [10.0], [14.0]])
    b = np.array([0, 0, 1, 1])
    st_ = fds_statistics(f, b, KernelSpec("triangular", 0.5, 1))
    assert st_.smoothed_mean[0, 0] == pytest.approx(0.75 * 1.0 + 0.25 * 12.0)


def test_fds_calibrate_formula():
    from imblab.regimbal import BinStatistics
    st_ = BinStatistics(np.array([5]), np.zeros((1, 3)), np.ones((1, 3)), np.zeros((1, 3)),
                        4 * np.ones((1, 3)))
    f = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(fds_calibrate(f, 0, st_, eps=0.0), 2 * f)
    zero = BinStatistics(np.array([5]), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)),
                         np.ones((1, 1)))
    assert np.all(np.isfinite(fds_calibrate(np.array([1.0]), 0, zero)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_fds_unchanged_stats_identity(seed):
    from imblab.regimbal import BinStatistics
    rng = np.random.default_rng(seed)
    mean, var = rng.normal(size=(4, 5)), rng.random((4, 5))
    st_ = BinStatistics(np.ones(4, int), mean, var, mean.copy(), var.copy())
    f = rng.normal(size=5) * 10
    assert np.max(np.abs(fds_calibrate(f, 2, st_) - f)) < 1e-12
