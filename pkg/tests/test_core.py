import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imblab.core import ClassStats, ConfusionMatrix, Dataset, HEAD, MIDDLE, TAIL, \
    build_class_stats, confusion_from_predictions, derive_seed, make_rng, partition_by_counts


def test_class_stats_ratio_and_freqs():
    labels = [0] * 55 + [1] * 20
    s = build_class_stats(labels, 2)
    assert s.imbalance_ratio == pytest.approx(2.75)
    np.testing.assert_allclose(s.frequencies, [55 / 75, 20 / 75])
    assert round(s.frequencies[0], 4) == 0.7333


def test_balanced_ratio_one():
    assert build_class_stats([0, 1, 2] * 10, 3).imbalance_ratio == 1.0


def test_ratio_is_max_over_min():
    counts = np.array([6578, 3000, 1200, 800, 500, 400, 300, 250, 150, 100])
    labels = np.repeat(np.arange(10), counts)
    s = build_class_stats(labels, 10)
    assert s.imbalance_ratio == pytest.approx(65.78)


def test_single_class_ratio():
    assert build_class_stats([0, 0, 0], 1).imbalance_ratio == 1.0


def test_class_stats_errors():
    with pytest.raises(ValueError, match="empty"):
        build_class_stats([], 2)
    with pytest.raises(ValueError, match="no samples"):
        build_class_stats([0, 0], 2)
    with pytest.raises(ValueError):
        build_class_stats([0, 3], 2)


def test_partition_thirds_and_ties():
    tags = partition_by_counts([10, 50, 30])
    assert tags == (TAIL, HEAD, MIDDLE)
    # equal counts: lower index ranks first (more head-like)
    assert partition_by_counts([5, 5, 5]) == (HEAD, MIDDLE, TAIL)
    assert set(partition_by_counts([4, 3])) <= {HEAD, MIDDLE, TAIL}


def test_confusion_examples():
    np.testing.assert_array_equal(confusion_from_predictions([0, 1], [0, 1], 2).counts, np.eye(2))
    cm = confusion_from_predictions([0, 0, 1], [1, 1, 1], 2)
    np.testing.assert_array_equal(cm.counts, [[0, 2], [0, 1]])
    assert cm.total == 3
    with pytest.raises(ValueError):
        confusion_from_predictions([], [], 2)
    with pytest.raises(ValueError):
        confusion_from_predictions([0, 2], [0, 1], 2)


def test_confusion_rejects_negative():
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, -1], [0, 1]]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=5, max_size=60), st.randoms(use_true_random=False))
def test_stats_permutation_invariant(labels, rnd):
    K = 5
    if len(set(labels)) < K:
        labels = labels + list(range(K))
    shuffled = list(labels)
    rnd.shuffle(shuffled)
    a, b = build_class_stats(labels, K), build_class_stats(shuffled, K)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert a.partition == b.partition
    assert abs(a.frequencies.sum() - 1) < 1e-12
    assert np.all(np.diff(a.counts[a.order]) <= 0)
    assert a.imbalance_ratio >= 1
    assert len(a.partition) == K and set(a.partition) <= {HEAD, MIDDLE, TAIL}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=4, max_size=50))
def test_confusion_rows_match_stats(pairs):
    true = [t for t, _ in pairs] + [0, 1, 2, 3]
    pred = [p for _, p in pairs] + [0, 0, 0, 0]
    cm = confusion_from_predictions(true, pred, 4)
    np.testing.assert_array_equal(cm.support(), build_class_stats(true, 4).counts)
    assert cm.total == len(true)


def test_rng_reproducible_and_keyed():
    a = make_rng(7, "x").integers(0, 1000, size=20)
    b = make_rng(7, "x").integers(0, 1000, size=20)
    c = make_rng(7, "y").integers(0, 1000, size=20)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert derive_seed(1, "a") == derive_seed(1, "a") != derive_seed(2, "a")


def test_dataset_validation():
    X = np.zeros((3, 2))
    ds = Dataset(X, np.array([0, 1, 1]), ("a", "b", "c"), 2)
    assert len(ds) == 3 and ds.n_features == 2 and ds.is_categorical
    sub = ds.subset([2, 0])
    assert sub.ids == ("c", "a")
    with pytest.raises(ValueError):
        Dataset(X, np.array([0, 1]), ("a", "b", "c"), 2)
    with pytest.raises(ValueError):
        Dataset(X, np.array([0, 1, 2]), ("a", "b", "c"), 2)
    reg = Dataset(X, np.array([0.5, 1.0, 2.0]), ("a", "b", "c"), None)
    assert not reg.is_categorical


def test_stats_to_dict_roundtrip():
    s = build_class_stats([0, 0, 0, 1, 2, 2], 3)
    d = s.to_dict()
    s2 = ClassStats.from_counts(d["counts"])
    np.testing.assert_array_equal(s.counts, s2.counts)
    assert s2.partition == s.partition
