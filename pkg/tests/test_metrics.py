import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eadnet.metrics import ConfusionMatrix, accumulate, miou


def test_perfect_class0():
    cm = accumulate(ConfusionMatrix(3), np.zeros((10, 10), int), np.zeros((10, 10), int))
    assert cm.counts[0, 0] == 100 and cm.total == 100


def test_all_ignored_is_noop():
    cm = ConfusionMatrix(2)
    accumulate(cm, np.zeros(5, int), np.full(5, 255))
    assert cm.total == 0


def test_hand_counted_example():
    cm = accumulate(ConfusionMatrix(2), np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]))
    np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 2]])
    m, per = miou(cm)
    np.testing.assert_allclose(per, [0.5, 2 / 3])
    assert m == pytest.approx(7 / 12)


def test_trivial_mious():
    labels = np.random.default_rng(0).integers(0, 4, (20, 20))
    assert miou(accumulate(ConfusionMatrix(4), labels, labels))[0] == 1.0
    assert miou(ConfusionMatrix(2, np.array([[0, 7], [7, 0]])))[0] == 0.0


def test_absent_classes_excluded():
    cm = accumulate(ConfusionMatrix(5), np.array([0, 1, 1]), np.array([0, 1, 1]))
    m, per = miou(cm)
    assert m == 1.0 and np.isnan(per[2:]).all()


def test_errors():
    with pytest.raises(ValueError):
        miou(ConfusionMatrix(3))
    with pytest.raises(ValueError):
        accumulate(ConfusionMatrix(2), np.array([0, 2]), np.array([0, 1]))
    with pytest.raises(ValueError):
        accumulate(ConfusionMatrix(2), np.array([0, 1]), np.array([0, 3]))
    with pytest.raises(ValueError):
        accumulate(ConfusionMatrix(2), np.array([0, 1, 1]), np.array([0, 1]))


@given(st.integers(2, 6), st.integers(1, 200), st.integers(0, 10 ** 6))
def test_accumulate_is_order_independent(k, n, seed):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, k, n)
    truth[rng.random(n) < 0.1] = 255
    pred = rng.integers(0, k, n)
    perm = rng.permutation(n)
    a = accumulate(ConfusionMatrix(k), pred, truth)
    b = accumulate(ConfusionMatrix(k), pred[perm], truth[perm])
    split = int(rng.integers(0, n + 1))
    c = accumulate(ConfusionMatrix(k), pred[:split], truth[:split]) + accumulate(ConfusionMatrix(k), pred[split:], truth[split:])
    assert a == b == c


@given(st.integers(2, 6), st.integers(1, 50), st.integers(0, 10 ** 6))
def test_miou_scale_invariant(k, scale, seed):
    counts = np.random.default_rng(seed).integers(0, 20, (k, k))
    counts[0, 0] += 1
    assert miou(ConfusionMatrix(k, counts * scale))[0] == pytest.approx(miou(ConfusionMatrix(k, counts))[0])
