import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilecluster.errors import EmptyInput, LengthMismatch, ShapeMismatch
from tilecluster.metrics import (
    SsimParams,
    completeness,
    conditional_entropy,
    contingency_table,
    entropy,
    f1_score,
    mse,
    ssim,
)


def test_entropy_examples():
    assert entropy([3, 3, 3]) == 0.0
    assert entropy([0, 1, 0, 1]) == pytest.approx(math.log(2), abs=1e-15)
    p = np.array([1, 2, 3]) / 6
    assert entropy([0, 1, 1, 2, 2, 2]) == pytest.approx(-np.sum(p * np.log(p)), abs=1e-12)
    assert entropy([0, 1], base=2) == pytest.approx(1.0)
    with pytest.raises(EmptyInput):
        entropy([])


def test_completeness_examples():
    assert completeness([0, 0, 1, 1], [5, 5, 2, 2]) == 1.0
    assert completeness([0, 0, 1, 1], [0, 0, 0, 0]) == 1.0
    assert completeness([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)


def test_completeness_errors():
    with pytest.raises(LengthMismatch):
        completeness([0, 1], [0])
    with pytest.raises(EmptyInput):
        completeness([], [])
    with pytest.raises(ShapeMismatch):
        completeness([[0, 1]], [[0, 1]])


def entropy_base2(counts):
    counts = np.asarray(counts, float)
    counts = counts[counts > 0]
    p = counts / counts.sum()
    return -np.sum(p * np.log2(p))


def completeness_base2(y_true, y_pred):
    # independent oracle: base-2 entropies from an explicit contingency table
    classes, clusters = sorted(set(y_true)), sorted(set(y_pred))
    table = np.array([[sum(1 for t, p in zip(y_true, y_pred) if t == c and p == k)
                       for k in clusters] for c in classes], float)
    h_k = entropy_base2(table.sum(axis=0))
    if h_k == 0:
        return 1.0
    n = table.sum()
    h_kc = sum(table[c].sum() / n * entropy_base2(table[c]) for c in range(len(classes)))
    return 1 - h_kc / h_k


labellings = st.integers(1, 40).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 4), min_size=n, max_size=n),
                        st.lists(st.integers(0, 5), min_size=n, max_size=n)))


@settings(max_examples=100, deadline=None)
@given(labellings)
def test_completeness_is_base_invariant(pair):
    y_true, y_pred = pair
    assert completeness(y_true, y_pred) == pytest.approx(completeness_base2(y_true, y_pred), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(labellings, st.permutations(range(6)), st.permutations(range(5)))
def test_completeness_relabel_and_bounds(pair, perm_pred, perm_true):
    y_true, y_pred = np.array(pair[0]), np.array(pair[1])
    c = completeness(y_true, y_pred)
    assert 0.0 <= c <= 1.0
    assert completeness(np.array(perm_true)[y_true], np.array(perm_pred)[y_pred]) == pytest.approx(c, abs=1e-12)
    assert completeness(y_true, y_true) == 1.0


@settings(max_examples=100, deadline=None)
@given(labellings, st.integers(0, 5), st.integers(0, 5))
def test_merging_clusters_never_raises_conditional_entropy(pair, a, b):
    y_true, y_pred = np.array(pair[0]), np.array(pair[1])
    merged = np.where(y_pred == b, a, y_pred)
    before = conditional_entropy(contingency_table(y_true, y_pred))
    after = conditional_entropy(contingency_table(y_true, merged))
    assert after <= before + 1e-12


def test_merging_can_lower_the_normalised_score():
    # merging two pure clusters shrinks H(K) while the split class keeps H(K|C)
    y_true = [0, 1, 0]
    assert completeness(y_true, [0, 1, 2]) == pytest.approx(1 - (2 / 3) * math.log(2) / math.log(3))
    assert completeness(y_true, [0, 0, 2]) < completeness(y_true, [0, 1, 2])
    # merging the pieces of the split class does help
    assert completeness(y_true, [0, 1, 0]) == 1.0


def test_conditional_entropy_table():
    t = contingency_table([0, 0, 1, 1], [0, 1, 0, 1])
    assert t.counts.tolist() == [[1, 1], [1, 1]]
    assert conditional_entropy(t) == pytest.approx(math.log(2))


def test_f1_perfect():
    r = f1_score([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert r.macro == 1.0
    assert r.per_class.tolist() == [1.0, 1.0, 1.0]


def test_f1_absent_class_is_zero_and_flagged():
    r = f1_score([0, 1, 1], [0, 1, 1], 3)
    assert r.per_class.tolist() == [1.0, 1.0, 0.0]
    assert r.undefined.tolist() == [False, False, True]
    assert r.macro == pytest.approx(2 / 3)


def test_f1_hand_confusion():
    # class 1 positive: TP=2, FP=1, FN=1
    y_true = [1, 1, 1, 0, 0]
    y_pred = [1, 1, 0, 1, 0]
    r = f1_score(y_true, y_pred, 2)
    assert r.precision[1] == pytest.approx(2 / 3)
    assert r.recall[1] == pytest.approx(2 / 3)
    assert r.per_class[1] == pytest.approx(2 / 3)


def test_f1_errors():
    with pytest.raises(LengthMismatch):
        f1_score([0], [0, 1], 2)
    with pytest.raises(ValueError):
        f1_score([0, 2], [0, 1], 2)


@settings(max_examples=50, deadline=None)
@given(labellings)
def test_macro_f1_bounds(pair):
    r = f1_score(pair[0], [p % 5 for p in pair[1]], 5)
    assert 0.0 <= r.macro <= 1.0


def test_mse_examples(rng):
    x = rng.random((4, 5))
    assert mse(x, x) == 0.0
    assert mse(np.zeros(6), np.ones(6)) == 1.0
    y = rng.random((4, 5))
    oracle = sum((a - b) ** 2 for a, b in zip(x.ravel(), y.ravel())) / x.size
    assert mse(x, y) == pytest.approx(oracle, abs=1e-12)
    with pytest.raises(ShapeMismatch):
        mse(np.zeros(3), np.zeros(4))


def test_ssim_identity_and_constants(rng):
    x = rng.random((16, 16, 3))
    assert ssim(x, x) == 1.0
    p = SsimParams()
    assert ssim(np.zeros((8, 8)), np.ones((8, 8)), p) == pytest.approx(p.c1 / (1 + p.c1), rel=1e-12)
    assert p.c1 / (1 + p.c1) == pytest.approx(1e-4, rel=1e-3)


@pytest.mark.parametrize("window", ["global", "sliding"])
def test_ssim_symmetric_and_bounded(rng, window):
    p = SsimParams(window=window)
    for _ in range(10):
        x, y = rng.random((12, 12)), rng.random((12, 12))
        s = ssim(x, y, p)
        assert s == pytest.approx(ssim(y, x, p), abs=1e-12)
        assert -1.0 <= s < 1.0


def test_sliding_window_against_loop(rng):
    x, y = rng.random((10, 11)), rng.random((10, 11))
    p = SsimParams(window="sliding", window_size=4)
    vals = []
    for i in range(10 - 3):
        for j in range(11 - 3):
            a, b = x[i:i + 4, j:j + 4], y[i:i + 4, j:j + 4]
            mx, my = a.mean(), b.mean()
            cov = ((a - mx) * (b - my)).mean()
            vals.append((2 * mx * my + p.c1) * (2 * cov + p.c2)
                        / ((mx ** 2 + my ** 2 + p.c1) * (a.var() + b.var() + p.c2)))
    assert ssim(x, y, p) == pytest.approx(np.mean(vals), abs=1e-10)


def test_ssim_params_validation():
    with pytest.raises(ValueError):
        SsimParams(window="gaussian")
    with pytest.raises(ValueError):
        SsimParams(k1=0.0)
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)), SsimParams(window="sliding"))
