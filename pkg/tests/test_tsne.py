import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilecluster.errors import DimensionError, PerplexityTooLarge, ShapeMismatch
from tilecluster.tsne import (
    TsneConfig,
    conditional_affinities,
    fit_tsne,
    joint_affinities,
    kl_divergence,
    student_affinities,
)


def row_entropy_bits(row):
    row = row[row > 0]
    return -np.sum(row * np.log2(row))


def test_equidistant_points_give_uniform_rows():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    # every row has entropy 1 bit whatever the bandwidth, so perplexity 2
    P, _ = conditional_affinities(x, 2.0)
    expected = np.full((3, 3), 0.5)
    np.fill_diagonal(expected, 0.0)
    np.testing.assert_allclose(P, expected, atol=1e-12)


@pytest.mark.parametrize("perplexity", [2.0, 5.0, 12.0])
def test_rows_hit_target_entropy(rng, perplexity):
    x = rng.normal(size=(40, 6))
    P, sigmas = conditional_affinities(x, perplexity)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diag(P) == 0.0)
    assert np.all(sigmas > 0)
    for row in P:
        assert row_entropy_bits(row) == pytest.approx(math.log2(perplexity), abs=1e-4)


def test_duplicate_point_dominates_row(rng):
    x = rng.normal(size=(12, 3)) * 5
    x[7] = x[3]
    P, _ = conditional_affinities(x, 3.0)
    assert np.argmax(P[3]) == 7
    assert np.argmax(P[7]) == 3


def test_perplexity_checks(rng):
    with pytest.raises(PerplexityTooLarge):
        conditional_affinities(rng.normal(size=(5, 2)), 5.0)
    with pytest.raises(DimensionError):
        conditional_affinities(rng.normal(size=(2, 2)), 1.5)
    with pytest.raises(ValueError):
        TsneConfig(perplexity=1.0)
    with pytest.raises(ValueError):
        TsneConfig(n_iter=100)


def test_joint_and_student_affinities(rng):
    x = rng.normal(size=(15, 4))
    P = joint_affinities(conditional_affinities(x, 4.0)[0])
    Q, _ = student_affinities(rng.normal(size=(15, 2)))
    for M in (P, Q):
        assert M.sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(M, M.T, atol=1e-15)
        assert np.all(np.diag(M) == 0.0)
        off = M[~np.eye(15, dtype=bool)]
        assert off.min() >= 1e-12 / (1 + 1e-9) * 0.999


def test_kl_examples(rng):
    P = rng.dirichlet(np.ones(20))
    assert kl_divergence(P, P) == pytest.approx(0.0, abs=1e-12)
    expected = 0.5 * math.log(5 / 9) + 0.5 * math.log(5)
    assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.5108, abs=1e-4)
    with pytest.raises(ShapeMismatch):
        kl_divergence(np.ones(3) / 3, np.ones(4) / 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2 ** 32 - 1))
def test_kl_is_non_negative(n, seed):
    r = np.random.default_rng(seed)
    assert kl_divergence(r.dirichlet(np.ones(n)), r.dirichlet(np.ones(n))) >= -1e-15


def test_separated_blobs_stay_apart(rng):
    a = rng.normal(size=(10, 10))
    b = rng.normal(size=(10, 10))
    b[:, 0] += 50.0
    res = fit_tsne(np.vstack([a, b]), TsneConfig(perplexity=5.0, n_iter=500, learning_rate="auto", seed=1))
    y = res.embedding
    ca, cb = y[:10].mean(axis=0), y[10:].mean(axis=0)
    spread = np.mean([np.linalg.norm(y[:10] - ca, axis=1).mean(),
                      np.linalg.norm(y[10:] - cb, axis=1).mean()])
    assert np.linalg.norm(ca - cb) > 5 * spread


@pytest.mark.parametrize("n, rate", [(120, 200.0), (30, "auto")])
def test_embedding_centred_and_kl_drops(rng, n, rate):
    x = rng.normal(size=(n, 5))
    res = fit_tsne(x, TsneConfig(perplexity=8.0, n_iter=400, learning_rate=rate, seed=2))
    np.testing.assert_allclose(res.embedding.mean(axis=0), 0.0, atol=1e-6)
    assert res.kl < res.kl_history[0]
    assert res.kl == res.kl_history[-1]


def test_kl_trend_after_exaggeration(rng):
    x = rng.normal(size=(40, 4))
    cfg = TsneConfig(perplexity=10.0, n_iter=600, seed=0)
    h = fit_tsne(x, cfg).kl_history
    ends = h[cfg.exaggeration_iters + 1::50]
    assert np.all(np.diff(ends) <= 1e-9)


def test_auto_rate_keeps_small_sets_bounded(rng):
    x = rng.normal(size=(30, 5))
    cfg = TsneConfig(perplexity=8.0, n_iter=400, learning_rate="auto", seed=2)
    assert cfg.step_size(30) == 50.0
    assert cfg.step_size(4800) == 100.0
    assert np.abs(fit_tsne(x, cfg).embedding).max() < 100
    with pytest.raises(ValueError):
        TsneConfig(learning_rate=0.0)


def test_same_seed_same_embedding(rng):
    x = rng.normal(size=(20, 3))
    cfg = TsneConfig(perplexity=5.0, n_iter=300, seed=4)
    assert np.array_equal(fit_tsne(x, cfg).embedding, fit_tsne(x, cfg).embedding)


def test_too_few_points(rng):
    with pytest.raises(DimensionError):
        fit_tsne(rng.normal(size=(4, 2)), TsneConfig(perplexity=2.0, n_iter=250))
