import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from tilecluster.cluster import (
    GmmModel,
    GridSpec,
    KMeansModel,
    fit_gmm,
    fit_kmeans,
    gmm_log_prob,
    grid_search,
    kfold_indices,
    predict_gmm,
    predict_kmeans,
)
from tilecluster.errors import DimensionError, FoldTooSmall, KTooLarge
from tilecluster.synthdata import make_blobs


def test_two_separated_pairs():
    x = np.array([[0.0], [0.1], [10.0], [10.1]])
    m = fit_kmeans(x, 2, seed=3)
    np.testing.assert_allclose(np.sort(m.centroids[:, 0]), [0.05, 10.05], atol=1e-12)
    assert m.inertia == pytest.approx(0.01, abs=1e-12)


def test_single_cluster_is_the_mean(rng):
    x = rng.normal(size=(17, 3))
    m = fit_kmeans(x, 1)
    np.testing.assert_allclose(m.centroids[0], x.mean(axis=0), atol=1e-12)
    assert m.inertia == pytest.approx(((x - x.mean(axis=0)) ** 2).sum(), rel=1e-12)


def best_two_partition(x):
    best = np.inf
    n = len(x)
    for r in range(1, n // 2 + 1):
        for group in itertools.combinations(range(n), r):
            mask = np.zeros(n, bool)
            mask[list(group)] = True
            sse = sum(((x[s] - x[s].mean(axis=0)) ** 2).sum() for s in (mask, ~mask))
            best = min(best, sse)
    return best


@pytest.mark.parametrize("seed", range(5))
def test_six_points_reach_exhaustive_optimum(seed):
    x = np.random.default_rng(seed).normal(size=(6, 2))
    m = fit_kmeans(x, 2, seed=seed, n_init=10)
    assert m.inertia == pytest.approx(best_two_partition(x), rel=1e-10)


def test_nearest_centroid_and_tie_break():
    m = KMeansModel(2, np.array([[0.0, 0.0], [2.0, 0.0]]), 0.0, 0, 0)
    assert predict_kmeans(m, [[2.0, 0.0]]).hard_labels.tolist() == [1]
    assert predict_kmeans(m, [[1.0, 0.0]]).hard_labels.tolist() == [0]


def test_labels_match_brute_force_scan(rng):
    c = rng.normal(size=(5, 3))
    x = rng.normal(size=(200, 3))
    m = KMeansModel(5, c, 0.0, 0, 0)
    expected = [min(range(5), key=lambda j: np.sum((p - c[j]) ** 2)) for p in x]
    assert predict_kmeans(m, x).hard_labels.tolist() == expected


def test_labels_follow_centroid_permutation(rng):
    c = rng.normal(size=(4, 2))
    x = rng.normal(size=(50, 2))
    perm = rng.permutation(4)
    base = predict_kmeans(KMeansModel(4, c, 0.0, 0, 0), x).hard_labels
    moved = predict_kmeans(KMeansModel(4, c[perm], 0.0, 0, 0), x).hard_labels
    inverse = np.argsort(perm)
    assert np.array_equal(moved, inverse[base])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.sampled_from(["kmeanspp", "random"]))
def test_inertia_never_increases(seed, k, init):
    x = np.random.default_rng(seed).normal(size=(40, 2))
    h = np.array(fit_kmeans(x, k, init=init, seed=seed).inertia_history)
    assert np.all(np.diff(h) <= 1e-10)


def test_kmeans_errors(rng):
    with pytest.raises(KTooLarge):
        fit_kmeans(rng.normal(size=(3, 2)), 4)
    m = fit_kmeans(rng.normal(size=(10, 2)), 2)
    with pytest.raises(DimensionError):
        predict_kmeans(m, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        fit_kmeans(rng.normal(size=(10, 2)), 2, init="bogus")


def test_empty_cluster_is_refilled():
    # duplicate points leave a centroid with no members on the first pass
    x = np.array([[0.0], [0.0], [0.0], [5.0]])
    m = fit_kmeans(x, 3, init="random", seed=0)
    assert m.centroids.shape == (3, 1)
    assert m.inertia == pytest.approx(0.0)


def test_refit_is_bit_identical(rng):
    x = rng.normal(size=(60, 3))
    a, b = fit_kmeans(x, 3, seed=9), fit_kmeans(x, 3, seed=9)
    assert np.array_equal(a.centroids, b.centroids)
    g1, g2 = fit_gmm(x, 3, "diag", seed=9), fit_gmm(x, 3, "diag", seed=9)
    assert np.array_equal(g1.means, g2.means)
    assert np.array_equal(g1.covariances, g2.covariances)


def test_single_spherical_component_closed_form(rng):
    x = rng.normal(size=(40, 3)) * [1.0, 2.0, 3.0]
    m = fit_gmm(x, 1, "spherical")
    np.testing.assert_allclose(m.means[0], x.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(m.covariances[0], x.var(axis=0).mean() + m.reg_covar, rtol=1e-10)
    np.testing.assert_allclose(m.weights, [1.0])


def test_blob_means_and_weights_recovered():
    x, y = make_blobs(600, 2, 3, separation=12.0, seed=4)
    m = fit_gmm(x, 2, "spherical", seed=0)
    truth = np.array([x[y == j].mean(axis=0) for j in range(2)])
    generating = np.zeros((2, 3))
    generating[0, 0], generating[1, 0] = 6.0, -6.0
    order = np.argsort(m.means[:, 0])[::-1]
    np.testing.assert_allclose(m.means[order], generating, atol=0.2)
    np.testing.assert_allclose(m.means[order], truth, atol=0.1)
    np.testing.assert_allclose(m.weights, [0.5, 0.5], atol=0.05)


def mixture_logpdf(m: GmmModel, x):
    dens = np.zeros(len(x))
    for j in range(m.k):
        cov = m.covariances[j]
        if m.covariance_type == "spherical":
            cov = np.eye(x.shape[1]) * cov
        elif m.covariance_type == "diag":
            cov = np.diag(cov)
        dens += m.weights[j] * multivariate_normal(m.means[j], cov).pdf(x)
    return np.log(dens)


@pytest.mark.parametrize("cov", ["spherical", "diag", "full"])
def test_log_likelihood_matches_density_oracle(rng, cov):
    x, _ = make_blobs(150, 3, 2, separation=4.0, anisotropy=3.0, seed=2)
    m = fit_gmm(x, 3, cov, seed=1)
    oracle = mixture_logpdf(m, x)
    np.testing.assert_allclose(gmm_log_prob(m, x), oracle, atol=1e-8)
    assert m.log_likelihood == pytest.approx(oracle.mean(), abs=1e-8)


def test_em_log_likelihood_never_decreases():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(30, 2)) + rng.integers(0, 3, size=(30, 1)) * 3
        cov = ("spherical", "diag", "full")[seed % 3]
        h = np.array(fit_gmm(x, 1 + seed % 4, cov, seed=seed, tol=1e-9).history)
        assert np.all(np.diff(h) >= -1e-7), seed


def test_responsibilities_and_separation():
    m = GmmModel(2, np.array([0.5, 0.5]), np.array([[0.0, 0.0], [20.0, 0.0]]),
                 np.array([1.0, 1.0]), "spherical", 0.0, 0)
    a = predict_gmm(m, [[0.0, 0.0], [10.0, 3.0]])
    assert a.soft[0, 0] > 0.99
    np.testing.assert_allclose(a.soft[1], [0.5, 0.5], atol=1e-9)
    assert a.hard_labels.tolist() == [0, 0]


def test_bayes_rule_oracle(rng):
    k, d = 3, 2
    a = rng.normal(size=(k, d, d))
    cov = a @ a.transpose(0, 2, 1) + 0.5 * np.eye(d)
    w = rng.dirichlet(np.ones(k))
    m = GmmModel(k, w, rng.normal(size=(k, d)) * 2, cov, "full", 0.0, 0)
    x = rng.normal(size=(40, d)) * 2
    joint = np.column_stack([w[j] * multivariate_normal(m.means[j], cov[j]).pdf(x) for j in range(k)])
    soft = predict_gmm(m, x).soft
    np.testing.assert_allclose(soft, joint / joint.sum(axis=1, keepdims=True), atol=1e-10)
    np.testing.assert_allclose(soft.sum(axis=1), 1.0, atol=1e-9)


def test_gmm_errors(rng):
    x = rng.normal(size=(10, 2))
    with pytest.raises(ValueError):
        fit_gmm(x, 2, "tied")
    with pytest.raises(KTooLarge):
        fit_gmm(x, 11)
    with pytest.raises(DimensionError):
        predict_gmm(fit_gmm(x, 2), np.zeros((1, 5)))


def test_grid_of_one_setting(rng):
    x, y = make_blobs(30, 2, 2, seed=1)
    r = grid_search(x, y, GridSpec({"k": [2]}, n_folds=3), "kmeans")
    assert r.best_params == {"k": 2}
    assert len(r.table) == 1


def test_grid_tie_goes_to_first_setting():
    x, y = make_blobs(60, 2, 2, separation=30.0, seed=0)
    r = grid_search(x, y, GridSpec({"k": [2], "seed": [5, 1]}, n_folds=3), "gmm")
    assert [s for _, s in r.table] == [1.0, 1.0]
    assert r.best_params["seed"] == 5


def test_two_fold_trace_by_hand():
    x = np.array([[0.0], [2.0], [10.0], [12.0]])
    y = np.array([0, 1, 1, 1])
    folds = kfold_indices(4, 2, 0)
    assert sorted(map(sorted, folds)) == [[0, 2], [1, 3]]
    # validate on {0, 2}: centroids 2 and 12 send 0 and 10 to different
    # clusters, matching the two classes -> 1.0.
    # validate on {1, 3}: centroids 0 and 10 split class 1 -> 0.0.
    r = grid_search(x, y, GridSpec({"k": [2]}, n_folds=2, seed=0), "kmeans")
    assert r.best_score == pytest.approx(0.5, abs=1e-12)


def test_grid_validation():
    x = np.zeros((4, 1))
    with pytest.raises(FoldTooSmall):
        grid_search(x, [0, 0, 1, 1], GridSpec({"k": [1]}, n_folds=5), "kmeans")
    with pytest.raises(ValueError):
        GridSpec({})
    with pytest.raises(ValueError):
        GridSpec({"k": [1]}, n_folds=1)
    with pytest.raises(ValueError):
        grid_search(x, [0, 0, 1, 1], GridSpec({"k": [1], "covariance_type": ["full"]}), "kmeans")
    with pytest.raises(DimensionError):
        grid_search(x, [0, 1], GridSpec({"k": [1]}, n_folds=2), "kmeans")


def test_rank_deficient_components_are_regularised_not_rejected():
    # four 9-D components over 38 points: some get fewer points than dimensions
    r = np.random.default_rng(14)
    x = r.normal(size=(38, 9)) * 7.0 + r.normal(size=(4, 9))[r.integers(0, 4, 38)] * 5
    m = fit_gmm(x, 4, "full", seed=14)
    assert np.all(np.linalg.eigvalsh(m.covariances) > 0)
    assert np.all(np.diff(m.history) >= -1e-7)
