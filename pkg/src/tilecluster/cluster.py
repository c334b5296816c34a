"""K-Means and Gaussian mixtures fitted by expectation-maximisation.

Both estimators are deterministic for a given ``seed``; ties in assignment
always go to the lowest component index.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from tilecluster.errors import DimensionError, FoldTooSmall, KTooLarge, NumericalCollapse
from tilecluster.linalg import as_feature_matrix
from tilecluster.metrics import completeness

__all__ = [
    "KMeansModel",
    "GmmModel",
    "Assignment",
    "GridSpec",
    "GridResult",
    "COVARIANCE_TYPES",
    "fit_kmeans",
    "predict_kmeans",
    "fit_gmm",
    "predict_gmm",
    "gmm_log_prob",
    "grid_search",
]

COVARIANCE_TYPES = ("spherical", "diag", "full")
INIT_METHODS = ("kmeanspp", "random")


@dataclass(frozen=True, eq=False)
class Assignment:
    hard_labels: np.ndarray
    soft: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class KMeansModel:
    k: int
    centroids: np.ndarray
    inertia: float
    n_iter: int
    seed: int
    init: str = "kmeanspp"
    inertia_history: tuple = ()

    def predict(self, x) -> Assignment:
        return predict_kmeans(self, x)


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Fitted mixture.

    ``covariances`` is shaped ``(k,)`` for spherical, ``(k, d)`` for diag and
    ``(k, d, d)`` for full. ``log_likelihood`` is the mean per-sample log
    density of the training data under the final parameters.
    """

    k: int
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_type: str
    log_likelihood: float
    seed: int
    n_iter: int = 0
    converged: bool = False
    reg_covar: float = 1e-6
    history: tuple = ()

    def predict(self, x) -> Assignment:
        return predict_gmm(self, x)


# ---------------------------------------------------------------------------
# K-Means
# ---------------------------------------------------------------------------

def _sq_dists(x, c):
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def _init_centroids(x, k, init, rng):
    if init == "kmeanspp":
        return _kmeanspp(x, k, rng)
    if init == "random":
        return x[np.sort(rng.choice(x.shape[0], size=k, replace=False))].copy()
    raise ValueError(f"unknown init {init!r}, expected one of {INIT_METHODS}")


def _lloyd(x, centroids, max_iter, tol):
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(x)), labels].sum()))
        new = centroids.copy()
        counts = np.bincount(labels, minlength=len(centroids))
        for j in np.nonzero(counts)[0]:
            new[j] = x[labels == j].mean(axis=0)
        empty = np.nonzero(counts == 0)[0]
        if empty.size:
            # refill each empty cluster with the point farthest from its centroid
            own = d[np.arange(len(x)), labels].copy()
            for j in empty:
                far = int(np.argmax(own))
                new[j] = x[far]
                own[far] = -1.0
        shift = float(np.sqrt(np.sum((new - centroids) ** 2)))
        centroids = new
        if shift < tol:
            break
    d = _sq_dists(x, centroids)
    inertia = float(d.min(axis=1).sum())
    history.append(inertia)
    return centroids, inertia, n_iter, history


def fit_kmeans(x, k: int, init: str = "kmeanspp", seed: int = 0,
               max_iter: int = 300, tol: float = 1e-6, n_init: int = 1) -> KMeansModel:
    """Lloyd's algorithm; the best of ``n_init`` seeded restarts by inertia."""
    x = as_feature_matrix(x)
    if not 1 <= k <= x.shape[0]:
        raise KTooLarge(f"k={k} with {x.shape[0]} samples")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        c0 = _init_centroids(x, k, init, rng)
        c, inertia, n_iter, hist = _lloyd(x, c0, max_iter, tol)
        if best is None or inertia < best.inertia:
            best = KMeansModel(k, c, inertia, n_iter, seed, init, tuple(hist))
    return best


def predict_kmeans(m: KMeansModel, x) -> Assignment:
    x = as_feature_matrix(x)
    if x.shape[1] != m.centroids.shape[1]:
        raise DimensionError(f"model has {m.centroids.shape[1]} dims, got {x.shape[1]}")
    return Assignment(np.argmin(_sq_dists(x, m.centroids), axis=1))


# ---------------------------------------------------------------------------
# Gaussian mixtures
# ---------------------------------------------------------------------------

_LOG_2PI = math.log(2 * math.pi)


def _component_log_prob(x, means, covariances, covariance_type):
    """(n, k) matrix of log N(x_i | mu_j, Sigma_j)."""
    n, d = x.shape
    k = means.shape[0]
    out = np.empty((n, k))
    if covariance_type == "spherical":
        for j in range(k):
            diff = x - means[j]
            out[:, j] = -0.5 * (d * _LOG_2PI + d * math.log(covariances[j])
                                + np.sum(diff * diff, axis=1) / covariances[j])
    elif covariance_type == "diag":
        for j in range(k):
            var = covariances[j]
            diff = x - means[j]
            out[:, j] = -0.5 * (d * _LOG_2PI + np.sum(np.log(var))
                                + np.sum(diff * diff / var, axis=1))
    elif covariance_type == "full":
        for j in range(k):
            try:
                chol = np.linalg.cholesky(covariances[j])
            except np.linalg.LinAlgError:
                raise NumericalCollapse(f"component {j} covariance is not positive definite") from None
            sol = solve_triangular(chol, (x - means[j]).T, lower=True)
            out[:, j] = -0.5 * (d * _LOG_2PI + np.sum(sol * sol, axis=0)) \
                - np.sum(np.log(np.diag(chol)))
    else:
        raise ValueError(f"unknown covariance_type {covariance_type!r}")
    return out


def _estep(x, weights, means, covariances, covariance_type):
    with np.errstate(divide="ignore"):
        weighted = _component_log_prob(x, means, covariances, covariance_type) + np.log(weights)
    norm = logsumexp(weighted, axis=1)
    return weighted - norm[:, None], float(norm.mean())


def _mstep(x, resp, covariance_type, reg_covar):
    n, d = x.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / n
    weights /= weights.sum()
    means = (resp.T @ x) / nk[:, None]
    k = resp.shape[1]
    if covariance_type == "full":
        cov = np.empty((k, d, d))
        for j in range(k):
            diff = x - means[j]
            cov[j] = (resp[:, j, None] * diff).T @ diff / nk[j]
            cov[j].flat[:: d + 1] += reg_covar
    else:
        cov = np.empty((k, d))
        for j in range(k):
            diff = x - means[j]
            cov[j] = resp[:, j] @ (diff * diff) / nk[j]
        cov += reg_covar
        if covariance_type == "spherical":
            cov = cov.mean(axis=1)
    return weights, means, cov


def _check_covariances(cov, covariance_type, reg_covar):
    if covariance_type == "full":
        eig = np.linalg.eigvalsh(cov)
        # eigvalsh is only accurate to about eps * ||cov||
        slack = 64 * np.finfo(float).eps * np.abs(eig).max(axis=-1, keepdims=True)
    else:
        eig = cov
        slack = 0.0
    if not np.all(np.isfinite(eig)) or np.any(eig < reg_covar * (1 - 1e-9) - slack):
        raise NumericalCollapse("covariance could not be regularised")


def _fit_gmm_once(x, k, covariance_type, rng, max_iter, tol, reg_covar, init):
    n = x.shape[0]
    seed = int(rng.integers(2 ** 31))
    km = fit_kmeans(x, k, init=init, seed=seed, max_iter=100)
    resp = np.zeros((n, k))
    resp[np.arange(n), predict_kmeans(km, x).hard_labels] = 1.0
    weights, means, cov = _mstep(x, resp, covariance_type, reg_covar)
    history = []
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        log_resp, ll = _estep(x, weights, means, cov, covariance_type)
        if history and ll - history[-1] < tol:
            history.append(ll)
            converged = True
            break
        history.append(ll)
        weights, means, cov = _mstep(x, np.exp(log_resp), covariance_type, reg_covar)
    if not converged:
        _, ll = _estep(x, weights, means, cov, covariance_type)
        history.append(ll)
    _check_covariances(cov, covariance_type, reg_covar)
    return weights, means, cov, history, n_iter, converged


def fit_gmm(x, k: int, covariance_type: str = "full", seed: int = 0,
            max_iter: int = 100, tol: float = 1e-3, reg_covar: float = 1e-6,
            n_init: int = 1, init: str = "kmeanspp") -> GmmModel:
    """EM for a ``k``-component mixture, initialised from seeded K-Means.

    Stops once the mean per-sample log-likelihood improves by less than
    ``tol``; returns the best of ``n_init`` restarts.
    """
    x = as_feature_matrix(x)
    if covariance_type not in COVARIANCE_TYPES:
        raise ValueError(f"covariance_type must be one of {COVARIANCE_TYPES}")
    if not 1 <= k <= x.shape[0]:
        raise KTooLarge(f"k={k} with {x.shape[0]} samples")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        w, mu, cov, hist, n_iter, conv = _fit_gmm_once(
            x, k, covariance_type, rng, max_iter, tol, reg_covar, init)
        if best is None or hist[-1] > best.log_likelihood:
            best = GmmModel(k, w, mu, cov, covariance_type, hist[-1], seed,
                            n_iter, conv, reg_covar, tuple(hist))
    return best


def gmm_log_prob(m: GmmModel, x) -> np.ndarray:
    """Per-sample log density under the mixture."""
    x = as_feature_matrix(x)
    if x.shape[1] != m.means.shape[1]:
        raise DimensionError(f"model has {m.means.shape[1]} dims, got {x.shape[1]}")
    with np.errstate(divide="ignore"):
        weighted = _component_log_prob(x, m.means, m.covariances, m.covariance_type) \
            + np.log(m.weights)
    return logsumexp(weighted, axis=1)


def predict_gmm(m: GmmModel, x) -> Assignment:
    x = as_feature_matrix(x)
    if x.shape[1] != m.means.shape[1]:
        raise DimensionError(f"model has {m.means.shape[1]} dims, got {x.shape[1]}")
    log_resp, _ = _estep(x, m.weights, m.means, m.covariances, m.covariance_type)
    soft = np.exp(log_resp)
    return Assignment(np.argmax(soft, axis=1), soft)


# ---------------------------------------------------------------------------
# Grid search with K-fold cross-validation
# ---------------------------------------------------------------------------

_GRID_KEYS = {
    "kmeans": {"k", "init", "seed"},
    "gmm": {"k", "covariance_type", "init", "seed"},
}


@dataclass
class GridSpec:
    """Hyperparameter grid scored by mean validation completeness."""

    param_grid: dict
    n_folds: int = 3
    seed: int = 0
    scoring: str = field(default="completeness", init=False)

    def __post_init__(self):
        if not self.param_grid or any(len(v) == 0 for v in self.param_grid.values()):
            raise ValueError("parameter grid must be non-empty")
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")

    def settings(self) -> list:
        keys = list(self.param_grid)
        return [dict(zip(keys, combo))
                for combo in itertools.product(*(self.param_grid[k] for k in keys))]


@dataclass
class GridResult:
    best_params: dict
    best_score: float
    table: list  # (params, mean validation completeness) in grid order


def _fit_predict(algorithm, params, x_train, x_val):
    k = params["k"]
    seed = params.get("seed", 0)
    if algorithm == "kmeans":
        m = fit_kmeans(x_train, k, init=params.get("init", "kmeanspp"), seed=seed)
        return predict_kmeans(m, x_val).hard_labels
    m = fit_gmm(x_train, k, covariance_type=params.get("covariance_type", "full"),
                seed=seed, init=params.get("init", "kmeanspp"))
    return predict_gmm(m, x_val).hard_labels


def kfold_indices(n: int, n_folds: int, seed: int) -> list:
    if n_folds > n:
        raise FoldTooSmall(f"{n_folds} folds for {n} samples leaves an empty fold")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, n_folds)


def grid_search(x, labels, spec: GridSpec, algorithm: str) -> GridResult:
    x = as_feature_matrix(x)
    labels = np.asarray(labels)
    if algorithm not in _GRID_KEYS:
        raise ValueError(f"algorithm must be 'kmeans' or 'gmm', got {algorithm!r}")
    if len(labels) != x.shape[0]:
        raise DimensionError(f"{len(labels)} labels for {x.shape[0]} samples")
    unknown = set(spec.param_grid) - _GRID_KEYS[algorithm]
    if unknown:
        raise ValueError(f"unknown {algorithm} hyperparameters: {sorted(unknown)}")
    if "k" not in spec.param_grid:
        raise ValueError("grid must include 'k'")
    folds = kfold_indices(x.shape[0], spec.n_folds, spec.seed)
    table = []
    for params in spec.settings():
        scores = []
        for i, val in enumerate(folds):
            train = np.concatenate([f for j, f in enumerate(folds) if j != i])
            pred = _fit_predict(algorithm, params, x[train], x[val])
            scores.append(completeness(labels[val], pred))
        table.append((params, float(np.mean(scores))))
    best_params, best_score = table[0]
    for params, score in table[1:]:
        if score > best_score:
            best_params, best_score = params, score
    return GridResult(dict(best_params), best_score, table)
