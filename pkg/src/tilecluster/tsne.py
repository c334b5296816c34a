"""Exact O(n^2) t-SNE for 2-D diagnostic embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tilecluster.errors import DimensionError, PerplexityTooLarge, ShapeMismatch
from tilecluster.linalg import as_feature_matrix

__all__ = [
    "TsneConfig",
    "TsneResult",
    "conditional_affinities",
    "joint_affinities",
    "student_affinities",
    "kl_divergence",
    "fit_tsne",
]

P_FLOOR = 1e-12
ENTROPY_TOL = 1e-5
MAX_BISECTIONS = 50


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    n_iter: int = 1000
    learning_rate: float | str = 200.0  # or "auto"
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum: float = 0.5
    final_momentum: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 1:
            raise ValueError("perplexity must exceed 1")
        if self.n_iter < self.exaggeration_iters:
            raise ValueError(f"n_iter must be >= {self.exaggeration_iters}")
        if self.learning_rate != "auto" and not float(self.learning_rate) > 0:
            raise ValueError("learning_rate must be positive or 'auto'")

    def step_size(self, n: int) -> float:
        """Learning rate for ``n`` points.

        A fixed rate of 200 overshoots during exaggeration when n is small
        (a few hundred points or fewer); "auto" scales the rate with n.
        """
        if self.learning_rate == "auto":
            return max(n / self.early_exaggeration / 4.0, 50.0)
        return float(self.learning_rate)


@dataclass(frozen=True, eq=False)
class TsneResult:
    embedding: np.ndarray
    kl: float
    kl_history: np.ndarray
    sigmas: np.ndarray


def _sq_dist_matrix(x):
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _row_entropy(dist_row, beta):
    """Base-2 entropy and probabilities of exp(-beta * d) over one row."""
    shifted = dist_row - dist_row.min()
    p = np.exp(-beta * shifted)
    s = p.sum()
    p /= s
    nz = p > 0
    h = -np.sum(p[nz] * np.log2(p[nz]))
    return h, p


def conditional_affinities(x, perplexity: float):
    """Row-stochastic p(j|i) and the per-point Gaussian bandwidths.

    Each bandwidth is found by bisection on the precision so that the row's
    base-2 entropy equals log2(perplexity).
    """
    x = as_feature_matrix(x)
    n = x.shape[0]
    if n < 3:
        raise DimensionError("need at least 3 samples")
    if perplexity >= n:
        raise PerplexityTooLarge(f"perplexity {perplexity} must be < n_samples={n}")
    d = _sq_dist_matrix(x)
    target = np.log2(perplexity)
    P = np.zeros((n, n))
    sigmas = np.empty(n)
    for i in range(n):
        row = np.delete(d[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        scale = np.mean(row)
        if scale > 0:
            beta = 1.0 / scale
        h, p = _row_entropy(row, beta)
        for _ in range(MAX_BISECTIONS):
            if abs(h - target) < ENTROPY_TOL:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
            h, p = _row_entropy(row, beta)
        P[i, np.arange(n) != i] = p
        sigmas[i] = np.sqrt(1.0 / (2 * beta))
    return P, sigmas


def _floor_and_normalise(M):
    M = np.maximum(M, P_FLOOR)
    np.fill_diagonal(M, 0.0)
    return M / M.sum()


def joint_affinities(P_cond):
    n = P_cond.shape[0]
    return _floor_and_normalise((P_cond + P_cond.T) / (2 * n))


def student_affinities(Y):
    num = 1.0 / (1.0 + _sq_dist_matrix(Y))
    np.fill_diagonal(num, 0.0)
    return _floor_and_normalise(num), num


def kl_divergence(P, Q) -> float:
    """sum P ln(P/Q); the diagonal of square matrices is ignored."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ShapeMismatch(f"{P.shape} vs {Q.shape}")
    if P.ndim == 2 and P.shape[0] == P.shape[1]:
        mask = ~np.eye(P.shape[0], dtype=bool)
        P, Q = P[mask], Q[mask]
    P = np.maximum(P, P_FLOOR)
    Q = np.maximum(Q, P_FLOOR)
    return float(np.sum(P * np.log(P / Q)))


def fit_tsne(x, cfg: TsneConfig = TsneConfig()) -> TsneResult:
    x = as_feature_matrix(x)
    n = x.shape[0]
    if n < 5:
        raise DimensionError("t-SNE needs at least 5 samples")
    P_cond, sigmas = conditional_affinities(x, cfg.perplexity)
    P = joint_affinities(P_cond)
    rng = np.random.default_rng(cfg.seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    Y -= Y.mean(axis=0)
    lr = cfg.step_size(n)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = np.empty(cfg.n_iter + 1)
    Q, num = student_affinities(Y)
    history[0] = kl_divergence(P, Q)
    for it in range(cfg.n_iter):
        exaggerate = it < cfg.exaggeration_iters
        P_eff = P * cfg.early_exaggeration if exaggerate else P
        momentum = cfg.momentum if exaggerate else cfg.final_momentum
        W = (P_eff - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - lr * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
        Q, num = student_affinities(Y)
        history[it + 1] = kl_divergence(P, Q)
    return TsneResult(Y, float(history[-1]), history, sigmas)
