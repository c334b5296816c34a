"""PCA by singular value decomposition, with variance-threshold selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tilecluster.errors import DimensionError

__all__ = [
    "PcaModel",
    "as_feature_matrix",
    "fit_pca",
    "transform",
    "inverse_transform",
    "select_components_for_variance",
    "components_for_ratios",
    "reconstruction_error",
]

# slack for floating-point round-off in cumulative variance sums
_CUMSUM_SLACK = 1e-12


def as_feature_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D feature matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature matrix contains non-finite values")
    return x


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    n_samples: int = 0

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_dims(self) -> int:
        return self.components.shape[1]

    def transform(self, x):
        return transform(self, x)

    def inverse_transform(self, z):
        return inverse_transform(self, z)


def _svd_centered(x):
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    # make the largest-magnitude entry of each component positive
    idx = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    vt *= signs[:, None]
    return mean, s, vt


def fit_pca(x, d: int) -> PcaModel:
    x = as_feature_matrix(x)
    n, m = x.shape
    if n < 2:
        raise DimensionError("PCA needs at least 2 samples")
    if not 1 <= d <= min(n, m):
        raise DimensionError(f"d={d} outside [1, {min(n, m)}]")
    mean, s, vt = _svd_centered(x)
    var = s ** 2 / (n - 1)
    total = var.sum()
    ratio = var / total if total > 0 else np.zeros_like(var)
    return PcaModel(mean, vt[:d].copy(), var[:d].copy(), ratio[:d].copy(), n)


def transform(m: PcaModel, x) -> np.ndarray:
    x = as_feature_matrix(x)
    if x.shape[1] != m.n_dims:
        raise DimensionError(f"model expects {m.n_dims} dims, got {x.shape[1]}")
    return (x - m.mean) @ m.components.T


def inverse_transform(m: PcaModel, z) -> np.ndarray:
    z = as_feature_matrix(z)
    if z.shape[1] != m.n_components:
        raise DimensionError(f"model has {m.n_components} components, got {z.shape[1]}")
    return z @ m.components + m.mean


def reconstruction_error(m: PcaModel, x) -> float:
    """Sum over samples of the squared reconstruction residual."""
    x = as_feature_matrix(x)
    r = x - inverse_transform(m, transform(m, x))
    return float(np.sum(r * r))


def components_for_ratios(ratios, threshold: float) -> int:
    """Smallest d whose leading ``ratios`` sum to at least ``threshold``."""
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    ratios = np.asarray(ratios, dtype=np.float64)
    cum = np.cumsum(ratios)
    hits = np.nonzero(cum >= threshold - _CUMSUM_SLACK)[0]
    return int(hits[0]) + 1 if hits.size else len(ratios)


def select_components_for_variance(x, threshold: float) -> int:
    x = as_feature_matrix(x)
    n, m = x.shape
    if n < 2:
        raise DimensionError("PCA needs at least 2 samples")
    model = fit_pca(x, min(n, m))
    if model.explained_variance.sum() == 0:
        return 1
    return components_for_ratios(model.explained_variance_ratio, threshold)
