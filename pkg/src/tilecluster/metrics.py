"""Clustering and classification scores plus image similarity (MSE, SSIM)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tilecluster.errors import EmptyInput, LengthMismatch, ShapeMismatch

__all__ = [
    "ContingencyTable",
    "contingency_table",
    "entropy",
    "conditional_entropy",
    "completeness",
    "F1Report",
    "f1_score",
    "mse",
    "SsimParams",
    "ssim",
    "ssim_map",
    "box_mean",
]


def _labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeMismatch(f"labels must be 1-D, got shape {y.shape}")
    return y


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    counts: np.ndarray  # (n_classes, n_clusters)
    classes: np.ndarray
    clusters: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def contingency_table(y_true, y_pred) -> ContingencyTable:
    y_true, y_pred = _labels(y_true), _labels(y_pred)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predicted")
    if len(y_true) == 0:
        raise EmptyInput("no labels")
    classes, ci = np.unique(y_true, return_inverse=True)
    clusters, ki = np.unique(y_pred, return_inverse=True)
    counts = np.zeros((len(classes), len(clusters)), dtype=np.int64)
    np.add.at(counts, (ci, ki), 1)
    return ContingencyTable(counts, classes, clusters)


def _entropy_from_counts(counts, log=np.log) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    counts = counts[counts > 0]
    n = counts.sum()
    p = counts / n
    return float(-np.sum(p * log(p)))


def entropy(labels, base=None) -> float:
    """Shannon entropy of the label frequencies, in nats unless ``base`` is given."""
    labels = _labels(labels)
    if len(labels) == 0:
        raise EmptyInput("entropy of an empty labelling")
    _, counts = np.unique(labels, return_counts=True)
    h = _entropy_from_counts(counts)
    return h / np.log(base) if base else h


def conditional_entropy(table: ContingencyTable) -> float:
    """H(K|C): entropy of clusters within each class, weighted by class size."""
    counts = table.counts.astype(np.float64)
    n = counts.sum()
    class_tot = np.broadcast_to(counts.sum(axis=1, keepdims=True), counts.shape)
    nz = counts > 0
    return float(-np.sum(counts[nz] / n * np.log(counts[nz] / class_tot[nz])))


def completeness(y_true, y_pred) -> float:
    """1 - H(K|C)/H(K): equals 1 when each true class sits in a single cluster."""
    table = contingency_table(y_true, y_pred)
    h_k = _entropy_from_counts(table.counts.sum(axis=0))
    if h_k == 0.0:
        return 1.0
    c = 1.0 - conditional_entropy(table) / h_k
    return float(min(max(c, 0.0), 1.0))


@dataclass(frozen=True, eq=False)
class F1Report:
    macro: float
    per_class: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    undefined: np.ndarray  # True where the class is absent from truth and prediction
    support: np.ndarray


def f1_score(y_true, y_pred, n_classes: int) -> F1Report:
    """One-vs-rest precision/recall/f1 per class and their unweighted mean."""
    y_true, y_pred = _labels(y_true).astype(np.int64), _labels(y_pred).astype(np.int64)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predicted")
    for y in (y_true, y_pred):
        if len(y) and (y.min() < 0 or y.max() >= n_classes):
            raise ValueError(f"labels must lie in [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    pred_tot = confusion.sum(axis=0).astype(np.float64)
    true_tot = confusion.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_tot, out=np.zeros(n_classes), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros(n_classes), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    undefined = (pred_tot == 0) & (true_tot == 0)
    return F1Report(float(f1.mean()), f1, precision, recall, undefined,
                    true_tot.astype(np.int64))


def mse(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    d = x - y
    return float(np.mean(d * d))


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    window: str = "global"  # or "sliding"
    window_size: int = 8

    def __post_init__(self):
        if self.window not in ("global", "sliding"):
            raise ValueError(f"unknown SSIM window {self.window!r}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM stabilisers must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def box_mean(a: np.ndarray, size: int) -> np.ndarray:
    """Mean over every ``size`` x ``size`` window of the last two axes ("valid")."""
    c = np.cumsum(np.cumsum(a, axis=-2), axis=-1)
    c = np.pad(c, [(0, 0)] * (a.ndim - 2) + [(1, 0), (1, 0)])
    s = (c[..., size:, size:] - c[..., :-size, size:]
         - c[..., size:, :-size] + c[..., :-size, :-size])
    return s / (size * size)


def _ssim_terms(mx, my, vx, vy, cxy, p: SsimParams):
    a = 2 * mx * my + p.c1
    b = 2 * cxy + p.c2
    c = mx * mx + my * my + p.c1
    d = vx + vy + p.c2
    return a, b, c, d


def ssim_map(x: np.ndarray, y: np.ndarray, p: SsimParams) -> np.ndarray:
    """Per-window SSIM over the last two (spatial) axes of equally-shaped arrays."""
    if p.window == "global":
        axes = (-2, -1)
        mx, my = x.mean(axis=axes), y.mean(axis=axes)
        dx, dy = x - mx[..., None, None], y - my[..., None, None]
        vx, vy = (dx * dx).mean(axis=axes), (dy * dy).mean(axis=axes)
        cxy = (dx * dy).mean(axis=axes)
    else:
        w = p.window_size
        if x.shape[-1] < w or x.shape[-2] < w:
            raise ShapeMismatch(f"image smaller than the {w}x{w} SSIM window")
        mx, my = box_mean(x, w), box_mean(y, w)
        vx = box_mean(x * x, w) - mx * mx
        vy = box_mean(y * y, w) - my * my
        cxy = box_mean(x * y, w) - mx * my
    a, b, c, d = _ssim_terms(mx, my, vx, vy, cxy, p)
    return (a * b) / (c * d)


def ssim(x, y, p: SsimParams = SsimParams()) -> float:
    """Mean SSIM of two images in [0, L].

    Arrays are ``(h, w)`` or ``(h, w, channels)``; channels are scored
    independently and averaged.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    if x.ndim == 3:
        x, y = np.moveaxis(x, -1, 0), np.moveaxis(y, -1, 0)
    elif x.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D or 3-D image, got shape {x.shape}")
    return float(np.mean(ssim_map(x, y, p)))
