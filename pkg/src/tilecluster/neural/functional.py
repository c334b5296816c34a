"""Activations and losses with their analytic gradients.

Every loss returns ``(value, grad)`` where ``grad`` is the derivative of the
value with respect to the prediction argument.
"""

import numpy as np
from scipy.special import expit

from tilecluster.errors import InvalidAlpha, ShapeMismatch
from tilecluster.metrics import SsimParams, box_mean, ssim_map

PROB_FLOOR = 1e-12


def leaky_relu(x, a):
    """x where x >= 0, x / a elsewhere (``a`` > 1)."""
    if a <= 1:
        raise InvalidAlpha(f"leaky ReLU divisor must exceed 1, got {a}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, x / a)


def leaky_relu_grad(x, a):
    if a <= 1:
        raise InvalidAlpha(f"leaky ReLU divisor must exceed 1, got {a}")
    return np.where(np.asarray(x) >= 0, 1.0, 1.0 / a)


def sigmoid(x):
    return expit(x)


def softmax(y, axis=-1):
    y = np.asarray(y, dtype=np.float64)
    z = np.exp(y - y.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_backward(p, grad, axis=-1):
    """Vector-Jacobian product of softmax given its output ``p``."""
    return p * (grad - np.sum(grad * p, axis=axis, keepdims=True))


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")


def categorical_cross_entropy(target, predicted):
    """Batch mean of -sum_i t_i ln p_i, with p clamped to [1e-12, 1]."""
    target = np.asarray(target, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    _same_shape(target, predicted)
    if target.ndim == 1:
        target, predicted = target[None], predicted[None]
    n = target.shape[0]
    clamped = np.clip(predicted, PROB_FLOOR, 1.0)
    value = float(-np.sum(target * np.log(clamped)) / n)
    inside = (predicted >= PROB_FLOOR) & (predicted <= 1.0)
    grad = np.where(inside, -target / clamped, 0.0) / n
    return value, grad


def mse_loss(target, predicted):
    target = np.asarray(target, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    _same_shape(target, predicted)
    d = predicted - target
    return float(np.mean(d * d)), 2.0 * d / d.size


def _box_adjoint(g, size):
    """Adjoint of :func:`box_mean` ("valid" windows) applied to ``g``."""
    pad = size - 1
    return box_mean(np.pad(g, [(0, 0)] * (g.ndim - 2) + [(pad, pad), (pad, pad)]), size)


def ssim_loss(target, predicted, params=SsimParams(window="sliding")):
    """1 - mean SSIM over sliding windows, for NCHW (or any ..HW) tensors."""
    x = np.asarray(target, dtype=np.float64)
    y = np.asarray(predicted, dtype=np.float64)
    _same_shape(x, y)
    w = params.window_size
    if params.window != "sliding":
        raise ValueError("ssim_loss uses sliding windows")
    s = ssim_map(x, y, params)
    value = 1.0 - float(np.mean(s))

    mx, my = box_mean(x, w), box_mean(y, w)
    vx = box_mean(x * x, w) - mx * mx
    vy = box_mean(y * y, w) - my * my
    cxy = box_mean(x * y, w) - mx * my
    a = 2 * mx * my + params.c1
    b = 2 * cxy + params.c2
    c = mx * mx + my * my + params.c1
    d = vx + vy + params.c2
    beta = 2 * s / b
    gamma = -2 * s / d
    alpha = s * (2 * mx / a - 2 * my / c) - beta * mx - gamma * my
    ds_dy = _box_adjoint(alpha, w) + x * _box_adjoint(beta, w) + y * _box_adjoint(gamma, w)
    grad = -ds_dy / s.size
    return value, grad


RECONSTRUCTION_LOSSES = {"mse": mse_loss, "ssim": ssim_loss}
