"""Layers with cached forward state and analytic backward passes.

Tensors are float64, batch-first; image layers use NCHW. A layer's
``output_shape`` and parameters are fixed by :meth:`Layer.build`, which is
what lets a whole stack shape-check before any data flows through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tilecluster import kernels
from tilecluster.errors import InvalidAlpha, ShapeMismatch
from tilecluster.neural.functional import leaky_relu, sigmoid, softmax, softmax_backward

LAYER_KINDS = ("conv2d", "maxpool2d", "upsample2d", "dense", "leaky_relu",
               "sigmoid", "softmax", "flatten", "reshape")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int | None = None      # conv2d out_channels / dense out_units
    alpha: float | None = None    # leaky_relu divisor
    shape: tuple | None = None    # reshape target (per sample)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv2d", "dense") and (self.units is None or self.units < 1):
            raise ValueError(f"{self.kind} needs a positive unit count")
        if self.kind == "leaky_relu" and (self.alpha is None or self.alpha <= 1):
            raise InvalidAlpha(f"leaky_relu needs alpha > 1, got {self.alpha}")
        if self.kind == "reshape" and not self.shape:
            raise ValueError("reshape needs a target shape")

    def describe(self) -> str:
        if self.kind in ("conv2d", "dense"):
            return f"{self.kind} {self.units}"
        if self.kind == "leaky_relu":
            return f"{self.kind} {self.alpha!r}"
        if self.kind == "reshape":
            return f"{self.kind} {' '.join(str(s) for s in self.shape)}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "LayerSpec":
        kind, *rest = text.split()
        if kind in ("conv2d", "dense"):
            return cls(kind, units=int(rest[0]))
        if kind == "leaky_relu":
            return cls(kind, alpha=float(rest[0]))
        if kind == "reshape":
            return cls(kind, shape=tuple(int(r) for r in rest))
        return cls(kind)


class Layer:
    params: dict
    grads: dict

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params = {}
        self.grads = {}
        self.input_shape = None
        self.output_shape = None

    def build(self, input_shape, rng) -> tuple:
        self.input_shape = tuple(input_shape)
        self.output_shape = self._infer(self.input_shape)
        self._init_params(rng)
        return self.output_shape

    def _infer(self, shape):
        return shape

    def _init_params(self, rng):
        pass

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


def _need_image(shape, kind):
    if len(shape) != 3:
        raise ShapeMismatch(f"{kind} needs a (C, H, W) input, got {shape}")


class Conv2D(Layer):
    def _infer(self, shape):
        _need_image(shape, "conv2d")
        return (self.spec.units,) + shape[1:]

    def _init_params(self, rng):
        c = self.input_shape[0]
        std = np.sqrt(2.0 / (9 * c))
        self.params = {"w": rng.normal(0.0, std, size=(self.spec.units, c, 3, 3)),
                       "b": np.zeros(self.spec.units)}

    def forward(self, x):
        self._x = x
        return kernels.conv2d_forward(x, self.params["w"], self.params["b"])

    def backward(self, grad):
        gx, gw, gb = kernels.conv2d_backward(self._x, self.params["w"], grad)
        self.grads = {"w": gw, "b": gb}
        return gx


class MaxPool2D(Layer):
    def _infer(self, shape):
        _need_image(shape, "maxpool2d")
        c, h, w = shape
        if h % 2 or w % 2:
            raise ShapeMismatch(f"maxpool2d needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x):
        out, self._idx = kernels.maxpool2d_forward(x)
        self._shape = x.shape
        return out

    def backward(self, grad):
        return kernels.maxpool2d_backward(grad, self._idx, self._shape)


class Upsample2D(Layer):
    def _infer(self, shape):
        _need_image(shape, "upsample2d")
        c, h, w = shape
        return (c, 2 * h, 2 * w)

    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad):
        n, c, h, w = grad.shape
        return grad.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Dense(Layer):
    def _infer(self, shape):
        if len(shape) != 1:
            raise ShapeMismatch(f"dense needs a flat input, got {shape}")
        return (self.spec.units,)

    def _init_params(self, rng):
        d = self.input_shape[0]
        self.params = {"w": rng.normal(0.0, np.sqrt(2.0 / d), size=(d, self.spec.units)),
                       "b": np.zeros(self.spec.units)}

    def forward(self, x):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, grad):
        self.grads = {"w": self._x.T @ grad, "b": grad.sum(axis=0)}
        return grad @ self.params["w"].T


class LeakyReLU(Layer):
    def forward(self, x):
        self._neg = x < 0
        return leaky_relu(x, self.spec.alpha)

    def backward(self, grad):
        return np.where(self._neg, grad / self.spec.alpha, grad)


class Sigmoid(Layer):
    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)


class Softmax(Layer):
    def _infer(self, shape):
        if len(shape) != 1:
            raise ShapeMismatch(f"softmax needs a flat input, got {shape}")
        return shape

    def forward(self, x):
        self._p = softmax(x, axis=1)
        return self._p

    def backward(self, grad):
        return softmax_backward(self._p, grad, axis=1)


class Flatten(Layer):
    def _infer(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Reshape(Layer):
    def _infer(self, shape):
        target = tuple(self.spec.shape)
        if int(np.prod(target)) != int(np.prod(shape)):
            raise ShapeMismatch(f"cannot reshape {shape} to {target}")
        return target

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.output_shape)

    def backward(self, grad):
        return grad.reshape((grad.shape[0],) + self.input_shape)


_LAYER_CLASSES = {
    "conv2d": Conv2D, "maxpool2d": MaxPool2D, "upsample2d": Upsample2D,
    "dense": Dense, "leaky_relu": LeakyReLU, "sigmoid": Sigmoid,
    "softmax": Softmax, "flatten": Flatten, "reshape": Reshape,
}


def build_layers(specs, input_shape, rng):
    """Instantiate ``specs`` in order; returns (layers, output_shape)."""
    layers = []
    shape = tuple(input_shape)
    for spec in specs:
        layer = _LAYER_CLASSES[spec.kind](spec)
        shape = layer.build(shape, rng)
        layers.append(layer)
    return layers, shape
