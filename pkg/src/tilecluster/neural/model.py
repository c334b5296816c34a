"""Convolutional autoencoder with an optional classification head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tilecluster.errors import ShapeMismatch
from tilecluster.neural.layers import LayerSpec, build_layers

HEAD_LOSSES = ("categorical_cross_entropy", "mse_regression")


@dataclass(frozen=True)
class HeadSpec:
    """Classifier branch fed by the flattened bottleneck.

    ``categorical_cross_entropy`` uses dense(n_classes) + softmax;
    ``mse_regression`` uses dense(1) + sigmoid on a 0/1 target.
    """

    n_classes: int
    loss: str = "categorical_cross_entropy"

    def __post_init__(self):
        if self.loss not in HEAD_LOSSES:
            raise ValueError(f"head loss must be one of {HEAD_LOSSES}")
        if self.n_classes < 2:
            raise ValueError("a head needs at least 2 classes")
        if self.loss == "mse_regression" and self.n_classes != 2:
            raise ValueError("mse_regression heads are binary")

    def layer_specs(self):
        if self.loss == "categorical_cross_entropy":
            return [LayerSpec("dense", units=self.n_classes), LayerSpec("softmax")]
        return [LayerSpec("dense", units=1), LayerSpec("sigmoid")]


class AutoencoderModel:
    def __init__(self, input_shape, encoder_specs, decoder_specs, head=None,
                 seed=0, name="custom"):
        self.input_shape = tuple(input_shape)
        self.encoder_specs = list(encoder_specs)
        self.decoder_specs = list(decoder_specs)
        self.head_spec = head
        self.seed = seed
        self.name = name
        rng = np.random.default_rng(seed)
        self.encoder, self.code_shape = build_layers(self.encoder_specs, self.input_shape, rng)
        self.decoder, out_shape = build_layers(self.decoder_specs, self.code_shape, rng)
        if out_shape != self.input_shape:
            raise ShapeMismatch(f"decoder output {out_shape} != input {self.input_shape}")
        self.head = []
        if head is not None:
            self.head, head_shape = build_layers(
                [LayerSpec("flatten")] + head.layer_specs(), self.code_shape, rng)
            expected = (head.n_classes if head.loss == "categorical_cross_entropy" else 1,)
            if head_shape != expected:
                raise ShapeMismatch(f"head output {head_shape} != {expected}")

    @property
    def bottleneck_size(self) -> int:
        return int(np.prod(self.code_shape))

    @property
    def layers(self):
        return self.encoder + self.decoder + self.head

    @property
    def parameter_count(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def named_parameters(self):
        """Yield ``(name, layer, key)`` for every parameter tensor, in a fixed order."""
        for group, layers in (("encoder", self.encoder), ("decoder", self.decoder),
                              ("head", self.head)):
            for i, layer in enumerate(layers):
                for key in sorted(layer.params):
                    yield f"{group}.{i}.{key}", layer, key

    def _check_batch(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 4 or batch.shape[1:] != self.input_shape:
            raise ShapeMismatch(
                f"batch shape {batch.shape} does not match model input (N,) + {self.input_shape}")
        return batch

    def encode_batch(self, batch):
        h = self._check_batch(batch)
        for layer in self.encoder:
            h = layer.forward(h)
        return h

    def forward(self, batch):
        """Return ``(reconstruction, codes, head_output)``; head_output may be None."""
        code = self.encode_batch(batch)
        h = code
        for layer in self.decoder:
            h = layer.forward(h)
        head_out = None
        if self.head:
            head_out = code
            for layer in self.head:
                head_out = layer.forward(head_out)
        return h, code.reshape(code.shape[0], -1), head_out

    def backward(self, grad_recon, grad_head=None):
        g = grad_recon
        for layer in reversed(self.decoder):
            g = layer.backward(g)
        if self.head:
            gh = grad_head if grad_head is not None else np.zeros(
                (g.shape[0],) + self.head[-1].output_shape)
            for layer in reversed(self.head):
                gh = layer.backward(gh)
            g = g + gh
        for layer in reversed(self.encoder):
            g = layer.backward(g)
        return g

    def summary(self) -> str:
        lines = [f"model {self.name}: input {self.input_shape}, "
                 f"bottleneck {self.bottleneck_size}, params {self.parameter_count}"]
        for group, layers in (("encoder", self.encoder), ("decoder", self.decoder),
                              ("head", self.head)):
            for layer in layers:
                lines.append(f"  {group:8s} {layer.spec.describe():20s} -> {layer.output_shape}"
                             f" ({layer.n_params} params)")
        return "\n".join(lines)
