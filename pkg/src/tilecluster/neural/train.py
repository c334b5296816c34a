"""Mini-batch training with Adam, early stopping and rotation augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from tilecluster.errors import MissingLabels, NonFiniteLoss, ShapeMismatch
from tilecluster.metrics import f1_score
from tilecluster.neural.functional import (
    RECONSTRUCTION_LOSSES,
    categorical_cross_entropy,
    mse_loss,
)
from tilecluster.neural.optim import AdamHyper, AdamState, adam_step
from tilecluster.raster import Raster, rotate_array

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "mse"
    head_weight: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    early_stopping_patience: int = 10
    min_delta: float = 1e-5
    augment_rotations: bool = False
    validation_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.loss not in RECONSTRUCTION_LOSSES:
            raise ValueError(f"loss must be one of {sorted(RECONSTRUCTION_LOSSES)}")
        if self.head_weight < 0:
            raise ValueError("head_weight must be >= 0")
        if self.early_stopping_patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")

    @property
    def adam(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.eps)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    head_f1: float | None = None


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    stop_reason: str = "max_epochs"
    samples_per_epoch: int = 0

    @property
    def losses(self):
        return [r.train_loss for r in self.history]

    def write_log(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch\ttrain_loss\tval_loss\thead_f1\n")
            for r in self.history:
                fh.write(f"{r.epoch}\t{r.train_loss!r}\t"
                         f"{'-' if r.val_loss is None else repr(r.val_loss)}\t"
                         f"{'-' if r.head_f1 is None else repr(r.head_f1)}\n")


def tiles_to_tensor(tiles) -> np.ndarray:
    """Rasters (or an (N, H, W, C) uint8 array) -> (N, C, H, W) floats in [0, 1]."""
    if isinstance(tiles, np.ndarray):
        arr = tiles
    else:
        tiles = list(tiles)
        if not tiles:
            return np.zeros((0, 3, 1, 1))
        shapes = {t.data.shape for t in tiles}
        if len(shapes) != 1:
            raise ShapeMismatch(f"tiles have mixed shapes {sorted(shapes)}")
        arr = np.stack([t.data if isinstance(t, Raster) else t for t in tiles])
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=np.float64) / 255.0


def augment_with_rotations(data, labels=None):
    """Append the three quarter-turn rotations of every image (4x the data)."""
    if data.shape[2] != data.shape[3]:
        raise ShapeMismatch("rotation augmentation needs square tiles")
    rotated = [data] + [np.ascontiguousarray(rotate_array(data, k, axes=(2, 3)))
                        for k in (1, 2, 3)]
    out = np.concatenate(rotated)
    if labels is not None:
        labels = np.tile(labels, 4)
    return out, labels


def _head_targets(model, labels):
    head = model.head_spec
    if head.loss == "categorical_cross_entropy":
        return np.eye(head.n_classes)[labels]
    return labels.astype(np.float64)[:, None]


def _head_loss(model, target, out):
    if model.head_spec.loss == "categorical_cross_entropy":
        return categorical_cross_entropy(target, out)
    return mse_loss(target, out)


def head_predictions(model, head_out) -> np.ndarray:
    if model.head_spec.loss == "categorical_cross_entropy":
        return np.argmax(head_out, axis=1)
    return (head_out[:, 0] >= 0.5).astype(np.int64)


def _evaluate(model, data, labels, cfg, batch_size):
    recon_loss = RECONSTRUCTION_LOSSES[cfg.loss]
    total, preds = 0.0, []
    for start in range(0, len(data), batch_size):
        xb = data[start:start + batch_size]
        recon, _, head_out = model.forward(xb)
        value, _ = recon_loss(xb, recon)
        if model.head:
            hv, _ = _head_loss(model, _head_targets(model, labels[start:start + batch_size]),
                               head_out)
            value += cfg.head_weight * hv
            preds.append(head_predictions(model, head_out))
        total += value * len(xb)
    f1 = None
    if model.head:
        f1 = f1_score(labels, np.concatenate(preds), model.head_spec.n_classes).macro
    return total / len(data), f1


def train(model, data, labels=None, cfg: TrainConfig = TrainConfig(), validation=None) -> TrainResult:
    """Fit ``model`` in place.

    ``data`` is an (N, C, H, W) tensor in [0, 1] or a sequence of rasters.
    The monitored loss for early stopping is the validation loss when a
    validation set is supplied (or split off via ``validation_fraction``),
    otherwise the epoch's mean training loss.
    """
    if not isinstance(data, np.ndarray) or data.dtype != np.float64 or data.ndim != 4:
        data = tiles_to_tensor(data)
    if data.shape[1:] != model.input_shape:
        raise ShapeMismatch(f"data shape {data.shape[1:]} != model input {model.input_shape}")
    if model.head:
        if labels is None:
            raise MissingLabels("a model with a classification head needs labels")
        labels = np.asarray(labels, dtype=np.int64)
        if len(labels) != len(data):
            raise ShapeMismatch(f"{len(labels)} labels for {len(data)} tiles")
    elif labels is not None:
        labels = np.asarray(labels, dtype=np.int64)

    rng = np.random.default_rng(cfg.seed)
    if validation is None and cfg.validation_fraction > 0:
        perm = rng.permutation(len(data))
        n_val = max(1, int(round(cfg.validation_fraction * len(data))))
        val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        validation = (data[val_idx], None if labels is None else labels[val_idx])
        data = data[tr_idx]
        labels = None if labels is None else labels[tr_idx]
    if validation is not None:
        vx, vy = validation
        if not isinstance(vx, np.ndarray) or vx.dtype != np.float64 or vx.ndim != 4:
            vx = tiles_to_tensor(vx)
        validation = (vx, None if vy is None else np.asarray(vy, dtype=np.int64))

    if cfg.augment_rotations:
        data, labels = augment_with_rotations(data, labels)

    recon_loss = RECONSTRUCTION_LOSSES[cfg.loss]
    names = list(model.named_parameters())
    params = {name: layer.params[key] for name, layer, key in names}
    state = AdamState.zeros_like(params)
    hyper = cfg.adam
    result = TrainResult(model, samples_per_epoch=len(data))
    best, wait, step = np.inf, 0, 0
    n = len(data)

    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        preds, seen = [], []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            xb = data[idx]
            recon, _, head_out = model.forward(xb)
            value, grad_recon = recon_loss(xb, recon)
            grad_head = None
            if model.head:
                hv, gh = _head_loss(model, _head_targets(model, labels[idx]), head_out)
                value += cfg.head_weight * hv
                grad_head = cfg.head_weight * gh
                preds.append(head_predictions(model, head_out))
                seen.append(labels[idx])
            if not np.isfinite(value):
                raise NonFiniteLoss(epoch, b, value)
            model.backward(grad_recon, grad_head)
            grads = {name: layer.grads[key] for name, layer, key in names}
            step += 1
            params, state = adam_step(params, grads, state, step, hyper)
            for name, layer, key in names:
                layer.params[key] = params[name]
            total += value * len(idx)

        train_loss = total / n
        val_loss, head_f1 = None, None
        if validation is not None:
            val_loss, head_f1 = _evaluate(model, validation[0], validation[1], cfg, cfg.batch_size)
        elif model.head:
            head_f1 = f1_score(np.concatenate(seen), np.concatenate(preds),
                               model.head_spec.n_classes).macro
        result.history.append(EpochRecord(epoch, train_loss, val_loss, head_f1))
        log.info("epoch %d loss %.6g val %s f1 %s", epoch, train_loss, val_loss, head_f1)

        monitored = val_loss if val_loss is not None else train_loss
        if monitored < best - cfg.min_delta:
            best, wait = monitored, 0
        else:
            wait += 1
            if wait >= cfg.early_stopping_patience:
                result.stop_reason = "early_stopping"
                break
    return result


def encode(model, tiles, batch_size: int = 64) -> np.ndarray:
    """Bottleneck activations, one row per tile."""
    data = tiles if isinstance(tiles, np.ndarray) and tiles.dtype == np.float64 \
        and tiles.ndim == 4 else tiles_to_tensor(tiles)
    if data.shape[1:] != model.input_shape:
        raise ShapeMismatch(f"tile shape {data.shape[1:]} != model input {model.input_shape}")
    out = [model.encode_batch(data[s:s + batch_size]).reshape(len(data[s:s + batch_size]), -1)
           for s in range(0, len(data), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.bottleneck_size))


def predict_head(model, tiles, batch_size: int = 64) -> np.ndarray:
    """Class predictions of the classification head."""
    if not model.head:
        raise ValueError("model has no classification head")
    data = tiles if isinstance(tiles, np.ndarray) and tiles.dtype == np.float64 \
        and tiles.ndim == 4 else tiles_to_tensor(tiles)
    preds = []
    for s in range(0, len(data), batch_size):
        _, _, head_out = model.forward(data[s:s + batch_size])
        preds.append(head_predictions(model, head_out))
    return np.concatenate(preds)
