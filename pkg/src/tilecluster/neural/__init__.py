"""Small deterministic neural engine for convolutional autoencoders."""

from tilecluster.neural.functional import (
    categorical_cross_entropy,
    leaky_relu,
    leaky_relu_grad,
    mse_loss,
    softmax,
    ssim_loss,
)
from tilecluster.neural.layers import LayerSpec, build_layers
from tilecluster.neural.model import AutoencoderModel, HeadSpec
from tilecluster.neural.optim import AdamHyper, AdamState, adam_step
from tilecluster.neural.presets import PRESETS, build_preset, preset_loss
from tilecluster.neural.train import (
    EpochRecord,
    TrainConfig,
    TrainResult,
    augment_with_rotations,
    encode,
    predict_head,
    tiles_to_tensor,
    train,
)

__all__ = [
    "AdamHyper", "AdamState", "AutoencoderModel", "EpochRecord", "HeadSpec",
    "LayerSpec", "PRESETS", "TrainConfig", "TrainResult", "adam_step",
    "augment_with_rotations", "build_layers", "build_preset",
    "categorical_cross_entropy", "encode", "leaky_relu", "leaky_relu_grad",
    "mse_loss", "predict_head", "preset_loss", "softmax", "ssim_loss",
    "tiles_to_tensor", "train",
]
