"""Named autoencoder architectures sized for small (e.g. 32x32) RGB tiles.

Each encoder halves the spatial size twice, so the bottleneck is an
(8, H/4, W/4) feature map; the decoder mirrors it with nearest-neighbour
upsampling and ends in a sigmoid to match inputs scaled to [0, 1].
"""

from tilecluster.neural.layers import LayerSpec
from tilecluster.neural.model import AutoencoderModel, HeadSpec

LEAKY_ALPHA = 5.0
HIDDEN_CHANNELS = 8
CODE_CHANNELS = 8

# name -> (reconstruction loss, head loss or None)
PRESETS = {
    "cae-mse": ("mse", None),
    "cae-ssim": ("ssim", None),
    "scae-mse": ("mse", "mse_regression"),
    "scae-cce-mse": ("mse", "categorical_cross_entropy"),
    "scae-cce-ssim": ("ssim", "categorical_cross_entropy"),
}


def encoder_specs(hidden=None, code=None, alpha=None):
    hidden, code = hidden or HIDDEN_CHANNELS, code or CODE_CHANNELS
    alpha = alpha or LEAKY_ALPHA
    return [
        LayerSpec("conv2d", units=hidden), LayerSpec("leaky_relu", alpha=alpha),
        LayerSpec("maxpool2d"),
        LayerSpec("conv2d", units=code), LayerSpec("leaky_relu", alpha=alpha),
        LayerSpec("maxpool2d"),
    ]


def decoder_specs(out_channels, hidden=None, alpha=None):
    hidden, alpha = hidden or HIDDEN_CHANNELS, alpha or LEAKY_ALPHA
    return [
        LayerSpec("upsample2d"),
        LayerSpec("conv2d", units=hidden), LayerSpec("leaky_relu", alpha=alpha),
        LayerSpec("upsample2d"),
        LayerSpec("conv2d", units=out_channels), LayerSpec("sigmoid"),
    ]


def preset_loss(name: str) -> str:
    return PRESETS[name][0]


def build_preset(name: str, input_shape=(3, 32, 32), n_classes=None, seed=0) -> AutoencoderModel:
    """Build preset ``name``; heads need ``n_classes`` (the mse head is binary)."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    _, head_loss = PRESETS[name]
    head = None
    if head_loss == "mse_regression":
        head = HeadSpec(2, head_loss)
    elif head_loss is not None:
        if n_classes is None:
            raise ValueError(f"preset {name!r} needs n_classes")
        head = HeadSpec(n_classes, head_loss)
    return AutoencoderModel(input_shape, encoder_specs(), decoder_specs(input_shape[0]),
                            head=head, seed=seed, name=name)
