from .model import (
    SynthConfig,
    SynthModel,
    build_model,
    build_discriminator,
    estimate_ltv_filters,
    forward,
    film,
)
from .losses import multiscale_stft_loss, lsgan_losses, DEFAULT_RESOLUTIONS
from .train import Adam, backward_and_step, gradient_check, train_toy, make_toy_batch
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "SynthConfig", "SynthModel", "build_model", "build_discriminator",
    "estimate_ltv_filters", "forward", "film",
    "multiscale_stft_loss", "lsgan_losses", "DEFAULT_RESOLUTIONS",
    "Adam", "backward_and_step", "gradient_check", "train_toy", "make_toy_batch",
    "save_checkpoint", "load_checkpoint",
]
