"""Stripe-noise removal for infrared images with an asymmetric residual
wavelet column-correction network, built on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .errors import (CheckpointError, ConfigError, ContractError, DimensionError, StripeCleanError,
                     TrainingAborted)
from .tensor import Tensor, no_grad
from .wavelet import hdwt, ihdwt
from .model import ARCNet, ModelConfig, PRESETS, build, load_model, save_model
from .degrade import StripeNoiseSpec, synth_stripe
from .evaluation import psnr, roughness, ssim
from .baselines import GuidedFilterParams, gf_destripe, mhe_destripe

__all__ = [
    "__version__", "Tensor", "no_grad", "hdwt", "ihdwt", "ARCNet", "ModelConfig", "PRESETS", "build",
    "load_model", "save_model", "StripeNoiseSpec", "synth_stripe", "psnr", "ssim", "roughness",
    "GuidedFilterParams", "gf_destripe", "mhe_destripe", "StripeCleanError", "DimensionError",
    "ConfigError", "ContractError", "CheckpointError", "TrainingAborted",
]
