"""Semantic-token-guided depth super-resolution (NAIMA) in PyTorch."""
from .config import LossConfig, ModelConfig, RunConfig, TrainConfig
from .data import (
    NormalizationState,
    SamplePair,
    crop_training_patch,
    generate_synthetic_dataset,
    load_dataset,
    normalize_sample,
    write_dataset,
)
from .evaluate import EvalReport, bicubic_report, evaluate, pad_to_multiple, rmse_cm
from .gta import NaimaModel, build_model, naima_forward, naima_plus_forward, zero_residual_
from .losses import grad_loss, l1_loss, spatial_gradients, total_loss
from .resample import bicubic_downsample, bicubic_upsample
from .tokens import PretrainedProvider, StubProvider, TokenSet
from .train import load_checkpoint, lr_schedule, save_checkpoint, train

__version__ = "0.1.0"
