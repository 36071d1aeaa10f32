"""FCN/SFCN autoencoder construction, Sinc filter banks and checkpoints."""

from .checkpoint import CheckpointError, file_crc, load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig
from .network import Model, build_model, expected_parameter_count
from .sinc import SincConv, sinc_kernels

__all__ = [
    "CheckpointError",
    "ConfigError",
    "Model",
    "ModelConfig",
    "SincConv",
    "build_model",
    "expected_parameter_count",
    "file_crc",
    "load_checkpoint",
    "save_checkpoint",
    "sinc_kernels",
]
