from __future__ import annotations

from dataclasses import asdict, dataclass, fields

VARIANTS = ("FCN", "SFCN")
MODES = ("MIMO", "MISO")


class ConfigError(ValueError):
    """Invalid or mismatched model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of an FCN/SFCN autoencoder.

    ``blocks`` is the number of convolutional blocks in the feature extractor
    and, symmetrically, in the decompression stage.
    """

    variant: str = "FCN"
    mode: str = "MIMO"
    channels: int = 7
    filters: int = 30
    filter_length: int = 55
    bottleneck: int = 1
    sinc_filters: int = 30
    sinc_length: int = 55
    sample_rate: int = 16000
    blocks: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("channels", "filters", "filter_length", "bottleneck", "sinc_filters",
                     "sinc_length", "sample_rate", "blocks"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.filter_length % 2 == 0 or self.sinc_length % 2 == 0:
            raise ConfigError("filter_length and sinc_length must be odd")
        if self.bottleneck > self.channels:
            raise ConfigError(f"bottleneck ({self.bottleneck}) cannot exceed channels ({self.channels})")

    @property
    def out_channels(self) -> int:
        return self.channels if self.mode == "MIMO" else 1

    @property
    def compression_ratio(self) -> float:
        return self.channels / self.bottleneck

    @property
    def conv_context(self) -> int:
        return (self.filter_length - 1) // 2

    @property
    def encoder_context(self) -> int:
        """Receptive-field half-width of the encoder in samples."""
        ctx = (self.blocks + 1) * self.conv_context
        if self.variant == "SFCN":
            ctx += (self.sinc_length - 1) // 2
        return ctx

    @property
    def decoder_context(self) -> int:
        return (self.blocks + 1) * self.conv_context

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def check_compatible(self, **expected) -> None:
        """Raise :class:`ConfigError` if any given field differs from ``expected``."""
        for key, want in expected.items():
            have = getattr(self, key)
            if have != want:
                raise ConfigError(f"model config mismatch: {key} is {have!r}, pipeline expects {want!r}")
