from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Waveform:
    """Mono sample stream."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def as_multichannel(self) -> "MultichannelSignal":
        return MultichannelSignal(self.samples[None, :], self.sample_rate)


@dataclass
class MultichannelSignal:
    """``N`` synchronized channels stored as a ``[N, T]`` float32 array."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"expected [channels, samples] array, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("signal contains non-finite samples")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    def channel(self, i: int) -> Waveform:
        return Waveform(self.samples[i], self.sample_rate)

    def as_tensor(self) -> np.ndarray:
        """``[1, N, T]`` view for model input."""
        return self.samples[None, :, :]
