from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import MultichannelSignal, Waveform


class MixError(ValueError):
    """Mixing is undefined for the given signals."""


@dataclass(frozen=True)
class MixSpec:
    """How to contaminate one clean multichannel utterance.

    ``offset_policy`` is ``"random"`` (independent seeded start offset into
    the looped noise for every channel) or ``"zero"`` (all channels start at
    the beginning of the noise).
    """

    noise_id: str
    snr_db: float
    seed: int = 0
    offset_policy: str = "random"

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise MixError(f"SNR must be finite, got {self.snr_db}")
        if self.offset_policy not in ("random", "zero"):
            raise MixError(f"unknown offset policy {self.offset_policy!r}")


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


def noise_segment(noise: np.ndarray, offset: int, length: int) -> np.ndarray:
    """``length`` samples of ``noise`` starting at ``offset``, looping as needed."""
    return np.take(noise, (offset + np.arange(length)) % noise.size)


def noise_scale(clean: np.ndarray, segment: np.ndarray, snr_db: float) -> float:
    """Gain applied to ``segment`` so that clean / noise power equals ``snr_db``."""
    c, n = rms(clean), rms(segment)
    if c == 0.0:
        raise MixError("clean channel is silent; SNR is undefined")
    if n == 0.0:
        raise MixError("noise segment is all zeros")
    return c / n * 10.0 ** (-snr_db / 20.0)


def channel_offsets(spec: MixSpec, channels: int, noise_len: int) -> np.ndarray:
    if spec.offset_policy == "zero":
        return np.zeros(channels, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    return rng.integers(0, noise_len, size=channels)


def mix_at_snr(clean: MultichannelSignal, noise: Waveform, spec: MixSpec) -> MultichannelSignal:
    """Add scaled noise to every channel of ``clean`` at the target SNR."""
    if noise.sample_rate != clean.sample_rate:
        raise MixError(f"sample rates differ: clean {clean.sample_rate}, noise {noise.sample_rate}")
    n = np.asarray(noise.samples, dtype=np.float64)
    if not np.any(n):
        raise MixError("noise is all zeros")
    length = len(clean)
    out = np.empty(clean.samples.shape, dtype=np.float64)
    for ch, offset in enumerate(channel_offsets(spec, clean.channels, n.size)):
        x = clean.samples[ch].astype(np.float64)
        seg = noise_segment(n, int(offset), length)
        out[ch] = x + noise_scale(x, seg, spec.snr_db) * seg
    return MultichannelSignal(out.astype(np.float32), clean.sample_rate)


def measured_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    """``10 log10(sum clean^2 / sum (noisy - clean)^2)`` in dB."""
    c = np.asarray(clean, dtype=np.float64)
    d = np.asarray(noisy, dtype=np.float64) - c
    return float(10.0 * np.log10(np.sum(c * c) / np.sum(d * d)))
