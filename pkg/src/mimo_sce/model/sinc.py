"""Learnable band-pass Sinc convolution.

Each filter is parameterized by a low cutoff ``f1`` and a band width ``df``,
both in cycles per sample. At materialization time the band is
``[f1, f1 + |df|]`` with ``f1`` clamped to ``[0, 0.5]`` and the upper edge
clamped to ``0.5``; the kernel is

    g[n] = (2 f2 sinc(2 pi f2 n) - 2 f1 sinc(2 pi f1 n)) * hamming[n]

for ``n`` centred on zero, with ``sinc(x) = sin(x) / x``.
"""

from __future__ import annotations

import numpy as np

from ..core import functional as F
from ..core.layers import Layer
from ..core.tensor import Parameter, ShapeError, as_tensor

NYQUIST = 0.5
MIN_HZ = 30.0


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_initial_bands(num_filters: int, sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Bands equally spaced on the mel scale over [30 Hz, fs / 2], normalized to fs."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(MIN_HZ), _hz_to_mel(sample_rate / 2), num_filters + 1))
    edges = edges / sample_rate
    return edges[:-1], np.diff(edges)


def _taps(kernel_size: int) -> np.ndarray:
    return np.arange(kernel_size) - (kernel_size - 1) // 2


def _band_edges(low: np.ndarray, band: np.ndarray):
    f1 = np.clip(low, 0.0, NYQUIST)
    raw_f2 = f1 + np.abs(band)
    f2 = np.minimum(raw_f2, NYQUIST)
    return f1, f2, raw_f2


def sinc_kernels(low: np.ndarray, band: np.ndarray, kernel_size: int) -> np.ndarray:
    """Materialize ``[F, 1, K]`` windowed band-pass kernels."""
    if kernel_size % 2 == 0:
        raise ShapeError(f"sinc kernel length must be odd, got {kernel_size}")
    n = _taps(kernel_size)
    window = np.hamming(kernel_size)
    f1, f2, _ = _band_edges(low, band)
    # np.sinc(u) = sin(pi u) / (pi u), so 2 f sinc(2 pi f n) == 2 f np.sinc(2 f n)
    g = 2 * f2[:, None] * np.sinc(2 * f2[:, None] * n) - 2 * f1[:, None] * np.sinc(2 * f1[:, None] * n)
    return (g * window).astype(np.result_type(low, band))[:, None, :]


def sinc_kernels_backward(dk: np.ndarray, low: np.ndarray, band: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the kernels with respect to ``low`` and ``band``."""
    kernel_size = dk.shape[-1]
    n = _taps(kernel_size)
    window = np.hamming(kernel_size)
    dk = dk.reshape(dk.shape[0], kernel_size) * window
    f1, f2, raw_f2 = _band_edges(low, band)
    # d/df [2 f sinc(2 pi f n)] = 2 cos(2 pi f n), including n = 0
    d_f2 = np.sum(dk * 2 * np.cos(2 * np.pi * f2[:, None] * n), axis=1)
    d_f1 = -np.sum(dk * 2 * np.cos(2 * np.pi * f1[:, None] * n), axis=1)
    # left derivative at the Nyquist edge so the top band can still move
    f2_free = raw_f2 <= NYQUIST
    f1_free = (low > 0.0) & (low < NYQUIST)
    d_f2 = np.where(f2_free, d_f2, 0.0)
    d_low = np.where(f1_free, d_f1 + d_f2, 0.0)
    d_band = d_f2 * np.sign(band)
    return d_low, d_band


class SincConv(Layer):
    """Shared Sinc filter bank applied to every input channel.

    ``[B, N, T] -> [B, N * F, T]``; output channel ``n * F + f`` is input
    channel ``n`` filtered by band ``f``.
    """

    def __init__(self, name: str, num_filters: int, kernel_size: int, sample_rate: int, dtype=np.float32):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ShapeError(f"sinc kernel length must be odd, got {kernel_size}")
        self.num_filters = num_filters
        self.kernel_size = kernel_size
        low, band = mel_initial_bands(num_filters, sample_rate)
        self.low = Parameter(f"{name}.low", low.astype(dtype))
        self.band = Parameter(f"{name}.band", band.astype(dtype))
        self.needs_input_grad = True

    def parameters(self):
        return [self.low, self.band]

    def kernels(self) -> np.ndarray:
        return sinc_kernels(self.low.value, self.band.value, self.kernel_size)

    def forward(self, x):
        x = as_tensor(x)
        n_batch, channels, length = x.shape
        k = self.kernels()
        y = F.conv1d(x.reshape(n_batch * channels, 1, length), k)
        self._cache = (x, k)
        return y.reshape(n_batch, channels * self.num_filters, length)

    def backward(self, dy):
        x, k = self._pop_cache()
        n_batch, channels, length = x.shape
        dy = dy.reshape(n_batch * channels, self.num_filters, length)
        dx, dk, _ = F.conv1d_backward(dy, x.reshape(n_batch * channels, 1, length), k,
                                      need_dx=self.needs_input_grad)
        d_low, d_band = sinc_kernels_backward(dk, self.low.value, self.band.value)
        self.low.grad += d_low.astype(self.low.grad.dtype)
        self.band.grad += d_band.astype(self.band.grad.dtype)
        if dx is None:
            return np.zeros_like(x)
        return dx.reshape(n_batch, channels, length)
