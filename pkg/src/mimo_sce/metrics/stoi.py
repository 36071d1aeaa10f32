"""Short-time objective intelligibility.

Standard STOI procedure with the published constants:

1. resample both signals to 10 kHz;
2. drop frames (256 samples, 50 % overlap, Hann) whose clean energy is more
   than 40 dB below the loudest clean frame, and overlap-add the rest;
3. 512-point STFT with the same framing;
4. group bins into 15 one-third-octave bands starting at 150 Hz and take the
   band envelopes;
5. over every 30-frame (384 ms) window, scale the processed envelope to the
   clean energy, clip it at -15 dB signal-to-distortion, and correlate with
   the clean envelope;
6. average the correlations over bands and windows.

Resampling uses a polyphase rational resampler whose anti-aliasing filter
follows the design of the reference MATLAB/Octave ``resample``: an ideal
sinc low-pass with cutoff at the lower of the two Nyquist rates, a roll-off
band one tenth of the cutoff, 60 dB stopband rejection, and a Kaiser window
(beta from the rejection, tap count ``2 * ceil(52 / (28.714 * roll_off)) + 1``).
For 16 kHz -> 10 kHz (up 5 / down 8) that is 581 taps, normalized to unit
DC gain (``resample_poly`` restores the factor ``up``).

Frames start every 128 samples and, as in the reference implementation, the
last frame start is strictly below ``len(x) - 256``.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.signal import kaiser_beta, resample_poly
from scipy.signal.windows import kaiser

from .snr import MetricError, _pair

FS = 10000
FRAME = 256
NFFT = 512
BANDS = 15
MIN_FREQ = 150.0
SEGMENT = 30
BETA_DB = -15.0
DYN_RANGE_DB = 40.0
_EPS = np.finfo(np.float64).eps


def resampler_taps(up: int, down: int, rejection_db: float = 60.0) -> np.ndarray:
    """Kaiser-windowed sinc anti-aliasing filter (unit DC gain) for ``up/down`` resampling."""
    cutoff = 1.0 / (2 * max(up, down))  # cycles per sample at the upsampled rate
    roll_off = cutoff / 10
    half = int(np.ceil((rejection_db - 8) / (28.714 * roll_off)))
    t = np.arange(-half, half + 1)
    h = np.sinc(2 * cutoff * t) * kaiser(2 * half + 1, kaiser_beta(rejection_db))
    return h / h.sum()


def resample(x: np.ndarray, fs_in: int, fs_out: int = FS) -> np.ndarray:
    if fs_in == fs_out:
        return np.asarray(x, dtype=np.float64)
    ratio = Fraction(fs_out, fs_in)
    up, down = ratio.numerator, ratio.denominator
    return resample_poly(x, up, down, window=resampler_taps(up, down))


def _window() -> np.ndarray:
    return np.hanning(FRAME + 2)[1:-1]


def _frames(x: np.ndarray) -> np.ndarray:
    hop = FRAME // 2
    starts = np.arange(0, x.size - FRAME, hop)
    return x[starts[:, None] + np.arange(FRAME)[None, :]] * _window()


def _overlap_add(frames: np.ndarray) -> np.ndarray:
    hop = FRAME // 2
    out = np.zeros((frames.shape[0] - 1) * hop + FRAME)
    for i, f in enumerate(frames):
        out[i * hop:i * hop + FRAME] += f
    return out


def remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float = DYN_RANGE_DB):
    """Drop frames where the clean signal ``x`` is far below its loudest frame."""
    xf, yf = _frames(x), _frames(y)
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - dyn_range
    if not np.any(keep):
        raise MetricError("clean signal is silent")
    return _overlap_add(xf[keep]), _overlap_add(yf[keep])


def third_octave_matrix(fs: int = FS, nfft: int = NFFT, bands: int = BANDS, min_freq: float = MIN_FREQ):
    """Binary ``[bands, nfft // 2 + 1]`` matrix mapping STFT bins to 1/3-octave bands."""
    freqs = np.linspace(0, fs, nfft + 1)[:nfft // 2 + 1]
    k = np.arange(bands)
    centre = min_freq * 2.0 ** (k / 3)
    lo = min_freq * np.sqrt(2.0 ** (k / 3) * 2.0 ** ((k - 1) / 3))
    hi = min_freq * np.sqrt(2.0 ** (k / 3) * 2.0 ** ((k + 1) / 3))
    obm = np.zeros((bands, freqs.size))
    for i in range(bands):
        a = int(np.argmin((freqs - lo[i]) ** 2))
        b = int(np.argmin((freqs - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm, centre


def _stft_mag2(x: np.ndarray) -> np.ndarray:
    return np.abs(np.fft.rfft(_frames(x), NFFT, axis=1)) ** 2


def stoi(clean, processed, sample_rate: int | None = None) -> float:
    """STOI score of ``processed`` against ``clean``; typically in [0, 1].

    ``clean``/``processed`` are arrays (then ``sample_rate`` is required) or
    :class:`~mimo_sce.data.signals.Waveform` objects.
    """
    if sample_rate is None:
        sample_rate = getattr(clean, "sample_rate", None)
        if sample_rate is None:
            raise MetricError("sample_rate is required for raw arrays")
    x, y = _pair(clean, processed)
    if not np.any(x):
        raise MetricError("clean signal is silent")
    x, y = resample(x, sample_rate), resample(y, sample_rate)
    x, y = remove_silent_frames(x, y)
    obm, _ = third_octave_matrix()
    xb = np.sqrt(obm @ _stft_mag2(x).T)  # [bands, frames]
    yb = np.sqrt(obm @ _stft_mag2(y).T)
    n_frames = xb.shape[1]
    if n_frames < SEGMENT:
        raise MetricError(f"not enough active speech for STOI ({n_frames} frames < {SEGMENT})")
    # all 30-frame windows ending at frame m, m = SEGMENT..n_frames
    idx = np.arange(n_frames - SEGMENT + 1)[:, None] + np.arange(SEGMENT)[None, :]
    xs = xb[:, idx]  # [bands, windows, SEGMENT]
    ys = yb[:, idx]
    norm_x = np.linalg.norm(xs, axis=2, keepdims=True)
    norm_y = np.linalg.norm(ys, axis=2, keepdims=True)
    ys = ys * norm_x / (norm_y + _EPS)
    ys = np.minimum(ys, xs * (1 + 10 ** (-BETA_DB / 20)))
    xs = xs - xs.mean(axis=2, keepdims=True)
    ys = ys - ys.mean(axis=2, keepdims=True)
    xs = xs / (np.linalg.norm(xs, axis=2, keepdims=True) + _EPS)
    ys = ys / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    return float(np.mean(np.sum(xs * ys, axis=2)))
