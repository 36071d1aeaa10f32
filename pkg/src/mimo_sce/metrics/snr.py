from __future__ import annotations

import numpy as np

SI_SDR_CAP = 100.0


class MetricError(ValueError):
    """A metric is undefined for the given signals."""


def _pair(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(getattr(reference, "samples", reference), dtype=np.float64).reshape(-1)
    e = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64).reshape(-1)
    if r.shape != e.shape:
        raise MetricError(f"length mismatch: reference {r.size}, estimate {e.size}")
    return r, e


def si_sdr(reference, estimate) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +-100 dB."""
    r, e = _pair(reference, estimate)
    rr = np.dot(r, r)
    if rr == 0.0:
        raise MetricError("reference signal is all zeros")
    target = (np.dot(e, r) / rr) * r
    residual = e - target
    t_energy = np.dot(target, target)
    n_energy = np.dot(residual, residual)
    if n_energy <= t_energy * 10 ** (-SI_SDR_CAP / 10):
        return SI_SDR_CAP
    if t_energy <= n_energy * 10 ** (-SI_SDR_CAP / 10):
        return -SI_SDR_CAP
    return float(10 * np.log10(t_energy / n_energy))


def seg_snr(reference, estimate, frame: int = 256, hop: int = 128, floor_db: float = -10.0,
            ceil_db: float = 35.0, silence_db: float = -40.0) -> float:
    """Mean per-frame SNR over non-silent reference frames, each clamped to [floor, ceil].

    A frame is silent when its reference energy is more than ``-silence_db``
    dB below the most energetic frame.
    """
    r, e = _pair(reference, estimate)
    if r.size < frame:
        raise MetricError(f"signals shorter than one frame ({r.size} < {frame})")
    n_frames = (r.size - frame) // hop + 1
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    rf, ef = r[idx], e[idx]
    sig = np.sum(rf * rf, axis=1)
    err = np.sum((rf - ef) ** 2, axis=1)
    peak = sig.max()
    if peak == 0.0:
        raise MetricError("all reference frames are silent")
    active = sig > peak * 10 ** (silence_db / 10)
    with np.errstate(divide="ignore"):
        snr = np.where(err > 0, 10 * np.log10(sig / np.where(err > 0, err, 1.0)), ceil_db)
    snr = np.clip(snr, floor_db, ceil_db)
    return float(np.mean(snr[active]))
