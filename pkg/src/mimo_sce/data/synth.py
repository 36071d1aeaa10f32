"""Synthetic speech-like utterances and noise sources.

Used for smoke tests and desk-scale training when no recorded corpus is at
hand. Utterances are sequences of voiced syllables (a glottal-like harmonic
series shaped by three formants) separated by short pauses, with occasional
unvoiced fricative bursts.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .array import MicGeometry
from .dataset import DatasetManifest, ManifestEntry
from .signals import Waveform
from .wav import write_wav

NOISE_TYPES = ("white", "pink", "engine", "babble")


def _envelope(n: int, attack: int) -> np.ndarray:
    env = np.ones(n)
    a = min(attack, n // 2)
    if a > 0:
        ramp = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, a))
        env[:a] = ramp
        env[n - a:] = ramp[::-1]
    return env


def _syllable(rng: np.random.Generator, n: int, fs: int, f0: float) -> np.ndarray:
    t = np.arange(n) / fs
    glide = rng.uniform(-0.25, 0.25)
    f0_track = f0 * (1 + glide * t / max(t[-1], 1e-9)) * (1 + 0.02 * np.sin(2 * np.pi * 5 * t))
    phase = 2 * np.pi * np.cumsum(f0_track) / fs
    formants = (rng.uniform(300, 900), rng.uniform(900, 2300), rng.uniform(2300, 3400))
    widths = (90.0, 120.0, 180.0)
    out = np.zeros(n)
    for h in range(1, int(4000 / f0) + 1):
        fh = h * f0
        gain = sum(np.exp(-0.5 * ((fh - fc) / bw) ** 2) for fc, bw in zip(formants, widths))
        gain = (gain + 0.05) / h ** 0.6
        out += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    return out * _envelope(n, int(0.02 * fs))


def _fricative(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / fs)
    centre = rng.uniform(3000, 6000)
    spec *= np.exp(-0.5 * ((freqs - centre) / 1200.0) ** 2)
    return np.fft.irfft(spec, n) * _envelope(n, int(0.01 * fs))


def harmonic_utterance(rng: np.random.Generator, duration: float = 1.0, sample_rate: int = 16000,
                       peak: float = 0.5) -> Waveform:
    """A speech-like utterance of ``duration`` seconds with peak amplitude ``peak``."""
    n_total = int(round(duration * sample_rate))
    out = np.zeros(n_total)
    f0 = rng.uniform(95, 165)
    pos = int(rng.uniform(0.02, 0.08) * sample_rate)
    while pos < n_total:
        n = int(rng.uniform(0.12, 0.3) * sample_rate)
        n = min(n, n_total - pos)
        if n < int(0.03 * sample_rate):
            break
        if rng.random() < 0.2:
            seg = 0.4 * _fricative(rng, n, sample_rate)
        else:
            seg = _syllable(rng, n, sample_rate, f0 * rng.uniform(0.9, 1.15))
        out[pos:pos + n] += seg * rng.uniform(0.5, 1.0)
        pos += n + int(rng.uniform(0.03, 0.12) * sample_rate)
    m = np.max(np.abs(out))
    if m > 0:
        out *= peak / m
    return Waveform(out.astype(np.float32), sample_rate)


def _shaped_noise(rng: np.random.Generator, n: int, exponent: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec /= f ** (exponent / 2)
    spec[0] = 0
    return np.fft.irfft(spec, n)


def make_noise(kind: str, rng: np.random.Generator, duration: float, sample_rate: int = 16000) -> Waveform:
    """Noise source of the given ``kind`` (see :data:`NOISE_TYPES`), unit-free, peak 0.5."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        x = _shaped_noise(rng, n, 1.0)
    elif kind == "engine":
        rpm = rng.uniform(25, 45) * (1 + 0.1 * np.sin(2 * np.pi * 0.3 * t))
        phase = 2 * np.pi * np.cumsum(rpm) / sample_rate
        x = sum(np.sin(h * phase) / h for h in range(1, 30))
        rumble = _shaped_noise(rng, n, 2.0)
        x = x / np.std(x) + 0.7 * rumble / np.std(rumble)
    elif kind == "babble":
        x = np.zeros(n)
        for _ in range(6):
            talker = harmonic_utterance(rng, duration, sample_rate).samples
            x += np.roll(talker, rng.integers(0, n))
    else:
        raise ValueError(f"unknown noise type {kind!r}; choose from {NOISE_TYPES}")
    x = x - np.mean(x)
    return Waveform((0.5 * x / np.max(np.abs(x))).astype(np.float32), sample_rate)


def make_corpus(root, n_train: int = 50, n_test: int = 10, noise_types=("pink", "engine"),
                train_snrs=(-5.0, 0.0, 5.0), test_snrs=(-5.0, 0.0, 5.0), duration: float = 1.0,
                noise_duration: float = 20.0, sample_rate: int = 16000, seed: int = 0,
                geometry: MicGeometry | None = None) -> DatasetManifest:
    """Write a synthetic corpus under ``root`` and return its manifest.

    Every utterance is mixed with every noise type at every SNR. Test
    mixtures use separately generated noise recordings of the same types.
    """
    root = Path(root)
    for sub in ("clean", "noise/train", "noise/test"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for split, count, snrs in (("train", n_train, train_snrs), ("test", n_test, test_snrs)):
        for kind in noise_types:
            write_wav(make_noise(kind, rng, noise_duration, sample_rate), root / "noise" / split / f"{kind}.wav")
        for i in range(count):
            rel = f"clean/{split}_{i:03d}.wav"
            write_wav(harmonic_utterance(rng, duration, sample_rate), root / rel)
            for kind in noise_types:
                for snr in snrs:
                    entries.append(ManifestEntry(rel, f"noise/{split}/{kind}.wav", float(snr), split))
    manifest = DatasetManifest(entries, geometry or MicGeometry.ring7(), root)
    manifest.save(root / "manifest.json")
    return manifest
