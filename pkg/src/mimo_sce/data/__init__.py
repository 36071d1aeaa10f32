"""WAV I/O, microphone-array simulation, SNR mixing and dataset assembly."""

from .array import MicGeometry, simulate_array
from .dataset import DatasetManifest, ManifestEntry, ManifestError, build_dataset, count_segments
from .mixing import MixError, MixSpec, measured_snr, mix_at_snr
from .signals import MultichannelSignal, Waveform
from .wav import WavError, read_multichannel, read_wav, write_wav

__all__ = [
    "DatasetManifest",
    "ManifestEntry",
    "ManifestError",
    "MicGeometry",
    "MixError",
    "MixSpec",
    "MultichannelSignal",
    "WavError",
    "Waveform",
    "build_dataset",
    "count_segments",
    "measured_snr",
    "mix_at_snr",
    "read_multichannel",
    "read_wav",
    "simulate_array",
    "write_wav",
]
