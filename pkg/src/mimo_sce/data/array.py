"""Free-field microphone array simulation.

Each microphone receives the source delayed by ``distance / c`` seconds
(fractional delays by linear interpolation) and attenuated as ``1 / distance``,
normalized so the nearest microphone has unit gain. No reverberation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import MultichannelSignal, Waveform

SPEED_OF_SOUND = 343.0

# Six microphones on a 1 m ring around the talker, a seventh 1.5 m away behind mic I.
RING_DISTANCES = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.5)
RING_IDS = ("I", "II", "III", "IV", "V", "VI", "VII")


@dataclass(frozen=True)
class MicGeometry:
    distances: tuple[float, ...]
    mic_ids: tuple[str, ...] = ()
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if not self.distances:
            raise ValueError("geometry needs at least one microphone")
        if any(not (d > 0 and math.isfinite(d)) for d in self.distances):
            raise ValueError(f"microphone distances must be positive, got {self.distances}")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")
        if not self.mic_ids:
            object.__setattr__(self, "mic_ids", tuple(str(i + 1) for i in range(len(self.distances))))
        if len(self.mic_ids) != len(self.distances):
            raise ValueError("mic_ids and distances differ in length")

    @classmethod
    def ring7(cls) -> "MicGeometry":
        return cls(RING_DISTANCES, RING_IDS)

    @property
    def channels(self) -> int:
        return len(self.distances)

    def delays(self, sample_rate: int) -> np.ndarray:
        """Propagation delay of every microphone in samples."""
        return np.asarray(self.distances) / self.speed_of_sound * sample_rate

    def gains(self) -> np.ndarray:
        d = np.asarray(self.distances)
        return d.min() / d

    def to_json(self) -> list[dict]:
        return [{"mic_id": m, "distance_m": d} for m, d in zip(self.mic_ids, self.distances)]

    @classmethod
    def from_json(cls, items: list[dict], speed_of_sound: float = SPEED_OF_SOUND) -> "MicGeometry":
        try:
            return cls(tuple(float(it["distance_m"]) for it in items),
                       tuple(str(it["mic_id"]) for it in items), speed_of_sound)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"bad geometry entry: {exc}") from exc

    @classmethod
    def load(cls, path) -> "MicGeometry":
        return cls.from_json(json.loads(Path(path).read_text()))


def simulate_array(source: Waveform, geometry: MicGeometry) -> MultichannelSignal:
    """Render ``source`` at every microphone of ``geometry``.

    All channels share the length ``len(source) + ceil(max delay) + 1``.
    """
    s = np.asarray(source.samples, dtype=np.float64)
    delays = geometry.delays(source.sample_rate)
    gains = geometry.gains()
    length = s.size + int(math.ceil(delays.max())) + 1
    t = np.arange(length, dtype=np.float64)
    src_idx = np.arange(s.size, dtype=np.float64)
    out = np.empty((geometry.channels, length), dtype=np.float64)
    for i, (d, g) in enumerate(zip(delays, gains)):
        out[i] = g * np.interp(t - d, src_idx, s, left=0.0, right=0.0)
    return MultichannelSignal(out.astype(np.float32), source.sample_rate)
