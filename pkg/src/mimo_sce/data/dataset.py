"""Dataset manifests and segmentation into training pairs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .array import MicGeometry, simulate_array
from .mixing import MixSpec, mix_at_snr
from .signals import MultichannelSignal, Waveform
from .wav import read_wav

SEGMENT = 16384
HOP = 8192
SPLITS = ("train", "test")


class ManifestError(ValueError):
    """Invalid dataset manifest or inconsistent input files."""


@dataclass(frozen=True)
class ManifestEntry:
    clean: str
    noise: str
    snr_db: float
    split: str = "train"

    @property
    def noise_id(self) -> str:
        return Path(self.noise).stem


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    geometry: MicGeometry = field(default_factory=MicGeometry.ring7)
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        for e in self.entries:
            if e.split not in SPLITS:
                raise ManifestError(f"unknown split {e.split!r} for {e.clean}")
        train = {e.clean for e in self.entries if e.split == "train"}
        test = {e.clean for e in self.entries if e.split == "test"}
        overlap = train & test
        if overlap:
            raise ManifestError(f"utterances in both train and test splits: {sorted(overlap)[:3]}")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    def to_json(self) -> dict:
        return {
            "geometry": self.geometry.to_json(),
            "speed_of_sound": self.geometry.speed_of_sound,
            "entries": [{"clean": e.clean, "noise": e.noise, "snr_db": e.snr_db, "split": e.split}
                        for e in self.entries],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def from_json(cls, data: dict, root: Path | None = None) -> "DatasetManifest":
        if "entries" not in data:
            raise ManifestError("manifest has no 'entries'")
        unknown = set(data) - {"entries", "geometry", "speed_of_sound"}
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        entries = []
        for item in data["entries"]:
            extra = set(item) - {"clean", "noise", "snr_db", "split"}
            if extra:
                raise ManifestError(f"unknown manifest entry keys: {sorted(extra)}")
            try:
                entries.append(ManifestEntry(str(item["clean"]), str(item["noise"]), float(item["snr_db"]),
                                             str(item.get("split", "train"))))
            except KeyError as exc:
                raise ManifestError(f"manifest entry missing {exc}") from exc
        if "geometry" in data:
            geometry = MicGeometry.from_json(data["geometry"], data.get("speed_of_sound", 343.0))
        else:
            geometry = MicGeometry.ring7()
        return cls(entries, geometry, root or Path())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
        return cls.from_json(data, root=path.parent)


def count_segments(length: int, segment: int = SEGMENT, hop: int = HOP) -> int:
    """Segments emitted for an utterance of ``length`` samples.

    Full windows only; an utterance shorter than one window yields a single
    zero-padded segment.
    """
    if length <= segment:
        return 1
    return (length - segment) // hop + 1


def segment_pair(noisy: np.ndarray, clean: np.ndarray, segment: int = SEGMENT, hop: int = HOP):
    """Yield aligned ``[N, segment]`` windows of a noisy/clean pair."""
    length = noisy.shape[1]
    if length < segment:
        pad = ((0, 0), (0, segment - length))
        yield np.pad(noisy, pad), np.pad(clean, pad)
        return
    for i in range(count_segments(length, segment, hop)):
        s = i * hop
        yield noisy[:, s:s + segment], clean[:, s:s + segment]


def entry_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


class _Cache:
    def __init__(self):
        self.items: dict[Path, Waveform | MultichannelSignal] = {}

    def read(self, path: Path):
        if path not in self.items:
            if not path.exists():
                raise ManifestError(f"missing file: {path}")
            self.items[path] = read_wav(path)
        return self.items[path]


def clean_multichannel(source, geometry: MicGeometry) -> MultichannelSignal:
    """Array-simulate a mono source; multichannel recordings pass through."""
    if isinstance(source, Waveform):
        return simulate_array(source, geometry)
    if source.channels != geometry.channels:
        raise ManifestError(f"recording has {source.channels} channels, geometry has {geometry.channels}")
    return source


def synthesize_pairs(manifest: DatasetManifest, split: str = "train", seed: int = 0
                     ) -> Iterator[tuple[ManifestEntry, MultichannelSignal, MultichannelSignal]]:
    """Yield ``(entry, noisy, clean)`` whole utterances in manifest order."""
    cache = _Cache()
    rate = None
    for index, entry in enumerate(manifest.entries):
        if entry.split != split:
            continue
        clean = clean_multichannel(cache.read(manifest.resolve(entry.clean)), manifest.geometry)
        noise = cache.read(manifest.resolve(entry.noise))
        if isinstance(noise, MultichannelSignal):
            noise = noise.channel(0)
        rate = rate or clean.sample_rate
        if clean.sample_rate != rate or noise.sample_rate != rate:
            raise ManifestError(f"sample rate mismatch in entry {index} ({entry.clean}, {entry.noise})")
        noisy = mix_at_snr(clean, noise, MixSpec(entry.noise_id, entry.snr_db, seed=entry_seed(seed, index)))
        yield entry, noisy, clean


def build_dataset(manifest: DatasetManifest, split: str = "train", segment: int = SEGMENT, hop: int = HOP,
                  seed: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(Y, X)`` segment pairs of shape ``[N, segment]`` in manifest order.

    Each output channel's target is the clean signal of that same channel.
    """
    for _, noisy, clean in synthesize_pairs(manifest, split, seed):
        yield from segment_pair(noisy.samples, clean.samples, segment, hop)


def stream_digest(pairs) -> str:
    h = hashlib.sha256()
    for y, x in pairs:
        h.update(np.ascontiguousarray(y, dtype=np.float32).tobytes())
        h.update(np.ascontiguousarray(x, dtype=np.float32).tobytes())
    return h.hexdigest()
