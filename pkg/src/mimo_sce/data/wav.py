"""RIFF/WAVE reading and writing for 16-bit PCM and 32-bit IEEE float.

16-bit samples map to ``[-1, 1)`` by division by 32768; writing inverts the
mapping with rounding and saturation. Float files round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .signals import MultichannelSignal, Waveform

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    """Malformed or unsupported WAV data."""


class WavInfo:
    __slots__ = ("channels", "sample_rate", "bits", "float", "data_offset", "data_size")

    def __init__(self, channels, sample_rate, bits, is_float, data_offset, data_size):
        self.channels = channels
        self.sample_rate = sample_rate
        self.bits = bits
        self.float = is_float
        self.data_offset = data_offset
        self.data_size = data_size

    @property
    def sample_width(self) -> int:
        return self.bits // 8

    @property
    def dtype(self) -> np.dtype:
        return np.dtype("<f4") if self.float else np.dtype("<i2")


def parse_header(data: bytes, allow_partial: bool = False) -> WavInfo:
    """Locate the ``fmt `` and ``data`` chunks of a RIFF/WAVE byte string.

    With ``allow_partial`` a data chunk that extends past the end of ``data``
    is accepted (used when following a file that is still being written).
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + size > len(data):
                raise WavError("truncated fmt chunk")
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise WavError("truncated extensible fmt chunk")
                (tag,) = struct.unpack_from("<H", data, body + 24)
            if tag == WAVE_FORMAT_PCM and bits == 16:
                fmt = (channels, rate, bits, False)
            elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
                fmt = (channels, rate, bits, True)
            else:
                raise WavError(f"unsupported codec (format tag {tag:#06x}, {bits} bits)")
            if channels < 1 or rate < 1:
                raise WavError("invalid channel count or sample rate")
        elif chunk_id == b"data":
            if fmt is None:
                raise WavError("data chunk before fmt chunk")
            available = len(data) - body
            if size > available and not allow_partial:
                raise WavError(f"truncated data chunk: header says {size} bytes, {available} present")
            return WavInfo(*fmt, body, min(size, available) if allow_partial else size)
        pos = body + size + (size & 1)
    if fmt is None:
        raise WavError("missing fmt chunk")
    raise WavError("missing data chunk")


def decode_samples(raw: bytes, info: WavInfo) -> np.ndarray:
    """Interleaved little-endian bytes -> float32 array ``[channels, frames]``."""
    frame = info.channels * info.sample_width
    usable = len(raw) - len(raw) % frame
    values = np.frombuffer(raw[:usable], dtype=info.dtype).reshape(-1, info.channels).T
    if info.float:
        return values.astype(np.float32)
    return (values.astype(np.float32) / 32768.0).astype(np.float32)


def read_wav(path) -> Waveform | MultichannelSignal:
    """Read a WAV file; mono files give a :class:`Waveform`."""
    data = Path(path).read_bytes()
    info = parse_header(data)
    if info.data_size == 0:
        raise WavError("zero-length data chunk")
    if info.data_size % (info.channels * info.sample_width):
        raise WavError("data chunk is not a whole number of frames")
    samples = decode_samples(data[info.data_offset:info.data_offset + info.data_size], info)
    if info.channels == 1:
        return Waveform(samples[0], info.sample_rate)
    return MultichannelSignal(samples, info.sample_rate)


def read_multichannel(path) -> MultichannelSignal:
    sig = read_wav(path)
    return sig.as_multichannel() if isinstance(sig, Waveform) else sig


def wav_sample_width(path) -> int:
    with open(path, "rb") as fh:
        head = fh.read(4096)
    return parse_header(head, allow_partial=True).sample_width


def encode_samples(samples: np.ndarray, pcm16: bool) -> bytes:
    """``[channels, frames]`` float array -> interleaved little-endian bytes."""
    inter = np.ascontiguousarray(np.asarray(samples).T)
    if pcm16:
        q = np.clip(np.round(inter.astype(np.float64) * 32768.0), -32768, 32767)
        return q.astype("<i2").tobytes()
    return inter.astype("<f4").tobytes()


def wav_header(channels: int, sample_rate: int, data_size: int, pcm16: bool) -> bytes:
    if pcm16:
        fmt = struct.pack("<HHIIHH", WAVE_FORMAT_PCM, channels, sample_rate,
                          sample_rate * channels * 2, channels * 2, 16)
        extra = b""
    else:
        fmt = struct.pack("<HHIIHHH", WAVE_FORMAT_IEEE_FLOAT, channels, sample_rate,
                          sample_rate * channels * 4, channels * 4, 32, 0)
        extra = b"fact" + struct.pack("<II", 4, data_size // (channels * 4))
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt + extra + b"data" + struct.pack("<I", data_size)
    return b"RIFF" + struct.pack("<I", 4 + len(chunks) + data_size + (data_size & 1)) + b"WAVE" + chunks


def write_wav(signal: Waveform | MultichannelSignal, path, pcm16: bool = False) -> None:
    """Write ``signal`` as 32-bit float (default) or 16-bit PCM."""
    samples = signal.samples[None, :] if isinstance(signal, Waveform) else signal.samples
    payload = encode_samples(samples, pcm16)
    pad = b"\x00" if len(payload) & 1 else b""
    header = wav_header(samples.shape[0], signal.sample_rate, len(payload), pcm16)
    Path(path).write_bytes(header + payload + pad)
