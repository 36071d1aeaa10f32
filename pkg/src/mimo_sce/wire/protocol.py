"""Byte layouts for the edge-to-server latent stream.

Stream header (24 bytes, little-endian)::

    magic b"MSCL" | version u8 | flags u8 | sample_rate u32 | N u8 | C_num u8 |
    chunk_len u32 | context_pad u32 | model_crc u32

Flag bit 0 marks 16-bit quantized payloads; bit 1 marks 16-bit PCM input
(used only for bandwidth accounting).

Latent frame::

    index u64 | payload_len u32 | payload | crc32 u32

The CRC covers index, length and payload. Float payloads are
``C_num * n`` float32 values, channel-major. Quantized payloads are a
float32 scale followed by ``C_num * n`` int16 values. A frame with an empty
payload terminates the stream.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"MSCL"
VERSION = 1
FLAG_QUANTIZED = 0x01
FLAG_PCM16_INPUT = 0x02

HEADER = struct.Struct("<4sBBIBBIII")
FRAME_PREFIX = struct.Struct("<QI")
CRC = struct.Struct("<I")
FRAME_OVERHEAD = FRAME_PREFIX.size + CRC.size
QUANT_SCALE_BYTES = 4
INT16_MAX = 32767


class ProtocolError(RuntimeError):
    """Malformed, corrupt or out-of-order stream data."""


class TruncatedStream(ProtocolError):
    """The byte stream ended before the end-of-stream frame."""


@dataclass(frozen=True)
class StreamHeader:
    sample_rate: int
    channels: int
    bottleneck: int
    chunk_len: int
    context_pad: int
    model_crc: int
    flags: int = 0
    version: int = VERSION

    @property
    def quantized(self) -> bool:
        return bool(self.flags & FLAG_QUANTIZED)

    @property
    def input_width(self) -> int:
        return 2 if self.flags & FLAG_PCM16_INPUT else 4

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.flags, self.sample_rate, self.channels, self.bottleneck,
                           self.chunk_len, self.context_pad, self.model_crc)

    @classmethod
    def unpack(cls, data: bytes) -> "StreamHeader":
        if len(data) < HEADER.size:
            raise TruncatedStream("stream ended inside the header")
        magic, version, flags, rate, n, c, chunk, pad, crc = HEADER.unpack(data[:HEADER.size])
        if magic != MAGIC:
            raise ProtocolError(f"bad stream magic {magic!r}")
        if version != VERSION:
            raise ProtocolError(f"unsupported stream version {version}")
        return cls(rate, n, c, chunk, pad, crc, flags, version)


@dataclass(frozen=True)
class LatentFrame:
    index: int
    payload: bytes

    @property
    def is_end(self) -> bool:
        return not self.payload

    def pack(self) -> bytes:
        body = FRAME_PREFIX.pack(self.index, len(self.payload)) + self.payload
        return body + CRC.pack(zlib.crc32(body))

    @classmethod
    def unpack(cls, data: bytes) -> "LatentFrame":
        if len(data) < FRAME_OVERHEAD:
            raise TruncatedStream("frame shorter than its fixed fields")
        index, length = FRAME_PREFIX.unpack_from(data)
        end = FRAME_PREFIX.size + length
        if len(data) < end + CRC.size:
            raise TruncatedStream("frame payload truncated")
        (crc,) = CRC.unpack_from(data, end)
        if zlib.crc32(data[:end]) != crc:
            raise ProtocolError(f"CRC mismatch in frame {index}")
        return cls(index, bytes(data[FRAME_PREFIX.size:end]))


def encode_payload(latent: np.ndarray, quantized: bool) -> bytes:
    """``[C_num, n]`` latent block -> payload bytes."""
    latent = np.asarray(latent, dtype=np.float32)
    if not quantized:
        return latent.astype("<f4").tobytes()
    peak = float(np.max(np.abs(latent))) if latent.size else 0.0
    # floor at the smallest normal float32 so tiny peaks keep a usable step
    scale = max(np.float32(peak / INT16_MAX), np.finfo(np.float32).tiny) if peak > 0 else np.float32(1.0)
    q = np.clip(np.round(latent / scale), -INT16_MAX, INT16_MAX).astype("<i2")
    return struct.pack("<f", scale) + q.tobytes()


def decode_payload(payload: bytes, bottleneck: int, quantized: bool) -> np.ndarray:
    if quantized:
        if len(payload) < QUANT_SCALE_BYTES or (len(payload) - QUANT_SCALE_BYTES) % (2 * bottleneck):
            raise ProtocolError("quantized payload has an invalid length")
        (scale,) = struct.unpack_from("<f", payload)
        q = np.frombuffer(payload, dtype="<i2", offset=QUANT_SCALE_BYTES)
        return (q.astype(np.float32) * np.float32(scale)).reshape(bottleneck, -1)
    if len(payload) % (4 * bottleneck):
        raise ProtocolError("float payload has an invalid length")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(bottleneck, -1)


def payload_sample_bytes(header: StreamHeader) -> int:
    return 2 if header.quantized else 4


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        part = stream.read(remaining)
        if not part:
            break
        chunks.append(part)
        remaining -= len(part)
    return b"".join(chunks)


class FrameReader:
    """Parse a header and the ordered frames that follow from a binary stream."""

    def __init__(self, stream):
        self.stream = stream
        raw = _read_exact(stream, HEADER.size)
        self.header = StreamHeader.unpack(raw)
        self.next_index = 0
        self.bytes_read = len(raw)

    def __iter__(self):
        return self

    def __next__(self) -> LatentFrame:
        prefix = _read_exact(self.stream, FRAME_PREFIX.size)
        if not prefix:
            raise TruncatedStream(f"stream ended after frame {self.next_index - 1} without end marker")
        if len(prefix) < FRAME_PREFIX.size:
            raise TruncatedStream("stream ended inside a frame")
        _, length = FRAME_PREFIX.unpack(prefix)
        rest = _read_exact(self.stream, length + CRC.size)
        self.bytes_read += len(prefix) + len(rest)
        frame = LatentFrame.unpack(prefix + rest)
        if frame.index != self.next_index:
            raise ProtocolError(f"expected frame {self.next_index}, got {frame.index}")
        self.next_index += 1
        if frame.is_end:
            raise StopIteration
        return frame
