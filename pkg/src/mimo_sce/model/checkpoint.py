"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MSCE" | version u8 | header_len u32 | header JSON (utf-8)
    repeated: name_len u32 | name utf-8 | rank u8 | dims u32 * rank | float32 payload
    CRC-32 of every preceding byte (u32)

The JSON header holds the model config and the record count. Records cover
learnable parameters followed by batch-norm running statistics, in model
order.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .network import Model, build_model

MAGIC = b"MSCE"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for corrupt, truncated or incompatible checkpoint files."""


def _records(model: Model):
    for p in model.parameters():
        yield p.name, p.value
    yield from model.buffers().items()


def serialize(model: Model) -> bytes:
    records = list(_records(model))
    header = json.dumps({"config": model.config.to_dict(), "records": len(records)}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<BI", VERSION, len(header)), header]
    for name, value in records:
        raw = name.encode()
        arr = np.ascontiguousarray(value, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: Model, path) -> int:
    """Write ``model`` to ``path``; returns the CRC-32 of the whole file."""
    data = serialize(model)
    Path(path).write_bytes(data)
    return zlib.crc32(data)


def file_crc(path) -> int:
    return zlib.crc32(Path(path).read_bytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 9:
        raise CheckpointError("truncated checkpoint")
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    reader = _Reader(body)
    reader.take(4)
    version, header_len = reader.unpack("<BI")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(reader.take(header_len).decode())
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    values = {}
    for _ in range(header["records"]):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode()
        (rank,) = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        values[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if reader.pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint records")
    return config, values


def load_checkpoint(path, **expected) -> tuple[Model, ModelConfig]:
    """Load a model from ``path``.

    Keyword arguments are config fields the caller requires (for example
    ``mode="MIMO"``); a mismatch raises :class:`ConfigError`.
    """
    config, values = deserialize(Path(path).read_bytes())
    config.check_compatible(**expected)
    model = build_model(config)
    params = model.named_parameters()
    buffer_names = set(model.buffers())
    if set(values) != set(params) | buffer_names:
        raise CheckpointError("checkpoint records do not match the model layout")
    for name, p in params.items():
        if values[name].shape != p.shape:
            raise CheckpointError(f"shape mismatch for {name}: {values[name].shape} vs {p.shape}")
        p.value[...] = values[name]
    model.load_buffers({k: values[k] for k in buffer_names})
    model.eval()
    return model, config
