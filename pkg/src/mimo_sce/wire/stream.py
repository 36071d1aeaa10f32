"""Chunked encoder/decoder drivers with overlap-save context.

A block of ``chunk_len`` outputs at ``[s, s + chunk_len)`` is computed from
the input window ``[s - ctx, s + chunk_len + ctx)`` clipped to the signal,
where ``ctx`` is the receptive-field half-width of the network. The window
is *clipped*, never zero-extended, at the utterance edges, so the layer
padding sees exactly what whole-utterance inference sees and the
concatenated blocks reproduce it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Iterable

import numpy as np

from ..data.signals import MultichannelSignal
from ..model.network import Model
from .protocol import (
    FLAG_PCM16_INPUT,
    FLAG_QUANTIZED,
    FRAME_OVERHEAD,
    HEADER,
    QUANT_SCALE_BYTES,
    FrameReader,
    LatentFrame,
    ProtocolError,
    StreamHeader,
    TruncatedStream,
    decode_payload,
    encode_payload,
    payload_sample_bytes,
)


class ChunkedRunner:
    """Apply a length-preserving map ``fn`` to a growing ``[C, T]`` stream.

    ``fn`` is called on batched ``[1, C, n]`` windows (like ``Model.encode``).
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], context: int, chunk_len: int):
        if chunk_len < 1:
            raise ValueError("chunk_len must be >= 1")
        self.fn = fn
        self.context = context
        self.chunk_len = chunk_len
        self.buffer: np.ndarray | None = None
        self.buffer_start = 0  # absolute index of buffer[:, 0]
        self.emitted = 0

    @property
    def available(self) -> int:
        return self.buffer_start + (0 if self.buffer is None else self.buffer.shape[1])

    def _run(self, start: int, stop: int, total: int | None) -> np.ndarray:
        w0 = max(0, start - self.context)
        w1 = stop + self.context if total is None else min(total, stop + self.context)
        window = self.buffer[:, w0 - self.buffer_start:w1 - self.buffer_start]
        out = self.fn(window[None])[0]
        return out[:, start - w0:stop - w0]

    def _trim(self) -> None:
        keep_from = max(0, self.emitted - self.context)
        drop = keep_from - self.buffer_start
        if drop > 0:
            self.buffer = self.buffer[:, drop:]
            self.buffer_start = keep_from

    def feed(self, block: np.ndarray) -> list[np.ndarray]:
        block = np.asarray(block, dtype=np.float32)
        self.buffer = block.copy() if self.buffer is None else np.concatenate([self.buffer, block], axis=1)
        out = []
        while self.available >= self.emitted + self.chunk_len + self.context:
            out.append(self._run(self.emitted, self.emitted + self.chunk_len, None))
            self.emitted += self.chunk_len
            self._trim()
        return out

    def finish(self) -> list[np.ndarray]:
        total = self.available
        out = []
        while self.emitted < total:
            stop = min(total, self.emitted + self.chunk_len)
            out.append(self._run(self.emitted, stop, total))
            self.emitted = stop
            self._trim()
        return out


@dataclass
class BandwidthStats:
    channels: int
    bottleneck: int
    samples: int = 0
    frames: int = 0
    input_bytes: int = 0
    payload_bytes: int = 0
    overhead_bytes: int = 0
    input_sample_bytes: int = 4
    latent_sample_bytes: int = 4

    @property
    def payload_ratio(self) -> float:
        return self.input_bytes / self.payload_bytes if self.payload_bytes else float("nan")

    @property
    def expected_ratio(self) -> float:
        return (self.channels * self.input_sample_bytes) / (self.bottleneck * self.latent_sample_bytes)

    @property
    def total_ratio(self) -> float:
        sent = self.payload_bytes + self.overhead_bytes
        return self.input_bytes / sent if sent else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["payload_ratio"] = self.payload_ratio
        d["total_ratio"] = self.total_ratio
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def account(self, latent_samples: int, quantized: bool) -> None:
        self.frames += 1
        self.samples += latent_samples
        self.input_bytes += self.channels * latent_samples * self.input_sample_bytes
        self.payload_bytes += self.bottleneck * latent_samples * self.latent_sample_bytes
        self.overhead_bytes += FRAME_OVERHEAD + (QUANT_SCALE_BYTES if quantized else 0)


def _blocks(source) -> Iterable[np.ndarray]:
    if isinstance(source, MultichannelSignal):
        yield source.samples
    elif isinstance(source, np.ndarray):
        yield source
    else:
        yield from source


def encode_stream(model: Model, source, sink, chunk_len: int, quantize: bool = False, model_crc: int = 0,
                  input_sample_bytes: int = 4) -> BandwidthStats:
    """Encode multichannel input into framed latent data written to ``sink``.

    ``source`` is a :class:`MultichannelSignal`, a ``[N, T]`` array or an
    iterable of ``[N, n]`` blocks (for live or growing input).
    """
    cfg = model.config
    model.eval()
    flags = (FLAG_QUANTIZED if quantize else 0) | (FLAG_PCM16_INPUT if input_sample_bytes == 2 else 0)
    header = StreamHeader(cfg.sample_rate, cfg.channels, cfg.bottleneck, chunk_len, cfg.encoder_context,
                          model_crc, flags)
    stats = BandwidthStats(cfg.channels, cfg.bottleneck, input_sample_bytes=input_sample_bytes,
                           latent_sample_bytes=payload_sample_bytes(header))
    sink.write(header.pack())
    stats.overhead_bytes += HEADER.size
    runner = ChunkedRunner(model.encode, cfg.encoder_context, chunk_len)
    index = 0

    def emit(latents):
        nonlocal index
        for z in latents:
            sink.write(LatentFrame(index, encode_payload(z, quantize)).pack())
            stats.account(z.shape[1], quantize)
            index += 1
        sink.flush()

    for block in _blocks(source):
        block = np.asarray(block, dtype=np.float32)
        if block.ndim != 2 or block.shape[0] != cfg.channels:
            raise ValueError(f"model expects {cfg.channels} input channels, got block of shape {block.shape}")
        emit(runner.feed(block))
    emit(runner.finish())
    sink.write(LatentFrame(index, b"").pack())
    stats.overhead_bytes += FRAME_OVERHEAD
    sink.flush()
    return stats


class StreamInterrupted(ProtocolError):
    """Stream ended early; ``partial`` holds the output decoded so far."""

    def __init__(self, message: str, partial: MultichannelSignal | None, stats: BandwidthStats | None):
        super().__init__(message)
        self.partial = partial
        self.stats = stats


def decode_stream(model: Model, source, model_crc: int | None = None) -> tuple[MultichannelSignal, BandwidthStats]:
    """Read a latent stream from ``source`` and reconstruct the enhanced signal.

    Raises :class:`StreamInterrupted` (carrying the partial output up to the
    last valid frame) if the stream is truncated or corrupt after the header.
    """
    cfg = model.config
    model.eval()
    reader = FrameReader(source)
    header = reader.header
    if model_crc is not None and header.model_crc != model_crc:
        raise ProtocolError(f"model checksum mismatch: stream {header.model_crc:#010x}, local {model_crc:#010x}")
    if (header.channels, header.bottleneck, header.sample_rate) != (cfg.channels, cfg.bottleneck, cfg.sample_rate):
        raise ProtocolError("stream header does not match the local model configuration")
    stats = BandwidthStats(header.channels, header.bottleneck, input_sample_bytes=header.input_width,
                           latent_sample_bytes=payload_sample_bytes(header))
    stats.overhead_bytes += HEADER.size
    runner = ChunkedRunner(model.decode, cfg.decoder_context, header.chunk_len)
    outputs: list[np.ndarray] = []
    try:
        for frame in reader:
            z = decode_payload(frame.payload, header.bottleneck, header.quantized)
            stats.account(z.shape[1], header.quantized)
            outputs.extend(runner.feed(z))
        stats.overhead_bytes += FRAME_OVERHEAD
    except ProtocolError as exc:
        if runner.buffer is not None:
            outputs.extend(runner.finish())
        partial = MultichannelSignal(np.concatenate(outputs, axis=1), header.sample_rate) if outputs else None
        kind = "truncated" if isinstance(exc, TruncatedStream) else "corrupt"
        raise StreamInterrupted(f"stream {kind}: {exc}", partial, stats) from exc
    outputs.extend(runner.finish())
    if not outputs:
        raise ProtocolError("stream carried no latent frames")
    return MultichannelSignal(np.concatenate(outputs, axis=1), header.sample_rate), stats
