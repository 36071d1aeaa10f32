"""Framed latent transport between an edge encoder and a server decoder."""

from .endpoints import follow_wav, parse_address, run_edge, run_server, serve_stream
from .protocol import (
    FLAG_PCM16_INPUT,
    FLAG_QUANTIZED,
    FrameReader,
    LatentFrame,
    ProtocolError,
    StreamHeader,
    TruncatedStream,
    decode_payload,
    encode_payload,
)
from .stream import BandwidthStats, ChunkedRunner, StreamInterrupted, decode_stream, encode_stream

__all__ = [
    "BandwidthStats",
    "ChunkedRunner",
    "FLAG_PCM16_INPUT",
    "FLAG_QUANTIZED",
    "FrameReader",
    "LatentFrame",
    "ProtocolError",
    "StreamHeader",
    "StreamInterrupted",
    "TruncatedStream",
    "decode_payload",
    "decode_stream",
    "encode_payload",
    "encode_stream",
    "follow_wav",
    "parse_address",
    "run_edge",
    "run_server",
    "serve_stream",
]
