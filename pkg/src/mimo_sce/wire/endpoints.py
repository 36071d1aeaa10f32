"""Edge and server endpoints over a TCP byte stream or stdio pipes."""

from __future__ import annotations

import json
import logging
import socket
import struct
import sys
import threading
import time
from pathlib import Path

from ..data.wav import WavError, decode_samples, parse_header, read_multichannel, wav_sample_width, write_wav
from ..model.checkpoint import file_crc, load_checkpoint
from .stream import BandwidthStats, StreamInterrupted, decode_stream, encode_stream

log = logging.getLogger(__name__)

_UNKNOWN_SIZES = (0, 0xFFFFFFFF)


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def follow_wav(path, block_frames: int = 4096, poll: float = 0.05, idle_timeout: float = 2.0):
    """Yield ``[channels, n]`` blocks from a WAV file that may still be growing.

    Stops once the data chunk size declared in the header has been read, or
    (for writers that leave the size unset) after ``idle_timeout`` seconds
    without growth.
    """
    path = Path(path)
    last_growth = time.monotonic()
    with open(path, "rb") as fh:
        head = b""
        while True:
            head += fh.read(4096 - len(head))
            try:
                info = parse_header(head, allow_partial=True)
                break
            except WavError:
                if len(head) >= 4096 or time.monotonic() - last_growth > idle_timeout:
                    raise
                time.sleep(poll)
        (size,) = struct.unpack_from("<I", head, info.data_offset - 4)
        declared = None if size in _UNKNOWN_SIZES else size
        frame_bytes = info.channels * info.sample_width
        pending = head[info.data_offset:]
        consumed = 0
        while True:
            if declared is not None:
                pending = pending[:max(0, declared - consumed)]
            usable = len(pending) - len(pending) % frame_bytes
            if usable >= block_frames * frame_bytes or (usable and declared is not None
                                                         and consumed + usable >= declared):
                yield decode_samples(pending[:usable], info)
                consumed += usable
                pending = pending[usable:]
                continue
            if declared is not None and consumed >= declared:
                return
            more = fh.read(block_frames * frame_bytes)
            if more:
                pending += more
                last_growth = time.monotonic()
                continue
            if time.monotonic() - last_growth > idle_timeout:
                if usable:
                    yield decode_samples(pending[:usable], info)
                return
            time.sleep(poll)


def _wav_rate(path) -> int:
    with open(path, "rb") as fh:
        return parse_header(fh.read(4096), allow_partial=True).sample_rate


def run_edge(model_path, in_path, *, connect: str | None = None, chunk_len: int = 4096, quantize: bool = False,
             follow: bool = False, sink=None) -> BandwidthStats:
    """Encode ``in_path`` and stream the latent to ``connect`` (or ``sink``/stdout)."""
    model, cfg = load_checkpoint(model_path)
    crc = file_crc(model_path)
    width = wav_sample_width(in_path)
    if follow:
        if _wav_rate(in_path) != cfg.sample_rate:
            raise WavError("input sample rate does not match the model")
        source = follow_wav(in_path)
    else:
        source = read_multichannel(in_path)
        if source.sample_rate != cfg.sample_rate:
            raise WavError(f"input is {source.sample_rate} Hz, model expects {cfg.sample_rate} Hz")
        if source.channels != cfg.channels:
            raise WavError(f"input has {source.channels} channels, model expects {cfg.channels}")
    sock = None
    if connect is not None:
        sock = socket.create_connection(parse_address(connect))
        sink = sock.makefile("wb")
    elif sink is None:
        sink = sys.stdout.buffer
    try:
        stats = encode_stream(model, source, sink, chunk_len, quantize, crc, input_sample_bytes=width)
    finally:
        if sock is not None:
            try:
                sink.close()
            except OSError:
                pass
            sock.close()
    return stats


def serve_stream(model_path, source, out_path, stats_path=None) -> tuple[object, BandwidthStats]:
    """Decode one stream from ``source`` into ``out_path``.

    On truncation or corruption the output decoded so far is still written,
    then :class:`StreamInterrupted` propagates.
    """
    model, _ = load_checkpoint(model_path)
    crc = file_crc(model_path)
    try:
        signal, stats = decode_stream(model, source, crc)
    except StreamInterrupted as exc:
        if exc.partial is not None:
            write_wav(exc.partial, out_path)
            log.warning("wrote %d partial samples to %s", len(exc.partial), out_path)
        if exc.stats is not None:
            _write_stats(exc.stats, stats_path, complete=False)
        raise
    write_wav(signal, out_path)
    _write_stats(stats, stats_path, complete=True)
    return signal, stats


def _write_stats(stats: BandwidthStats, stats_path, complete: bool) -> None:
    record = dict(stats.to_dict(), complete=complete)
    text = json.dumps(record, sort_keys=True)
    if stats_path is not None:
        Path(stats_path).write_text(text + "\n")
    else:
        print(text)


def run_server(model_path, out_path, *, listen: str | None = None, source=None, stats_path=None,
               streams: int = 1, ready: threading.Event | None = None):
    """Receive latent streams and write enhanced WAVs.

    With ``listen`` the server accepts ``streams`` connections, each decoded
    on its own thread; with ``streams > 1`` outputs are named
    ``<stem>.<k><suffix>``. Without ``listen`` one stream is read from
    ``source`` (default stdin). Returns the list of (signal, stats) results;
    the first stream error is re-raised after all streams finish.
    """
    if listen is None:
        return [serve_stream(model_path, source if source is not None else sys.stdin.buffer, out_path, stats_path)]
    out_path = Path(out_path)
    host, port = parse_address(listen)
    results: list = [None] * streams
    errors: list[BaseException] = []

    def handle(k, conn):
        name = out_path if streams == 1 else out_path.with_name(f"{out_path.stem}.{k}{out_path.suffix}")
        sp = stats_path if streams == 1 or stats_path is None else Path(stats_path).with_suffix(f".{k}.json")
        with conn, conn.makefile("rb") as fh:
            try:
                results[k] = serve_stream(model_path, fh, name, sp)
            except BaseException as exc:  # reported to the caller below
                errors.append(exc)

    with socket.create_server((host, port)) as srv:
        if ready is not None:
            ready.port = srv.getsockname()[1]
            ready.set()
        threads = []
        for k in range(streams):
            conn, _ = srv.accept()
            t = threading.Thread(target=handle, args=(k, conn), daemon=True)
            t.start()
            threads.append(t)
        for t in threads:
            t.join()
    if errors:
        raise errors[0]
    return results
