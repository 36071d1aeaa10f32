"""Frame serialization, chunked streaming, bandwidth accounting and endpoints."""

import io
import struct
import threading
import time
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimo_sce.data import MultichannelSignal, read_multichannel, write_wav
from mimo_sce.model import ModelConfig, build_model, file_crc, load_checkpoint, save_checkpoint
from mimo_sce.wire import (
    FLAG_QUANTIZED,
    BandwidthStats,
    ChunkedRunner,
    FrameReader,
    LatentFrame,
    ProtocolError,
    StreamHeader,
    StreamInterrupted,
    TruncatedStream,
    decode_payload,
    decode_stream,
    encode_payload,
    encode_stream,
    follow_wav,
    parse_address,
    run_edge,
    run_server,
)
from mimo_sce.wire.protocol import FRAME_OVERHEAD, HEADER


@pytest.fixture(scope="module")
def small_model():
    return build_model(ModelConfig(filters=4, filter_length=9), seed=2)


def signal(t=3000, seed=0, channels=7):
    return MultichannelSignal(np.random.default_rng(seed).uniform(-0.5, 0.5, (channels, t)).astype(np.float32),
                              16000)


def stream_bytes(model, sig, chunk, **kw):
    buf = io.BytesIO()
    stats = encode_stream(model, sig, buf, chunk, **kw)
    return buf.getvalue(), stats


class TestSerialization:
    def test_header_layout(self):
        h = StreamHeader(16000, 7, 1, 4096, 135, 0xDEADBEEF, FLAG_QUANTIZED)
        raw = h.pack()
        assert len(raw) == HEADER.size == 24
        assert raw[:4] == b"MSCL"
        assert StreamHeader.unpack(raw) == h
        assert h.quantized and h.input_width == 4

    def test_frame_layout(self):
        raw = LatentFrame(3, b"abc").pack()
        assert raw[:12] == struct.pack("<QI", 3, 3)
        assert raw[12:15] == b"abc"
        assert struct.unpack("<I", raw[15:])[0] == zlib.crc32(raw[:15])

    @settings(max_examples=10_000, deadline=None)
    @given(index=st.integers(0, 2 ** 64 - 1), payload=st.binary(max_size=64))
    def test_frame_round_trip(self, index, payload):
        frame = LatentFrame(index, payload)
        assert LatentFrame.unpack(frame.pack()) == frame

    @settings(max_examples=500, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, width=32), min_size=1, max_size=40), st.integers(1, 3))
    def test_float_payload_bit_exact(self, values, c):
        z = np.array(values * c, dtype=np.float32).reshape(c, -1)
        assert decode_payload(encode_payload(z, False), c, False).tobytes() == z.tobytes()

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(-4, 4, width=32), min_size=1, max_size=40))
    def test_quantized_within_one_step(self, values):
        z = np.array([values], dtype=np.float32)
        payload = encode_payload(z, True)
        assert len(payload) == 4 + 2 * z.size
        scale = struct.unpack("<f", payload[:4])[0]
        assert np.max(np.abs(decode_payload(payload, 1, True) - z)) <= scale * 0.5 + 1e-6 * np.abs(z).max()

    def test_corruption_detected(self):
        raw = bytearray(LatentFrame(0, b"\x00" * 16).pack())
        raw[14] ^= 0x40
        with pytest.raises(ProtocolError, match="CRC"):
            LatentFrame.unpack(bytes(raw))

    def test_bad_header(self):
        with pytest.raises(ProtocolError):
            StreamHeader.unpack(b"XXXX" + bytes(20))
        with pytest.raises(TruncatedStream):
            StreamHeader.unpack(b"MSCL")
        bad_version = bytearray(StreamHeader(16000, 7, 1, 10, 0, 0).pack())
        bad_version[4] = 9
        with pytest.raises(ProtocolError):
            StreamHeader.unpack(bytes(bad_version))

    def test_out_of_order_frame(self):
        raw = StreamHeader(16000, 7, 1, 10, 0, 0).pack() + LatentFrame(1, bytes(4)).pack()
        with pytest.raises(ProtocolError, match="expected frame 0"):
            list(FrameReader(io.BytesIO(raw)))

    def test_missing_end_marker(self):
        raw = StreamHeader(16000, 7, 1, 10, 0, 0).pack() + LatentFrame(0, bytes(4)).pack()
        with pytest.raises(TruncatedStream):
            list(FrameReader(io.BytesIO(raw)))


class TestBandwidth:
    def test_ratio_example(self):
        stats = BandwidthStats(7, 1)
        stats.account(16000, quantized=False)
        assert (stats.input_bytes, stats.payload_bytes) == (448_000, 64_000)
        assert stats.payload_ratio == 7.0 == stats.expected_ratio

    @pytest.mark.parametrize("t", [1, 999, 4096, 8191])
    def test_latent_count_is_input_over_seven(self, small_model, t):
        raw, stats = stream_bytes(small_model, signal(t), 1024)
        assert stats.payload_ratio == 7.0
        assert stats.samples == t
        payload = sum(len(f.payload) for f in FrameReader(io.BytesIO(raw)))
        assert payload // 4 == 7 * t // 7
        assert len(raw) == stats.payload_bytes + stats.overhead_bytes

    def test_quantized_ratio(self, small_model):
        _, stats = stream_bytes(small_model, signal(2048), 1024, quantize=True)
        assert stats.payload_ratio == 14.0
        assert stats.overhead_bytes == HEADER.size + 3 * FRAME_OVERHEAD + 2 * 4


class TestChunking:
    @pytest.mark.parametrize("chunk", [1, 7, 100, 5000])
    def test_runner_exact_for_local_operator(self, chunk):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 357)).astype(np.float32)
        k = np.array([0.5, -1.0, 2.0, 0.25, 3.0])

        def fn(batch):
            padded = np.pad(batch, ((0, 0), (0, 0), (2, 2)))
            n = batch.shape[2]
            return sum(k[j] * padded[:, :, j:j + n] for j in range(5))

        runner = ChunkedRunner(fn, 2, chunk)
        pieces = []
        for start in range(0, 357, 50):
            pieces += runner.feed(x[:, start:start + 50])
        pieces += runner.finish()
        np.testing.assert_allclose(np.concatenate(pieces, axis=1), fn(x[None])[0], atol=1e-12)

    @pytest.mark.parametrize("chunk", [512, 1024, 4096])
    def test_stream_matches_offline(self, small_model, chunk):
        sig = signal(3000)
        raw, _ = stream_bytes(small_model, sig, chunk)
        out, _ = decode_stream(small_model, io.BytesIO(raw))
        small_model.eval()
        np.testing.assert_allclose(out.samples, small_model.forward(sig.as_tensor())[0], atol=1e-4)

    def test_chunk_at_least_length_is_bit_exact(self, small_model):
        sig = signal(1500)
        raw, _ = stream_bytes(small_model, sig, 4096)
        out, _ = decode_stream(small_model, io.BytesIO(raw))
        np.testing.assert_array_equal(out.samples, small_model.forward(sig.as_tensor())[0])

    def test_block_iterable_source(self, small_model):
        sig = signal(2500)
        blocks = [sig.samples[:, i:i + 333] for i in range(0, 2500, 333)]
        a, _ = stream_bytes(small_model, blocks, 1024)
        out, _ = decode_stream(small_model, io.BytesIO(a))
        np.testing.assert_allclose(out.samples, small_model.forward(sig.as_tensor())[0], atol=1e-4)

    def test_quantized_stream_close(self, small_model):
        sig = signal(2000)
        raw, _ = stream_bytes(small_model, sig, 1024, quantize=True)
        out, _ = decode_stream(small_model, io.BytesIO(raw))
        ref = small_model.forward(sig.as_tensor())[0]
        assert np.max(np.abs(out.samples - ref)) < 0.05


class TestDecodeErrors:
    def test_truncation_yields_partial_output(self, small_model):
        raw, _ = stream_bytes(small_model, signal(4000), 1000)
        cut = HEADER.size + 2 * (FRAME_OVERHEAD + 4000) + 10
        with pytest.raises(StreamInterrupted, match="truncated") as info:
            decode_stream(small_model, io.BytesIO(raw[:cut]))
        assert info.value.partial.samples.shape == (7, 2000)
        assert info.value.stats.frames == 2

    def test_corrupt_frame_yields_partial_output(self, small_model):
        raw = bytearray(stream_bytes(small_model, signal(3000), 1000)[0])
        raw[HEADER.size + FRAME_OVERHEAD + 4000 + 20] ^= 0xFF
        with pytest.raises(StreamInterrupted, match="corrupt") as info:
            decode_stream(small_model, io.BytesIO(bytes(raw)))
        assert info.value.partial.samples.shape[1] == 1000

    def test_model_checksum_mismatch(self, small_model):
        raw, _ = stream_bytes(small_model, signal(500), 1024, model_crc=1234)
        with pytest.raises(ProtocolError, match="checksum"):
            decode_stream(small_model, io.BytesIO(raw), model_crc=4321)
        decode_stream(small_model, io.BytesIO(raw), model_crc=1234)

    def test_config_mismatch(self, small_model):
        raw, _ = stream_bytes(small_model, signal(500), 1024)
        other = build_model(ModelConfig(filters=4, filter_length=9, bottleneck=2))
        with pytest.raises(ProtocolError):
            decode_stream(other, io.BytesIO(raw))

    def test_wrong_input_channels(self, small_model):
        with pytest.raises(ValueError):
            stream_bytes(small_model, signal(500, channels=3), 1024)


class TestEndpoints:
    @pytest.fixture
    def files(self, tmp_path, small_model):
        model_path = tmp_path / "m.msce"
        save_checkpoint(small_model, model_path)
        sig = signal(2500, seed=4)
        write_wav(sig, tmp_path / "in.wav")
        return model_path, tmp_path / "in.wav", sig

    def test_parse_address(self):
        assert parse_address("localhost:9000") == ("localhost", 9000)
        assert parse_address(":7") == ("127.0.0.1", 7)
        with pytest.raises(ValueError):
            parse_address("localhost")

    def test_pipe_round_trip(self, files, tmp_path):
        model_path, in_path, sig = files
        buf = io.BytesIO()
        stats = run_edge(model_path, in_path, sink=buf, chunk_len=1024)
        assert stats.payload_ratio == 7.0
        buf.seek(0)
        run_server(model_path, tmp_path / "out.wav", source=buf, stats_path=tmp_path / "s.json")
        model, _ = load_checkpoint(model_path)
        np.testing.assert_allclose(read_multichannel(tmp_path / "out.wav").samples,
                                   model.forward(sig.as_tensor())[0], atol=1e-4)
        assert '"complete": true' in (tmp_path / "s.json").read_text()

    def test_tcp_two_streams(self, files, tmp_path):
        model_path, in_path, sig = files
        ready = threading.Event()
        result = {}

        def serve():
            result["r"] = run_server(model_path, tmp_path / "out.wav", listen="127.0.0.1:0", streams=2,
                                     stats_path=tmp_path / "stats.json", ready=ready)

        th = threading.Thread(target=serve)
        th.start()
        assert ready.wait(10)
        for _ in range(2):
            run_edge(model_path, in_path, connect=f"127.0.0.1:{ready.port}", chunk_len=1000)
        th.join(30)
        assert not th.is_alive()
        a = read_multichannel(tmp_path / "out.0.wav").samples
        b = read_multichannel(tmp_path / "out.1.wav").samples
        np.testing.assert_array_equal(a, b)
        assert a.shape == sig.samples.shape
        assert (tmp_path / "stats.0.json").exists() and (tmp_path / "stats.1.json").exists()

    def test_server_writes_partial_on_truncation(self, files, tmp_path):
        model_path, in_path, _ = files
        buf = io.BytesIO()
        run_edge(model_path, in_path, sink=buf, chunk_len=1000)
        cut = io.BytesIO(buf.getvalue()[:HEADER.size + FRAME_OVERHEAD + 4000 + 5])
        with pytest.raises(StreamInterrupted):
            run_server(model_path, tmp_path / "out.wav", source=cut, stats_path=tmp_path / "s.json")
        assert read_multichannel(tmp_path / "out.wav").samples.shape == (7, 1000)
        assert '"complete": false' in (tmp_path / "s.json").read_text()

    def test_stream_checksums_model_file(self, files):
        model_path, in_path, _ = files
        buf = io.BytesIO()
        run_edge(model_path, in_path, sink=buf)
        assert StreamHeader.unpack(buf.getvalue()[:24]).model_crc == file_crc(model_path)

    def test_follow_growing_file(self, tmp_path):
        sig = signal(5000, seed=7, channels=2)
        write_wav(sig, tmp_path / "full.wav")
        raw = (tmp_path / "full.wav").read_bytes()
        path = tmp_path / "grow.wav"
        path.write_bytes(raw[:100])

        def writer():
            with open(path, "ab") as fh:
                for i in range(100, len(raw), 3001):
                    time.sleep(0.01)
                    fh.write(raw[i:i + 3001])
                    fh.flush()

        th = threading.Thread(target=writer)
        th.start()
        blocks = list(follow_wav(path, block_frames=512, poll=0.005, idle_timeout=5.0))
        th.join()
        np.testing.assert_array_equal(np.concatenate(blocks, axis=1), sig.samples)

    def test_follow_unknown_size_stops_when_idle(self, tmp_path):
        sig = signal(300, seed=8, channels=1)
        write_wav(sig, tmp_path / "a.wav")
        raw = bytearray((tmp_path / "a.wav").read_bytes())
        offset = raw.find(b"data") + 4
        raw[offset:offset + 4] = struct.pack("<I", 0xFFFFFFFF)
        (tmp_path / "b.wav").write_bytes(bytes(raw))
        blocks = list(follow_wav(tmp_path / "b.wav", block_frames=128, poll=0.005, idle_timeout=0.1))
        np.testing.assert_array_equal(np.concatenate(blocks, axis=1), sig.samples)
