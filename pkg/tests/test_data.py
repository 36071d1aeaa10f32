"""WAV I/O, array simulation, mixing and dataset assembly."""

import struct

import numpy as np
import pytest

from mimo_sce.data import (
    DatasetManifest,
    ManifestEntry,
    ManifestError,
    MicGeometry,
    MixError,
    MixSpec,
    MultichannelSignal,
    Waveform,
    WavError,
    build_dataset,
    count_segments,
    measured_snr,
    mix_at_snr,
    read_multichannel,
    read_wav,
    simulate_array,
    write_wav,
)
from mimo_sce.data.dataset import segment_pair, stream_digest, synthesize_pairs
from mimo_sce.data.mixing import noise_scale
from mimo_sce.data.synth import harmonic_utterance, make_corpus, make_noise
from mimo_sce.data.wav import parse_header


def pcm16_wav(samples: np.ndarray, rate: int = 16000, channels: int = 1) -> bytes:
    """Hand-assembled 16-bit PCM RIFF file (independent of the writer)."""
    data = np.asarray(samples, dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, channels, rate, rate * 2 * channels, 2 * channels, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


class TestWav:
    def test_pcm16_scaling(self, tmp_path):
        path = tmp_path / "a.wav"
        path.write_bytes(pcm16_wav([-32768, 0, 32767, 16384]))
        w = read_wav(path)
        assert isinstance(w, Waveform)
        np.testing.assert_array_equal(w.samples, np.array([-1.0, 0.0, 32767 / 32768, 0.5], dtype=np.float32))

    def test_pcm16_write_saturates_and_rounds(self, tmp_path):
        path = tmp_path / "b.wav"
        write_wav(Waveform(np.array([1.5, -2.0, 0.25, 1 / 65536 * 1.01], dtype=np.float32), 8000), path,
                  pcm16=True)
        raw = path.read_bytes()
        info = parse_header(raw)
        values = np.frombuffer(raw[info.data_offset:info.data_offset + info.data_size], dtype="<i2")
        np.testing.assert_array_equal(values, [32767, -32768, 8192, 1])

    def test_float_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        sig = MultichannelSignal(rng.standard_normal((3, 1001)).astype(np.float32), 16000)
        write_wav(sig, tmp_path / "f.wav")
        back = read_multichannel(tmp_path / "f.wav")
        assert back.samples.tobytes() == sig.samples.tobytes()
        write_wav(back, tmp_path / "g.wav")
        assert (tmp_path / "f.wav").read_bytes() == (tmp_path / "g.wav").read_bytes()

    def test_external_data_chunk_preserved(self, tmp_path):
        rng = np.random.default_rng(1)
        (tmp_path / "in.wav").write_bytes(pcm16_wav(rng.integers(-2000, 2000, 64)))
        write_wav(read_wav(tmp_path / "in.wav"), tmp_path / "out.wav", pcm16=True)
        a, b = (tmp_path / "in.wav").read_bytes(), (tmp_path / "out.wav").read_bytes()
        assert a[44:] == b[-len(a[44:]):]

    @pytest.mark.parametrize("raw", [b"", b"RIFF\x00\x00\x00\x00WAVX", pcm16_wav([1, 2, 3])[:-2],
                                     pcm16_wav([])])
    def test_malformed(self, tmp_path, raw):
        path = tmp_path / "bad.wav"
        path.write_bytes(raw)
        with pytest.raises(WavError):
            read_wav(path)

    def test_unsupported_codec(self, tmp_path):
        raw = bytearray(pcm16_wav([1, 2]))
        raw[20:22] = struct.pack("<H", 2)  # ADPCM
        (tmp_path / "c.wav").write_bytes(bytes(raw))
        with pytest.raises(WavError):
            read_wav(tmp_path / "c.wav")


class TestArray:
    def test_ring_delays_and_gains(self):
        g = MicGeometry.ring7()
        d = g.delays(16000)
        assert d[0] == pytest.approx(1.0 / 343 * 16000)
        assert d[0] == pytest.approx(46.647, abs=1e-3)
        assert d[6] - d[0] == pytest.approx(23.32, abs=1e-2)
        np.testing.assert_allclose(g.gains(), [1, 1, 1, 1, 1, 1, 1 / 1.5])
        assert g.mic_ids == ("I", "II", "III", "IV", "V", "VI", "VII")

    def test_integer_delay_is_exact_shift(self):
        fs = 16000
        geom = MicGeometry((343 * 10 / fs, 343 * 20 / fs))  # 10 and 20 samples exactly
        src = np.random.default_rng(0).standard_normal(100).astype(np.float32)
        out = simulate_array(Waveform(src, fs), geom).samples
        np.testing.assert_allclose(out[0, 10:110], src, atol=1e-6)
        np.testing.assert_allclose(out[1, 20:120], 0.5 * src, atol=1e-6)
        assert out.shape == (2, 100 + 20 + 1)

    def test_fractional_delay_is_linear_interpolation(self):
        fs = 16000
        geom = MicGeometry((343 * 2.25 / fs,))
        src = np.arange(8, dtype=np.float32)
        out = simulate_array(Waveform(src, fs), geom).samples[0]
        # a linear ramp delayed by 2.25 samples
        np.testing.assert_allclose(out[3:9], np.arange(3, 9) - 2.25, atol=1e-5)

    def test_equal_distances_identical_channels(self):
        src = harmonic_utterance(np.random.default_rng(0), 0.2)
        out = simulate_array(src, MicGeometry((1.2, 1.2, 1.2))).samples
        np.testing.assert_array_equal(out[0], out[1])
        np.testing.assert_array_equal(out[1], out[2])

    def test_geometry_json(self, tmp_path):
        g = MicGeometry.ring7()
        assert MicGeometry.from_json(g.to_json()) == g
        with pytest.raises(ValueError):
            MicGeometry((1.0, -1.0))


class TestMixing:
    def test_alpha_examples(self):
        t = np.arange(1000)
        clean = 0.1 * np.sqrt(2) * np.sin(2 * np.pi * t / 50)
        noise = 0.2 * np.where(t % 2 == 0, 1.0, -1.0)
        assert noise_scale(clean, noise, 0.0) == pytest.approx(0.5)
        assert noise_scale(clean, noise, -10.0) == pytest.approx(0.5 * 10 ** 0.5)
        assert noise_scale(clean, noise, 60.0) == pytest.approx(0.0005)

    def test_high_snr_is_nearly_clean(self):
        rng = np.random.default_rng(0)
        clean = MultichannelSignal((0.1 * rng.standard_normal((2, 4000))).astype(np.float32), 16000)
        noisy = mix_at_snr(clean, Waveform(rng.standard_normal(3000).astype(np.float32), 16000),
                           MixSpec("n", 60.0, seed=1))
        assert np.sqrt(np.mean((noisy.samples - clean.samples) ** 2)) < 1e-3

    def test_measured_snr_matches_target(self):
        rng = np.random.default_rng(3)
        for snr in (-5.0, 0.0, 5.0, 17.3):
            clean = MultichannelSignal((0.2 * rng.standard_normal((3, 5000))).astype(np.float32), 16000)
            noise = Waveform(rng.standard_normal(2000).astype(np.float32), 16000)  # shorter: loops
            noisy = mix_at_snr(clean, noise, MixSpec("n", snr, seed=4))
            for ch in range(3):
                assert measured_snr(clean.samples[ch], noisy.samples[ch]) == pytest.approx(snr, abs=0.01)

    def test_offsets_independent_and_seeded(self):
        rng = np.random.default_rng(0)
        clean = MultichannelSignal(np.ones((3, 100), dtype=np.float32), 16000)
        noise = Waveform(rng.standard_normal(5000).astype(np.float32), 16000)
        a = mix_at_snr(clean, noise, MixSpec("n", 0.0, seed=7)).samples
        b = mix_at_snr(clean, noise, MixSpec("n", 0.0, seed=7)).samples
        c = mix_at_snr(clean, noise, MixSpec("n", 0.0, seed=8)).samples
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a[0], a[1])
        z = mix_at_snr(clean, noise, MixSpec("n", 0.0, offset_policy="zero")).samples
        np.testing.assert_array_equal(z[0], z[1])

    def test_errors(self):
        noise = Waveform(np.ones(10, dtype=np.float32), 16000)
        with pytest.raises(MixError):
            mix_at_snr(MultichannelSignal(np.zeros((1, 10), dtype=np.float32), 16000), noise, MixSpec("n", 0))
        with pytest.raises(MixError):
            mix_at_snr(MultichannelSignal(np.ones((1, 10), dtype=np.float32), 16000),
                       Waveform(np.zeros(10, dtype=np.float32), 16000), MixSpec("n", 0))
        with pytest.raises(MixError):
            MixSpec("n", float("inf"))


class TestDataset:
    def test_segment_count_oracle(self):
        # full windows only: floor((48000 - 16384) / 8192) + 1
        assert count_segments(48000) == (48000 - 16384) // 8192 + 1 == 4
        assert count_segments(16384) == 1
        assert count_segments(100) == 1
        assert count_segments(16384 + 8192) == 2

    def test_short_utterance_zero_padded(self):
        y = np.ones((2, 100), dtype=np.float32)
        segs = list(segment_pair(y, y))
        assert len(segs) == 1 and segs[0][0].shape == (2, 16384)
        assert segs[0][0][:, 100:].sum() == 0

    def test_segments_aligned(self):
        y = np.arange(3 * 40000, dtype=np.float32).reshape(3, 40000)
        segs = list(segment_pair(y, -y))
        assert len(segs) == count_segments(40000)
        for i, (a, b) in enumerate(segs):
            np.testing.assert_array_equal(a, y[:, i * 8192:i * 8192 + 16384])
            np.testing.assert_array_equal(b, -a)

    def test_overlap_rejected(self):
        with pytest.raises(ManifestError):
            DatasetManifest([ManifestEntry("u.wav", "n.wav", 0.0, "train"),
                             ManifestEntry("u.wav", "n.wav", 5.0, "test")])

    def test_bad_manifest_json(self, tmp_path):
        (tmp_path / "m.json").write_text('{"entries": [{"clean": "a.wav"}]}')
        with pytest.raises(ManifestError):
            DatasetManifest.load(tmp_path / "m.json")
        (tmp_path / "m.json").write_text('{"entries": [], "extra": 1}')
        with pytest.raises(ManifestError):
            DatasetManifest.load(tmp_path / "m.json")

    def test_missing_file(self, tmp_path):
        m = DatasetManifest([ManifestEntry("nope.wav", "n.wav", 0.0)], root=tmp_path)
        with pytest.raises(ManifestError):
            list(synthesize_pairs(m))

    def test_rate_mismatch(self, tmp_path):
        write_wav(harmonic_utterance(np.random.default_rng(0), 0.1), tmp_path / "c.wav")
        write_wav(Waveform(np.ones(800, dtype=np.float32), 8000), tmp_path / "n.wav")
        m = DatasetManifest([ManifestEntry("c.wav", "n.wav", 0.0)], root=tmp_path)
        with pytest.raises(ManifestError):
            list(synthesize_pairs(m))

    def test_corpus_deterministic_and_targets_per_channel(self, tmp_path):
        m1 = make_corpus(tmp_path / "a", n_train=2, n_test=1, duration=0.5, noise_duration=2.0, seed=3)
        m2 = make_corpus(tmp_path / "b", n_train=2, n_test=1, duration=0.5, noise_duration=2.0, seed=3)
        d1 = stream_digest(build_dataset(m1, "train", 4096, 2048, seed=1))
        assert d1 == stream_digest(build_dataset(m2, "train", 4096, 2048, seed=1))
        assert d1 != stream_digest(build_dataset(m1, "train", 4096, 2048, seed=2))
        entry, noisy, clean = next(synthesize_pairs(m1, "train", seed=1))
        simulated = simulate_array(read_wav(m1.resolve(entry.clean)), m1.geometry)
        np.testing.assert_array_equal(clean.samples, simulated.samples)
        for ch in range(7):
            assert measured_snr(clean.samples[ch], noisy.samples[ch]) == pytest.approx(entry.snr_db, abs=0.01)

    def test_manifest_round_trip(self, tmp_path):
        m = make_corpus(tmp_path, n_train=1, n_test=1, duration=0.25, noise_duration=1.0)
        loaded = DatasetManifest.load(tmp_path / "manifest.json")
        assert loaded.entries == m.entries and loaded.geometry == m.geometry
        assert {e.split for e in loaded.entries} == {"train", "test"}
        assert len(loaded.split("train")) == 2 * 3


def test_synthetic_noise_kinds():
    rng = np.random.default_rng(0)
    for kind in ("white", "pink", "engine", "babble"):
        n = make_noise(kind, rng, 0.5)
        assert n.samples.shape == (8000,) and np.all(np.isfinite(n.samples)) and np.any(n.samples)
    with pytest.raises(ValueError):
        make_noise("rain", rng, 0.5)
