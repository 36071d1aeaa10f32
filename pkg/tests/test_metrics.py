"""SI-SDR, segmental SNR, STOI and report assembly."""

import math

import numpy as np
import pytest

from mimo_sce.data.synth import harmonic_utterance, make_noise
from mimo_sce.metrics import (
    MetricError,
    MetricsReport,
    ReportError,
    ResultRow,
    load_results_csv,
    load_summary_csv,
    render_summary,
    score_channels,
    seg_snr,
    si_sdr,
    stoi,
)
from mimo_sce.metrics.stoi import resample, resampler_taps, third_octave_matrix

pystoi = pytest.importorskip("pystoi")


def loop_seg_snr(r, e, frame=256, hop=128):
    """Frame-by-frame segmental SNR written with explicit loops."""
    frames = []
    start = 0
    while start + frame <= len(r):
        s = sum(float(v) ** 2 for v in r[start:start + frame])
        n = sum((float(a) - float(b)) ** 2 for a, b in zip(r[start:start + frame], e[start:start + frame]))
        frames.append((s, n))
        start += hop
    peak = max(s for s, _ in frames)
    vals = []
    for s, n in frames:
        if s <= peak * 1e-4:
            continue
        v = 35.0 if n == 0 else 10 * math.log10(s / n)
        vals.append(min(35.0, max(-10.0, v)))
    return sum(vals) / len(vals)


class TestSiSdr:
    def test_identity_is_capped(self):
        x = np.random.default_rng(0).standard_normal(1000)
        assert si_sdr(x, x) == 100.0

    def test_scale_invariant(self):
        rng = np.random.default_rng(1)
        x, n = rng.standard_normal(1000), rng.standard_normal(1000)
        base = si_sdr(x, x + 0.3 * n)
        assert si_sdr(x, 5.0 * (x + 0.3 * n)) == pytest.approx(base, abs=1e-9)
        assert si_sdr(2.0 * x, x + 0.3 * n) == pytest.approx(base, abs=1e-9)

    def test_hand_example(self):
        # projection of [1,1] onto [1,0] is [1,0]; residual [0,1]: equal energy
        assert si_sdr(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_and_errors(self):
        assert si_sdr(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == -100.0
        with pytest.raises(MetricError):
            si_sdr(np.zeros(4), np.ones(4))
        with pytest.raises(MetricError):
            si_sdr(np.ones(4), np.ones(5))


class TestSegSnr:
    def test_bounds(self):
        x = np.random.default_rng(0).standard_normal(2000)
        assert seg_snr(x, x) == 35.0
        assert seg_snr(x, x + 100 * np.random.default_rng(1).standard_normal(2000)) == -10.0
        assert seg_snr(x, np.zeros(2000)) == pytest.approx(0.0)
        assert seg_snr(x, -x) == pytest.approx(-10 * math.log10(4))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        r = rng.standard_normal(1500) * np.repeat(rng.uniform(0, 1, 6), 250)
        e = r + 0.3 * rng.standard_normal(1500)
        assert seg_snr(r, e) == pytest.approx(loop_seg_snr(r, e), abs=1e-9)

    def test_silent_frames_excluded(self):
        rng = np.random.default_rng(3)
        r = np.concatenate([rng.standard_normal(1024), np.zeros(1024)])
        e = r + 0.1 * rng.standard_normal(2048)
        assert seg_snr(r, e) == pytest.approx(loop_seg_snr(r, e), abs=1e-9)
        with pytest.raises(MetricError):
            seg_snr(np.zeros(512), e[:512])
        with pytest.raises(MetricError):
            seg_snr(r[:100], e[:100])


class TestStoi:
    def test_identity(self):
        x = harmonic_utterance(np.random.default_rng(0), 2.0).samples
        assert stoi(x, x, 16000) >= 0.99

    def test_monotone_over_snr_ladder(self):
        rng = np.random.default_rng(1)
        x = harmonic_utterance(rng, 3.0).samples.astype(np.float64)
        n = rng.standard_normal(x.size)
        n *= np.sqrt(np.mean(x ** 2) / np.mean(n ** 2))
        scores = [stoi(x, x + n * 10 ** (-snr / 20), 16000) for snr in (-10, -5, 0, 5, 10)]
        assert all(a < b for a, b in zip(scores, scores[1:]))
        assert all(0 <= s <= 1 for s in scores)

    @pytest.mark.parametrize("seed", range(4))
    def test_agrees_with_reference(self, seed):
        rng = np.random.default_rng(seed)
        x = harmonic_utterance(rng, 2.5).samples.astype(np.float64)
        noise = make_noise(("white", "pink", "engine", "babble")[seed], rng, 2.5).samples
        y = x + noise * np.sqrt(np.mean(x ** 2) / np.mean(noise ** 2)) * 10 ** (-(seed * 3 - 3) / 20)
        assert stoi(x, y, 16000) == pytest.approx(pystoi.stoi(x, y, 16000), abs=0.01)

    def test_resampler_ratio_and_passband(self):
        t = np.arange(16000) / 16000
        tone = np.sin(2 * np.pi * 1000 * t)
        out = resample(tone, 16000)
        assert out.size == 10000
        ref = np.sin(2 * np.pi * 1000 * np.arange(10000) / 10000)
        np.testing.assert_allclose(out[200:-200], ref[200:-200], atol=1e-2)
        np.testing.assert_array_equal(resample(tone[:100], 10000), tone[:100])

    def test_resampler_filter_design(self):
        taps = resampler_taps(5, 8)
        assert taps.size == 581
        assert taps.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(taps, taps[::-1], atol=1e-15)

    def test_band_matrix(self):
        obm, centers = third_octave_matrix()
        assert obm.shape == (15, 257)
        assert centers[0] == pytest.approx(150.0)
        assert np.all(obm.sum(axis=0) <= 1)

    def test_errors(self):
        x = harmonic_utterance(np.random.default_rng(0), 0.2).samples
        with pytest.raises(MetricError):
            stoi(x, x, 16000)  # too short for one 30-frame segment
        with pytest.raises(MetricError):
            stoi(np.zeros(16000), np.ones(16000), 16000)
        with pytest.raises(MetricError):
            stoi(x, x)


def rows_for(system, values, metric="stoi", snrs=(0.0,)):
    out = []
    for k, v in enumerate(values):
        for snr in snrs:
            out.append(ResultRow(system, f"u{k}", 0, "pink", snr, **{metric: v}))
    return out


class TestReport:
    def test_mean_aggregate(self):
        rep = MetricsReport(rows_for("A", [0.7, 0.8]))
        assert rep.summary()["A"]["stoi"] == pytest.approx(0.75)

    def test_single_value_aggregate(self):
        assert MetricsReport(rows_for("A", [0.42])).summary()["A"]["stoi"] == 0.42

    def test_per_snr_and_improvement(self):
        rows = rows_for("Noisy", [0.6], snrs=(-5.0, 5.0)) + rows_for("Sys", [0.7], snrs=(-5.0, 5.0))
        rows[1].stoi, rows[3].stoi = 0.8, 0.9
        rep = MetricsReport(rows)
        assert rep.per_snr()["Sys"][5.0]["stoi"] == 0.9
        assert rep.improvement("Sys", "Noisy", "stoi", 5.0) == pytest.approx(0.1)
        assert rep.improvement("Sys", "Noisy", "stoi") == pytest.approx(0.1)

    def test_inconsistent_conditions_rejected(self):
        with pytest.raises(ReportError):
            MetricsReport(rows_for("A", [0.5, 0.6]) + rows_for("B", [0.5]))
        with pytest.raises(ReportError):
            MetricsReport(rows_for("A", [0.5, 0.5]) + rows_for("A", [0.5]))
        with pytest.raises(ReportError):
            MetricsReport(rows_for("A", [1.5]))
        with pytest.raises(ReportError):
            MetricsReport([])

    def test_published_averages_render(self, tmp_path):
        path = tmp_path / "published.csv"
        path.write_text("system,pesq,stoi\nNoisy,1.825,0.678\n")
        table = load_summary_csv(path)
        assert table == {"Noisy": {"pesq": 1.825, "stoi": 0.678}}
        text = render_summary(table)
        assert "Noisy" in text and "1.825" in text and "0.678" in text
        path.write_text("system,mos\nNoisy,3\n")
        with pytest.raises(ReportError):
            load_summary_csv(path)

    def test_write_and_reload(self, tmp_path):
        rng = np.random.default_rng(0)
        clean = np.stack([harmonic_utterance(rng, 1.5).samples for _ in range(2)])
        noisy = clean + 0.05 * rng.standard_normal(clean.shape).astype(np.float32)
        rows = (score_channels("Noisy", "u0", "white", 0.0, clean, noisy, 16000)
                + score_channels("Clean", "u0", "white", 0.0, clean, clean, 16000))
        rep = MetricsReport(rows)
        paths = rep.write(tmp_path)
        back = load_results_csv(paths["results.csv"])
        assert [(r.system, r.channel, r.si_sdr, r.stoi) for r in back] == \
            [(r.system, r.channel, r.si_sdr, r.stoi) for r in rows]
        assert MetricsReport(back).summary() == rep.summary()
        assert "Noisy" in paths["report.txt"].read_text()
        assert rep.summary()["Clean"]["si_sdr"] == 100.0

    def test_merge_pesq(self, tmp_path):
        rep = MetricsReport(rows_for("A", [0.5]))
        (tmp_path / "p.csv").write_text("system,utterance,channel,noise,snr_db,pesq\nA,u0,0,pink,0.0,2.5\n")
        rep.merge_pesq(tmp_path / "p.csv")
        assert rep.summary()["A"]["pesq"] == 2.5
        (tmp_path / "q.csv").write_text("system,utterance,channel,noise,snr_db,pesq\nA,u9,0,pink,0.0,2.5\n")
        with pytest.raises(ReportError):
            rep.merge_pesq(tmp_path / "q.csv")
