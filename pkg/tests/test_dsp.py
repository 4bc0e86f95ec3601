import numpy as np
import pytest

from pse import dsp
from pse.audio_io import AudioBuffer
from pse.errors import ConfigurationError, DomainError

from conftest import noise_buffer


class TestConfig:
    def test_default_derived_sizes(self, cfg48k):
        assert cfg48k.win == 960
        assert cfg48k.hop == 480
        assert cfg48k.bins == 481  # fft_size/2 + 1 with fft_size = 0.020 * 48000
        assert cfg48k.df_bins == 100  # 5000 Hz / 50 Hz per bin
        assert cfg48k.frames_per_second == 100.0

    def test_16k_config_same_df_bins(self, cfg16k):
        assert cfg16k.win == 320
        assert cfg16k.df_bins == 100

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigurationError):
            dsp.DspConfig(f_df=30000.0)  # above Nyquist
        with pytest.raises(ConfigurationError):
            dsp.DspConfig(erb_bands=1)
        with pytest.raises(ConfigurationError):
            dsp.DspConfig(df_order=0)
        with pytest.raises(ConfigurationError):
            dsp.DspConfig(fft_size=100)  # smaller than window
        with pytest.raises(ConfigurationError):
            dsp.DspConfig(overlap=0.37)  # hop does not divide window


class TestStftIstft:
    def test_impulse_bins(self, cfg48k):
        x = np.zeros(48000)
        x[24000] = 1.0
        spec = dsp.stft(AudioBuffer(x, 48000), cfg48k)
        assert spec.frames == 100
        assert spec.bins == 481

    def test_zero_audio_zero_spectrogram(self, cfg16k):
        x = np.zeros(16000)
        spec = dsp.stft(AudioBuffer(x, 16000), cfg16k)
        assert np.all(spec.values == 0)
        out = dsp.istft(spec, cfg16k)
        assert np.all(out.samples == 0)

    def test_roundtrip_white_noise(self, cfg48k):
        audio = noise_buffer(1.0, 48000, seed=7)
        rec = dsp.istft(dsp.stft(audio, cfg48k), cfg48k)
        n = audio.samples.shape[0]
        interior = slice(cfg48k.win, n - cfg48k.win)
        err = np.abs(rec.samples[:n][interior] - audio.samples[interior]).max()
        assert err < 1e-6

    def test_roundtrip_sine_si_sdr(self, cfg48k):
        t = np.arange(48000) / 48000.0
        x = 0.5 * np.sin(2 * np.pi * 440.0 * t)
        audio = AudioBuffer(x, 48000)
        rec = dsp.istft(dsp.stft(audio, cfg48k), cfg48k)
        lo, hi = cfg48k.win, x.shape[0] - cfg48k.win
        s = x[lo:hi]
        e = rec.samples[lo:hi] - s
        si_sdr = 10 * np.log10(np.dot(s, s) / max(np.dot(e, e), 1e-30))
        assert si_sdr > 60.0

    def test_output_length_is_frames_times_hop(self, cfg16k):
        audio = noise_buffer(0.33, 16000, seed=1)
        spec = dsp.stft(audio, cfg16k)
        out = dsp.istft(spec, cfg16k)
        assert out.samples.shape[0] == spec.frames * cfg16k.hop

    def test_single_frame_output_length(self, cfg16k):
        spec = dsp.ComplexSpectrogram(np.ones((1, cfg16k.bins), dtype=complex))
        out = dsp.istft(spec, cfg16k)
        assert out.samples.shape[0] == cfg16k.hop

    def test_sample_rate_mismatch(self, cfg48k):
        with pytest.raises(ConfigurationError):
            dsp.stft(noise_buffer(0.5, 16000), cfg48k)

    def test_empty_and_short_audio(self, cfg16k):
        with pytest.raises(DomainError):
            dsp.stft(AudioBuffer(np.zeros(0), 16000), cfg16k)
        with pytest.raises(DomainError):
            dsp.stft(AudioBuffer(np.zeros(10), 16000), cfg16k)

    def test_istft_dim_mismatch(self, cfg16k):
        with pytest.raises(DomainError):
            dsp.istft(dsp.ComplexSpectrogram(np.zeros((4, 33), dtype=complex)), cfg16k)


def partition_oracle(fb: dsp.ErbFilterbank, bins: int):
    """Independent check of coverage, disjointness, and the 2-bin floor."""
    edges = np.asarray(fb.band_edges)
    assert edges[0] == 0
    assert edges[-1] == bins
    assert np.all(np.diff(edges) >= 2)
    seen = np.zeros(bins, dtype=int)
    for b in range(fb.bands):
        seen[edges[b]:edges[b + 1]] += 1
    assert np.all(seen == 1)


class TestErbFilterbank:
    def test_default_partition(self, cfg48k):
        fb = dsp.build_erb_filterbank(cfg48k)
        assert len(fb.band_edges) == 33
        assert fb.band_edges[0] == 0
        assert fb.band_edges[-1] == 481
        partition_oracle(fb, cfg48k.bins)

    def test_exact_fit_two_bins_each(self):
        # 12 bands over 24 usable bins: the floor forces exactly 2 bins per band.
        cfg = dsp.DspConfig(sample_rate=2300, win_ms=20.0, erb_bands=12, f_df=1000,
                            df_order=1)
        assert cfg.bins == 24
        fb = dsp.build_erb_filterbank(cfg)
        assert np.all(fb.widths == 2)

    def test_edges_strictly_increasing_various_cfgs(self):
        for sr, bands in [(16000, 32), (48000, 32), (48000, 64), (8000, 24)]:
            cfg = dsp.DspConfig(sample_rate=sr, erb_bands=bands, f_df=min(5000, sr / 2))
            fb = dsp.build_erb_filterbank(cfg)
            partition_oracle(fb, cfg.bins)

    def test_too_many_bands_rejected(self):
        with pytest.raises(ConfigurationError):
            dsp.build_erb_filterbank(dsp.DspConfig(sample_rate=2000, erb_bands=32,
                                                   f_df=900))


class TestErbFeatures:
    def test_zero_spectrogram_unnormalized(self, cfg16k):
        fb = dsp.build_erb_filterbank(cfg16k)
        spec = dsp.ComplexSpectrogram(np.zeros((5, cfg16k.bins), dtype=complex))
        feat = dsp.erb_features(spec, fb, None, cfg16k, normalize=False)
        assert not feat.normalized
        np.testing.assert_allclose(feat.values, -10.0, atol=1e-12)  # log10(eps)

    def test_scale_shift_log_law(self, cfg16k):
        fb = dsp.build_erb_filterbank(cfg16k)
        rng = np.random.default_rng(0)
        vals = rng.standard_normal((6, cfg16k.bins)) + 1j * rng.standard_normal((6, cfg16k.bins))
        f1 = dsp.erb_features(dsp.ComplexSpectrogram(vals), fb, None, cfg16k, normalize=False)
        f2 = dsp.erb_features(dsp.ComplexSpectrogram(10 * vals), fb, None, cfg16k, normalize=False)
        np.testing.assert_allclose(f2.values - f1.values, 2.0, atol=1e-9)

    def test_normalized_converges_to_zero_mean(self, cfg16k):
        # EMA oracle: stationary input -> normalized values shrink toward 0.
        fb = dsp.build_erb_filterbank(cfg16k)
        rng = np.random.default_rng(1)
        frame = rng.standard_normal(cfg16k.bins) + 1j * rng.standard_normal(cfg16k.bins)
        spec = dsp.ComplexSpectrogram(np.tile(frame, (400, 1)))
        state = dsp.NormState()
        feat = dsp.erb_features(spec, fb, state, cfg16k)
        assert feat.normalized
        # Compare against an independently simulated EMA.
        raw = dsp.erb_features(spec, fb, None, cfg16k, normalize=False).values
        mean = raw[0].copy()
        alpha = cfg16k.norm_alpha
        expect = np.empty_like(raw)
        for k in range(raw.shape[0]):
            mean = alpha * mean + (1 - alpha) * raw[k] if k else raw[0].copy()
            expect[k] = raw[k] - mean
        np.testing.assert_allclose(feat.values, expect, atol=1e-12)
        assert np.abs(feat.values[-1]).max() < 1e-9  # constant input -> zero

    def test_state_advances_across_calls(self, cfg16k):
        fb = dsp.build_erb_filterbank(cfg16k)
        rng = np.random.default_rng(2)
        vals = rng.standard_normal((20, cfg16k.bins)) + 0j
        state_a = dsp.NormState()
        full = dsp.erb_features(dsp.ComplexSpectrogram(vals), fb, state_a, cfg16k)
        state_b = dsp.NormState()
        first = dsp.erb_features(dsp.ComplexSpectrogram(vals[:10]), fb, state_b, cfg16k)
        second = dsp.erb_features(dsp.ComplexSpectrogram(vals[10:]), fb, state_b, cfg16k)
        np.testing.assert_allclose(
            np.vstack([first.values, second.values]), full.values, atol=1e-12
        )


class TestComplexFeatures:
    def test_width_at_default(self, cfg48k):
        spec = dsp.ComplexSpectrogram(np.ones((3, cfg48k.bins), dtype=complex))
        feat = dsp.complex_features(spec, cfg48k, dsp.NormState())
        assert feat.values.shape == (3, 100)
        assert feat.df_bins == 100

    def test_zero_input_zero_feature(self, cfg16k):
        spec = dsp.ComplexSpectrogram(np.zeros((4, cfg16k.bins), dtype=complex))
        feat = dsp.complex_features(spec, cfg16k, dsp.NormState())
        assert np.all(feat.values == 0)

    def test_scale_invariance_steady_state(self, cfg16k):
        rng = np.random.default_rng(3)
        vals = rng.standard_normal((260, cfg16k.bins)) + 1j * rng.standard_normal((260, cfg16k.bins))
        f1 = dsp.complex_features(dsp.ComplexSpectrogram(vals), cfg16k, dsp.NormState())
        f2 = dsp.complex_features(dsp.ComplexSpectrogram(7.3 * vals), cfg16k, dsp.NormState())
        tail = slice(200, None)
        num = np.abs(f1.values[tail] - f2.values[tail]).max()
        den = np.abs(f1.values[tail]).max()
        assert num / den < 1e-6


class TestApplyGains:
    def test_unit_gains_identity(self, cfg16k):
        fb = dsp.build_erb_filterbank(cfg16k)
        rng = np.random.default_rng(4)
        vals = rng.standard_normal((6, cfg16k.bins)) + 1j * rng.standard_normal((6, cfg16k.bins))
        spec = dsp.ComplexSpectrogram(vals)
        out = dsp.apply_erb_gains(spec, np.ones((6, fb.bands)), fb)
        np.testing.assert_array_equal(out.values, vals)

    def test_zero_gains_zero_output(self, cfg16k):
        fb = dsp.build_erb_filterbank(cfg16k)
        spec = dsp.ComplexSpectrogram(np.ones((4, cfg16k.bins), dtype=complex))
        out = dsp.apply_erb_gains(spec, np.zeros((4, fb.bands)), fb)
        assert np.all(out.values == 0)

    def test_band0_energy_fraction(self, cfg16k):
        fb = dsp.build_erb_filterbank(cfg16k)
        spec = dsp.ComplexSpectrogram(np.ones((2, cfg16k.bins), dtype=complex))
        gains = np.zeros((2, fb.bands))
        gains[:, 0] = 1.0
        out = dsp.apply_erb_gains(spec, gains, fb)
        ratio = np.sum(np.abs(out.values) ** 2) / np.sum(np.abs(spec.values) ** 2)
        expected = fb.widths[0] / cfg16k.bins  # oracle: bin count fraction
        assert ratio == pytest.approx(expected, rel=1e-12)

    def test_out_of_range_gain_rejected(self, cfg16k):
        fb = dsp.build_erb_filterbank(cfg16k)
        spec = dsp.ComplexSpectrogram(np.ones((1, cfg16k.bins), dtype=complex))
        for bad in (-0.1, 1.1):
            gains = np.full((1, fb.bands), 0.5)
            gains[0, 3] = bad
            with pytest.raises(DomainError):
                dsp.apply_erb_gains(spec, gains, fb)


class TestDeepFilter:
    def _random_spec(self, cfg, frames, seed=0):
        rng = np.random.default_rng(seed)
        vals = rng.standard_normal((frames, cfg.bins)) + 1j * rng.standard_normal((frames, cfg.bins))
        return dsp.ComplexSpectrogram(vals)

    def test_identity_tap(self, cfg16k):
        spec = self._random_spec(cfg16k, 12, seed=5)
        taps = np.zeros((12, cfg16k.df_order, cfg16k.df_bins), dtype=complex)
        # Tap index addressing the current frame: i = N - 1 - lookahead.
        taps[:, cfg16k.df_order - 1 - cfg16k.lookahead_frames, :] = 1.0
        out = dsp.deep_filter(spec, dsp.DfCoeffs(taps), cfg16k)
        np.testing.assert_array_equal(out.values, spec.values)

    def test_zero_taps(self, cfg16k):
        spec = self._random_spec(cfg16k, 8, seed=6)
        taps = np.zeros((8, cfg16k.df_order, cfg16k.df_bins), dtype=complex)
        out = dsp.deep_filter(spec, dsp.DfCoeffs(taps), cfg16k)
        assert np.all(out.values[:, :cfg16k.df_bins] == 0)
        np.testing.assert_array_equal(out.values[:, cfg16k.df_bins:],
                                      spec.values[:, cfg16k.df_bins:])

    def test_against_direct_dot_product(self, cfg16k):
        # Brute-force oracle: one random frame/bin as an explicit 5-term sum.
        rng = np.random.default_rng(7)
        frames = 15
        spec = self._random_spec(cfg16k, frames, seed=8)
        taps = rng.standard_normal((frames, cfg16k.df_order, cfg16k.df_bins)) \
            + 1j * rng.standard_normal((frames, cfg16k.df_order, cfg16k.df_bins))
        out = dsp.deep_filter(spec, dsp.DfCoeffs(taps), cfg16k)
        n, look = cfg16k.df_order, cfg16k.lookahead_frames
        for _ in range(20):
            k = int(rng.integers(frames))
            f = int(rng.integers(cfg16k.df_bins))
            expected = 0.0 + 0.0j
            for i in range(n):
                src = k - (n - 1) + i + look
                if 0 <= src < frames:
                    expected += taps[k, i, f] * spec.values[src, f]
            assert out.values[k, f] == pytest.approx(expected, rel=1e-12)

    def test_linearity(self, cfg16k):
        rng = np.random.default_rng(9)
        frames = 10
        a = self._random_spec(cfg16k, frames, seed=10)
        b = self._random_spec(cfg16k, frames, seed=11)
        shape = (frames, cfg16k.df_order, cfg16k.df_bins)
        t1 = dsp.DfCoeffs(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        t2 = dsp.DfCoeffs(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        # linear in the spectrogram
        lhs = dsp.deep_filter(dsp.ComplexSpectrogram(a.values + b.values), t1, cfg16k).values
        rhs = dsp.deep_filter(a, t1, cfg16k).values + dsp.deep_filter(b, t1, cfg16k).values
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)
        # linear in the taps (below f_df; the passthrough band is affine)
        df = cfg16k.df_bins
        lhs = dsp.deep_filter(a, dsp.DfCoeffs(t1.taps + t2.taps), cfg16k).values[:, :df]
        rhs = (dsp.deep_filter(a, t1, cfg16k).values[:, :df]
               + dsp.deep_filter(a, t2, cfg16k).values[:, :df])
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch_rejected(self, cfg16k):
        spec = self._random_spec(cfg16k, 5)
        taps = np.zeros((5, cfg16k.df_order + 1, cfg16k.df_bins), dtype=complex)
        with pytest.raises(DomainError):
            dsp.deep_filter(spec, dsp.DfCoeffs(taps), cfg16k)
