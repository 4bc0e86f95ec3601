import numpy as np
import pytest

from pse import dsp
from pse.errors import ConfigurationError, DataError, FormatError, UsageError
from pse.layers import count_macs, count_params
from pse.model import (
    Model, ModelConfig, SpeakerEmbedding, StreamingEnhancer, build_layer_specs,
    build_model, load_model, save_model,
)

from conftest import noise_buffer, random_embedding, tiny_model_config

VARIANTS = ("baseline", "unified", "dual_both", "dual_erb", "dual_df")


def default_counts():
    d = dsp.DspConfig()
    out = {}
    for v in VARIANTS:
        desc = list(build_layer_specs(ModelConfig(dsp=d, variant=v)).values())
        out[v] = (count_params(desc), count_macs(desc, d))
    return out


class TestParameterCounts:
    def test_unified_minus_baseline_is_junction_widening(self):
        d = dsp.DspConfig()
        unified = ModelConfig(dsp=d, variant="unified")
        baseline = ModelConfig(dsp=d, variant="baseline")
        pu = count_params(list(build_layer_specs(unified).values()))
        pb = count_params(list(build_layer_specs(baseline).values()))
        junction = build_layer_specs(unified)["enc.junction.lin"]
        widening = 192 * junction.dims["out"] // junction.dims["groups"]
        assert pu - pb == widening
        # Both land on the same value at the complexity table's 0.01 M quantum.
        assert pu - pb < 5000

    def test_ordering_and_dual_spread(self):
        counts = default_counts()
        params = {v: c[0] for v, c in counts.items()}
        assert params["baseline"] <= params["unified"]
        assert params["unified"] < params["dual_erb"]
        assert params["unified"] < params["dual_df"]
        assert params["dual_erb"] == params["dual_df"]
        assert params["dual_df"] <= params["dual_both"]
        spread = abs(params["dual_erb"] - params["dual_both"]) / params["dual_both"]
        assert spread < 0.02

    def test_default_unified_near_reference_size(self):
        counts = default_counts()
        assert abs(counts["unified"][0] - 2.31e6) / 2.31e6 < 0.25

    def test_macs_ordering(self):
        counts = default_counts()
        macs = {v: c[1] for v, c in counts.items()}
        for dual in ("dual_erb", "dual_df", "dual_both"):
            assert macs["unified"] < macs[dual]
        duals = [macs[v] for v in ("dual_erb", "dual_df", "dual_both")]
        assert (max(duals) - min(duals)) / max(duals) < 0.02

    def test_same_seed_identical_params(self, tmp_path):
        from pse.container import save_container

        a = build_model(tiny_model_config("unified", seed=9))
        b = build_model(tiny_model_config("unified", seed=9))
        pa, pb = tmp_path / "a.pdf2", tmp_path / "b.pdf2"
        save_container(a.params, pa)
        save_container(b.params, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(variant="quad")
        with pytest.raises(ConfigurationError):
            ModelConfig(variant="unified", embedding_dim=128)
        with pytest.raises(ConfigurationError):
            ModelConfig(conv_channels=0)


class TestEmbeddingDataflow:
    def _spec(self, cfg, seconds=0.6, seed=3):
        d = cfg.dsp
        audio = noise_buffer(seconds, d.sample_rate, seed=seed)
        return dsp.stft_array(audio.samples.astype(np.float32), d.win, d.hop, d.n_fft)

    def test_dual_erb_taps_bit_invariant(self):
        model = build_model(tiny_model_config("dual_erb"))
        spec = self._spec(model.cfg)
        _, _, _, taps_a = model.enhance_spectrogram(spec, random_embedding(1))
        _, _, _, taps_b = model.enhance_spectrogram(spec, random_embedding(2))
        np.testing.assert_array_equal(taps_a[0], taps_b[0])
        np.testing.assert_array_equal(taps_a[1], taps_b[1])

    def test_dual_df_gains_bit_invariant(self):
        model = build_model(tiny_model_config("dual_df"))
        spec = self._spec(model.cfg)
        _, _, gains_a, _ = model.enhance_spectrogram(spec, random_embedding(1))
        _, _, gains_b, _ = model.enhance_spectrogram(spec, random_embedding(2))
        np.testing.assert_array_equal(gains_a, gains_b)

    @pytest.mark.parametrize("variant,check", [
        ("unified", "both"), ("dual_both", "both"),
        ("dual_erb", "gains"), ("dual_df", "taps"),
    ])
    def test_embedding_sensitive_paths(self, variant, check):
        model = build_model(tiny_model_config(variant))
        spec = self._spec(model.cfg)
        ra = model.enhance_spectrogram(spec, random_embedding(1))
        rb = model.enhance_spectrogram(spec, random_embedding(2))
        gains_diff = np.abs(ra[2] - rb[2]).max()
        taps_diff = max(np.abs(ra[3][0] - rb[3][0]).max(),
                        np.abs(ra[3][1] - rb[3][1]).max())
        if check in ("gains", "both"):
            assert gains_diff > 0
        if check in ("taps", "both"):
            assert taps_diff > 0
        out_diff = np.abs((ra[0] - rb[0])).max() + np.abs((ra[1] - rb[1])).max()
        assert out_diff > 0

    def test_gain_range(self):
        model = build_model(tiny_model_config("unified"))
        for seed in range(3):
            spec = self._spec(model.cfg, seed=seed)
            _, _, gains, _ = model.enhance_spectrogram(spec, random_embedding(seed))
            assert gains.min() >= 0.0 and gains.max() <= 1.0

    def test_bins_above_fdf_equal_stage1(self):
        model = build_model(tiny_model_config("unified"))
        d = model.cfg.dsp
        spec = self._spec(model.cfg)
        est_re, est_im, gains, _ = model.enhance_spectrogram(spec, random_embedding(0))
        per_bin = gains @ model.fb.spread_matrix().astype(np.float32)
        s1 = spec * per_bin
        np.testing.assert_array_equal(est_re[:, d.df_bins:], np.real(s1)[:, d.df_bins:])
        np.testing.assert_array_equal(est_im[:, d.df_bins:], np.imag(s1)[:, d.df_bins:])

    def test_embedding_requirements_enforced(self):
        model = build_model(tiny_model_config("unified"))
        audio = noise_buffer(0.3, 16000, seed=5)
        with pytest.raises(UsageError):
            model.enhance_offline(audio, None)
        baseline = build_model(tiny_model_config("baseline"))
        with pytest.raises(UsageError):
            baseline.enhance_offline(audio, random_embedding(0))


class TestEnhancement:
    def test_zero_in_zero_out_streaming(self):
        model = build_model(tiny_model_config("unified"))
        d = model.cfg.dsp
        state = model.new_state()
        emb = random_embedding(1)
        for _ in range(8):
            out = model.enhance_frame(state, np.zeros(d.bins, dtype=np.complex64), emb)
            np.testing.assert_array_equal(out, np.zeros(d.bins, dtype=np.complex64))

    def test_offline_output_length(self):
        model = build_model(tiny_model_config("unified"))
        for n in (16000, 16001, 15999, 8123):
            audio = noise_buffer(n / 16000.0, 16000, seed=2)
            out = model.enhance_offline(audio, random_embedding(0))
            assert out.samples.shape[0] == n

    def test_two_embeddings_differ_offline(self):
        model = build_model(tiny_model_config("unified"))
        audio = noise_buffer(0.5, 16000, seed=3)
        a = model.enhance_offline(audio, random_embedding(1))
        b = model.enhance_offline(audio, random_embedding(2))
        assert np.linalg.norm(a.samples - b.samples) > 0

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_streaming_equals_offline(self, variant):
        model = build_model(tiny_model_config(variant))
        emb = None if variant == "baseline" else random_embedding(7)
        for seed in (0, 1):
            audio = noise_buffer(1.5, 16000, seed=seed).astype(np.float32)
            off = model.enhance_offline(audio, emb)
            st = StreamingEnhancer(model, emb).process(audio)
            assert np.abs(off.samples - st.samples).max() < 1e-5

    def test_output_delay_is_lookahead(self):
        model = build_model(tiny_model_config("unified"))
        d = model.cfg.dsp
        state = model.new_state()
        emb = random_embedding(0)
        rng = np.random.default_rng(0)
        frame = (rng.standard_normal(d.bins) + 1j * rng.standard_normal(d.bins)).astype(np.complex64)
        outs = []
        for k in range(d.lookahead_frames + 1):
            outs.append(model.enhance_frame(state, frame, emb))
        for k in range(d.lookahead_frames):
            np.testing.assert_array_equal(outs[k], 0)
        assert np.any(outs[d.lookahead_frames] != 0)

    def test_state_isolation(self):
        model = build_model(tiny_model_config("unified"))
        d = model.cfg.dsp
        emb = random_embedding(0)
        rng = np.random.default_rng(1)
        frames = (rng.standard_normal((6, d.bins))
                  + 1j * rng.standard_normal((6, d.bins))).astype(np.complex64)
        s1, s2 = model.new_state(), model.new_state()
        outs1 = [model.enhance_frame(s1, f, emb) for f in frames]
        # interleave a second stream; it must not disturb the first
        s1b = model.new_state()
        outs1b = []
        for f in frames:
            outs1b.append(model.enhance_frame(s1b, f, emb))
            model.enhance_frame(s2, f[::-1].copy(), emb)
        for a, b in zip(outs1, outs1b):
            np.testing.assert_array_equal(a, b)

    def test_state_reset(self):
        model = build_model(tiny_model_config("unified"))
        d = model.cfg.dsp
        emb = random_embedding(0)
        state = model.new_state()
        rng = np.random.default_rng(2)
        frame = (rng.standard_normal(d.bins) + 1j * rng.standard_normal(d.bins)).astype(np.complex64)
        first = [model.enhance_frame(state, frame, emb) for _ in range(4)]
        state.reset()
        assert state.frame_index == 0
        second = [model.enhance_frame(state, frame, emb) for _ in range(4)]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)


class TestModelFiles:
    def test_save_load_roundtrip(self, tmp_path):
        model = build_model(tiny_model_config("dual_erb", seed=4))
        path = tmp_path / "model.pdf2"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.variant == "dual_erb"
        assert loaded.cfg.dsp.sample_rate == model.cfg.dsp.sample_rate
        audio = noise_buffer(0.4, 16000, seed=6)
        emb = random_embedding(3)
        a = model.enhance_offline(audio, emb)
        b = loaded.enhance_offline(audio, emb)
        np.testing.assert_allclose(a.samples, b.samples, atol=1e-6)

    def test_schema_version_rejected(self, tmp_path):
        from pse.container import load_container, save_container

        model = build_model(tiny_model_config("baseline"))
        path = tmp_path / "model.pdf2"
        save_model(model, path)
        store = load_container(path)
        store.metadata["schema_version"] = "99"
        save_container(store, path)
        with pytest.raises(FormatError):
            load_model(path)

    def test_missing_tensor_rejected(self, tmp_path):
        from pse.container import load_container, save_container

        model = build_model(tiny_model_config("baseline"))
        path = tmp_path / "model.pdf2"
        save_model(model, path)
        store = load_container(path)
        del store.tensors["dec.erb.out.bias"]
        save_container(store, path)
        with pytest.raises(DataError):
            load_model(path)

    def test_metadata_keys_present(self, tmp_path):
        from pse.container import load_container

        model = build_model(tiny_model_config("unified"))
        path = tmp_path / "model.pdf2"
        save_model(model, path)
        meta = load_container(path).metadata
        for key in ("variant", "sample_rate", "erb_bands", "f_df", "df_order",
                    "schema_version"):
            assert key in meta
