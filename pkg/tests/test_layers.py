import numpy as np
import pytest

from pse import dsp
from pse.container import ParamStore
from pse.errors import ConfigurationError, DomainError
from pse.layers import (
    LayerSpec, count_macs, count_params, init_layer_params, layer_forward,
)


def make_spec(kind, name="t", **dims):
    return LayerSpec(kind, name, dims)


class TestCounts:
    def test_grouped_linear_params(self):
        spec = make_spec("grouped_linear", **{"in": 192, "out": 64, "groups": 1, "bias": 1})
        assert count_params([spec]) == 192 * 64 + 64 == 12352

    def test_gru_params(self):
        spec = make_spec("gru_cell", **{"in": 64, "hidden": 128})
        assert count_params([spec]) == 3 * (64 * 128 + 128 * 128 + 2 * 128) == 74496

    def test_empty_model(self):
        assert count_params([]) == 0
        assert count_macs([], dsp.DspConfig()) == 0

    def test_linear_macs_at_100fps(self):
        spec = make_spec("grouped_linear", **{"in": 192, "out": 64, "groups": 1, "bias": 1})
        assert count_macs([spec], dsp.DspConfig()) == 12288 * 100 == 1228800

    def test_gru_macs_quadratic_in_hidden(self):
        cfg = dsp.DspConfig()
        small = make_spec("gru_cell", **{"in": 32, "hidden": 64})
        big = make_spec("gru_cell", **{"in": 32, "hidden": 128})
        ratio = count_macs([big], cfg) / count_macs([small], cfg)
        assert 3.0 < ratio < 4.0  # quadratic recurrent term dominates

    def test_conv_params_and_macs(self):
        spec = make_spec("conv2d", in_ch=2, out_ch=8, k_freq=3, k_time=2,
                         stride_freq=2, pad_freq=1, in_freq=100)
        assert count_params([spec]) == 8 * 2 * 3 * 2 + 8
        assert count_macs([spec], dsp.DspConfig()) == 8 * 50 * 2 * 6 * 100

    def test_pointwise_and_concat_are_free(self):
        specs = [make_spec("pointwise", fn="relu"), make_spec("concat")]
        assert count_params(specs) == 0
        assert count_macs(specs, dsp.DspConfig()) == 0

    def test_invalid_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            make_spec("dropout")
        with pytest.raises(ConfigurationError):
            make_spec("pointwise", fn="selu")


class TestLayerForward:
    def test_grouped_linear_identity(self):
        spec = make_spec("grouped_linear", name="lin",
                         **{"in": 6, "out": 6, "groups": 1, "bias": 1})
        params = {"lin.weight": np.eye(6)[None], "lin.bias": np.zeros(6)}
        x = np.arange(6.0)
        out, state = layer_forward(spec, params, [x])
        np.testing.assert_array_equal(out, x)
        assert state is None

    def test_gru_zero_weights_zero_output(self):
        spec = make_spec("gru_cell", name="g", **{"in": 3, "hidden": 4})
        params = {"g.weight_ih": np.zeros((12, 3)), "g.weight_hh": np.zeros((12, 4)),
                  "g.bias_ih": np.zeros(12), "g.bias_hh": np.zeros(12)}
        out, h = layer_forward(spec, params, [np.ones(3)], None)
        np.testing.assert_array_equal(out, np.zeros(4))
        np.testing.assert_array_equal(h, np.zeros(4))

    def test_conv_1x1_identity(self):
        spec = make_spec("conv2d", name="c", in_ch=1, out_ch=1, k_freq=1, k_time=1,
                         stride_freq=1, pad_freq=0, in_freq=5)
        params = {"c.weight": np.ones((1, 1, 1, 1)), "c.bias": np.zeros(1)}
        x = np.arange(5.0)[None, :]
        out, _ = layer_forward(spec, params, [x])
        np.testing.assert_array_equal(out, x)

    def test_conv_streaming_matches_batch(self):
        from pse import autodiff as ad

        rng = np.random.default_rng(0)
        t, in_ch, freq, out_ch = 7, 2, 10, 3
        spec = make_spec("conv2d", name="c", in_ch=in_ch, out_ch=out_ch, k_freq=3,
                         k_time=2, stride_freq=2, pad_freq=1, in_freq=freq)
        w = rng.standard_normal((out_ch, in_ch, 3, 2))
        b = rng.standard_normal(out_ch)
        params = {"c.weight": w, "c.bias": b}
        x = rng.standard_normal((t, in_ch, freq))
        batch = ad.conv2d(x, w, b, stride_freq=2, pad_freq=1)
        state = None
        for k in range(t):
            out, state = layer_forward(spec, params, [x[k]], state)
            np.testing.assert_allclose(out, batch[k], atol=1e-12)

    def test_gru_streaming_matches_sequence(self):
        from pse import autodiff as ad

        rng = np.random.default_rng(1)
        t, nin, hidden = 9, 4, 5
        spec = make_spec("gru_cell", name="g", **{"in": nin, "hidden": hidden})
        params = {"g.weight_ih": rng.standard_normal((15, nin)),
                  "g.weight_hh": rng.standard_normal((15, hidden)),
                  "g.bias_ih": rng.standard_normal(15),
                  "g.bias_hh": rng.standard_normal(15)}
        x = rng.standard_normal((t, nin))
        seq = ad.gru_sequence(x, params["g.weight_ih"], params["g.weight_hh"],
                              params["g.bias_ih"], params["g.bias_hh"])
        h = None
        for k in range(t):
            out, h = layer_forward(spec, params, [x[k]], h)
            np.testing.assert_allclose(out, seq[k], atol=1e-12)

    def test_shape_mismatch_raises(self):
        spec = make_spec("grouped_linear", name="lin",
                         **{"in": 6, "out": 6, "groups": 1, "bias": 1})
        params = {"lin.weight": np.eye(6)[None], "lin.bias": np.zeros(6)}
        with pytest.raises(DomainError):
            layer_forward(spec, params, [np.zeros(5)])


class TestInit:
    def test_seeded_init_deterministic(self):
        spec = make_spec("gru_cell", name="g", **{"in": 8, "hidden": 16})
        stores = []
        for _ in range(2):
            store = ParamStore()
            init_layer_params(spec, store, np.random.default_rng(42))
            stores.append(store)
        for name in stores[0].names():
            np.testing.assert_array_equal(stores[0][name], stores[1][name])

    def test_init_bounds(self):
        spec = make_spec("grouped_linear", name="lin",
                         **{"in": 100, "out": 50, "groups": 2, "bias": 1})
        store = ParamStore()
        init_layer_params(spec, store, np.random.default_rng(0))
        bound = np.sqrt(1.0 / 50)  # fan_in per group
        assert np.abs(store["lin.weight"]).max() <= bound
