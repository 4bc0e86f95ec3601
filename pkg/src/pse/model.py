"""Dual-stage enhancement network with five speaker-integration variants.

Stage 1 predicts per-band gains over the ERB envelope; stage 2 predicts
complex deep-filter taps for the low spectrum. The encoder comes in a
unified form (one junction + one GRU) and a dual form (independent branch
encoders, each with its own GRU); the speaker embedding is concatenated at
the junction (unified) or at the branch linear of the chosen side (dual).
Decoders are branch-private: the ERB decoder sees only the ERB-path latent
and the DF decoder only the DF-path latent, which makes the embedding
dataflow of each variant exact and testable.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import dsp
from .audio_io import AudioBuffer
from .container import EMBEDDING_DIM, ParamStore, load_container, save_container
from .errors import ConfigurationError, DataError, DomainError, FormatError, UsageError
from .layers import LayerSpec, conv_out_freq, init_layer_params, layer_forward

VARIANTS = ("baseline", "unified", "dual_both", "dual_erb", "dual_df")
SCHEMA_VERSION = 1


@dataclass
class SpeakerEmbedding:
    """192-dim speaker vector; loaders L2-normalize on the way in."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.shape[0] != EMBEDDING_DIM:
            raise DomainError(
                f"embedding must have {EMBEDDING_DIM} dims, got {self.values.shape[0]}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DomainError("embedding contains non-finite values")

    @classmethod
    def load(cls, path) -> "SpeakerEmbedding":
        from .container import load_embedding

        return cls(load_embedding(path))


@dataclass(frozen=True)
class ModelConfig:
    dsp: dsp.DspConfig = field(default_factory=dsp.DspConfig)
    variant: str = "unified"
    conv_channels: int = 64
    erb_gru_hidden: int = 256
    df_gru_hidden: int = 256
    embedding_dim: int = EMBEDDING_DIM
    junction_groups: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; pick one of {VARIANTS}")
        for name in ("conv_channels", "erb_gru_hidden", "df_gru_hidden", "junction_groups"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.variant != "baseline" and self.embedding_dim != EMBEDDING_DIM:
            raise ConfigurationError(
                f"personalized variants require embedding_dim = {EMBEDDING_DIM}"
            )

    @property
    def wants_embedding(self) -> bool:
        return self.variant != "baseline"


def _largest_group(preferred: int, in_dim: int, out_dim: int) -> int:
    """Largest group count <= preferred dividing both dims (>= 1 always works)."""
    g = math.gcd(in_dim, out_dim)
    for cand in range(min(preferred, g), 0, -1):
        if g % cand == 0:
            return cand
    return 1


def _conv_chain(specs: list, prefix: str, in_ch: int, channels: int, in_freq: int) -> int:
    """Append 3 stride-2 causal conv layers + relus; return the final freq dim."""
    freq = in_freq
    for i in range(3):
        spec = LayerSpec("conv2d", f"{prefix}.conv{i}", {
            "in_ch": in_ch if i == 0 else channels, "out_ch": channels,
            "k_freq": 3, "k_time": 2, "stride_freq": 2, "pad_freq": 1,
            "in_freq": freq,
        })
        specs.append(spec)
        specs.append(LayerSpec("pointwise", f"{prefix}.relu{i}", {"fn": "relu"}))
        freq = conv_out_freq(spec)
    return freq


def build_layer_specs(cfg: ModelConfig) -> dict:
    """Ordered name -> LayerSpec map for one variant."""
    d = cfg.dsp
    c = cfg.conv_channels
    he, hd = cfg.erb_gru_hidden, cfg.df_gru_hidden
    emb = cfg.embedding_dim if cfg.wants_embedding else 0
    specs: list[LayerSpec] = []
    erb_freq = _conv_chain(specs, "enc.erb", 1, c, d.erb_bands)
    df_freq = _conv_chain(specs, "enc.df", 2, c, d.df_bins)
    erb_flat = c * erb_freq
    df_flat = c * df_freq

    def lin(name, in_dim, out_dim, grouped=False):
        groups = _largest_group(cfg.junction_groups, in_dim, out_dim) if grouped else 1
        specs.append(LayerSpec("grouped_linear", name,
                               {"in": in_dim, "out": out_dim, "groups": groups, "bias": 1}))
        specs.append(LayerSpec("pointwise", name + ".relu", {"fn": "relu"}))

    if cfg.variant in ("baseline", "unified"):
        specs.append(LayerSpec("concat", "enc.junction.cat"))
        j_emb = emb if cfg.variant == "unified" else 0
        lin("enc.junction.lin", erb_flat + df_flat + j_emb, he, grouped=True)
        specs.append(LayerSpec("gru_cell", "enc.gru", {"in": he, "hidden": he}))
        df_latent = he
    else:
        erb_emb = emb if cfg.variant in ("dual_both", "dual_erb") else 0
        df_emb = emb if cfg.variant in ("dual_both", "dual_df") else 0
        specs.append(LayerSpec("concat", "enc.erb.cat"))
        lin("enc.erb.lin", erb_flat + erb_emb, he, grouped=True)
        specs.append(LayerSpec("gru_cell", "enc.erb.gru", {"in": he, "hidden": he}))
        specs.append(LayerSpec("concat", "enc.df.cat"))
        lin("enc.df.lin", df_flat + df_emb, hd, grouped=True)
        specs.append(LayerSpec("gru_cell", "enc.df.gru", {"in": hd, "hidden": hd}))
        df_latent = hd

    specs.append(LayerSpec("gru_cell", "dec.erb.gru", {"in": he, "hidden": he}))
    lin("dec.erb.lin0", he, he)
    specs.append(LayerSpec("grouped_linear", "dec.erb.out",
                           {"in": he, "out": d.erb_bands, "groups": 1, "bias": 1}))
    specs.append(LayerSpec("pointwise", "dec.erb.sigmoid", {"fn": "sigmoid"}))

    specs.append(LayerSpec("gru_cell", "dec.df.gru", {"in": df_latent, "hidden": hd}))
    lin("dec.df.lin0", hd, 2 * hd)
    lin("dec.df.lin1", 2 * hd, 2 * hd)
    specs.append(LayerSpec("grouped_linear", "dec.df.out",
                           {"in": 2 * hd, "out": d.df_order * 2 * d.df_bins,
                            "groups": 1, "bias": 1}))
    return {s.name: s for s in specs}


def init_params(cfg: ModelConfig, layer_specs: dict) -> ParamStore:
    rng = np.random.default_rng(cfg.seed)
    store = ParamStore()
    for spec in layer_specs.values():
        init_layer_params(spec, store, rng)
    store.metadata.update(model_metadata(cfg))
    return store


def model_metadata(cfg: ModelConfig) -> dict:
    d = cfg.dsp
    return {
        "schema_version": str(SCHEMA_VERSION),
        "variant": cfg.variant,
        "sample_rate": str(d.sample_rate),
        "erb_bands": str(d.erb_bands),
        "f_df": repr(d.f_df),
        "df_order": str(d.df_order),
        "win_ms": repr(d.win_ms),
        "overlap": repr(d.overlap),
        "fft_size": "" if d.fft_size is None else str(d.fft_size),
        "norm_tau_s": repr(d.norm_tau_s),
        "lookahead_frames": str(d.lookahead_frames),
        "conv_channels": str(cfg.conv_channels),
        "erb_gru_hidden": str(cfg.erb_gru_hidden),
        "df_gru_hidden": str(cfg.df_gru_hidden),
        "embedding_dim": str(cfg.embedding_dim),
        "junction_groups": str(cfg.junction_groups),
        "seed": str(cfg.seed),
    }


def config_from_metadata(meta: dict) -> ModelConfig:
    try:
        if int(meta["schema_version"]) != SCHEMA_VERSION:
            raise FormatError(
                f"unsupported model schema_version {meta['schema_version']}"
            )
        dcfg = dsp.DspConfig(
            sample_rate=int(meta["sample_rate"]),
            win_ms=float(meta["win_ms"]),
            overlap=float(meta["overlap"]),
            fft_size=int(meta["fft_size"]) if meta.get("fft_size") else None,
            lookahead_frames=int(meta["lookahead_frames"]),
            erb_bands=int(meta["erb_bands"]),
            f_df=float(meta["f_df"]),
            df_order=int(meta["df_order"]),
            norm_tau_s=float(meta.get("norm_tau_s", 1.0)),
        )
        return ModelConfig(
            dsp=dcfg,
            variant=meta["variant"],
            conv_channels=int(meta["conv_channels"]),
            erb_gru_hidden=int(meta["erb_gru_hidden"]),
            df_gru_hidden=int(meta["df_gru_hidden"]),
            embedding_dim=int(meta["embedding_dim"]),
            junction_groups=int(meta["junction_groups"]),
            seed=int(meta["seed"]),
        )
    except KeyError as exc:
        raise FormatError(f"model metadata missing key {exc}") from exc


@dataclass
class ModelState:
    """Per-stream state; owned by exactly one stream."""

    conv_bufs: dict = field(default_factory=dict)
    gru_h: dict = field(default_factory=dict)
    norm: dsp.NormState = field(default_factory=dsp.NormState)
    stage1: deque = field(default_factory=deque)
    taps: deque = field(default_factory=deque)
    frame_index: int = 0

    def reset(self) -> None:
        self.conv_bufs.clear()
        self.gru_h.clear()
        self.norm.reset()
        self.stage1.clear()
        self.taps.clear()
        self.frame_index = 0


class Model:
    """Layer graph + parameters. Immutable once built; share freely across streams."""

    def __init__(self, cfg: ModelConfig, params: ParamStore):
        self.cfg = cfg
        self.layers = build_layer_specs(cfg)
        self.params = params
        self.fb = dsp.build_erb_filterbank(cfg.dsp)
        self._spread = self.fb.spread_matrix()
        self._mean = self.fb.mean_matrix()
        self._mean32 = self._mean.astype(np.float32)
        self._band_of_bin = self.fb.band_of_bin()
        self._runtime = None
        self._validate_params()

    def _validate_params(self):
        from .layers import param_shapes

        for spec in self.layers.values():
            for suffix, shape in param_shapes(spec).items():
                name = f"{spec.name}.{suffix}"
                if name not in self.params:
                    raise DataError(f"model parameters missing tensor {name!r}")
                if self.params[name].shape != shape:
                    raise DataError(
                        f"tensor {name!r} has shape {self.params[name].shape}, expected {shape}"
                    )

    @property
    def variant(self) -> str:
        return self.cfg.variant

    @property
    def wants_embedding(self) -> bool:
        return self.cfg.wants_embedding

    def description(self) -> list:
        """Layer list for the complexity counters."""
        return list(self.layers.values())

    def runtime_params(self) -> dict:
        """float32 parameter copies for the inference path."""
        if self._runtime is None:
            self._runtime = {k: v.astype(np.float32) for k, v in self.params.tensors.items()}
        return self._runtime

    def new_state(self) -> ModelState:
        return ModelState()

    def _check_embedding(self, emb):
        if self.wants_embedding and emb is None:
            raise UsageError(f"variant {self.variant!r} requires a speaker embedding")
        if not self.wants_embedding and emb is not None:
            raise UsageError("baseline variant takes no speaker embedding")

    # ------------------------------------------------------------------
    # Batch forward (shared by float32 inference and float64 training graphs)

    def forward_sequence(self, erb_vals, comp_vals, emb_values, params):
        """Run the network over a whole feature sequence.

        erb_vals: [T, erb_bands] real; comp_vals: [T, df_bins] complex;
        emb_values: [192] or None; params: name -> ndarray or autodiff Var.
        Returns (gains [T, B], taps_re [T, N, df], taps_im [T, N, df]).
        """
        d = self.cfg.dsp
        t = erb_vals.shape[0]
        dtype = erb_vals.dtype

        def conv_stack(prefix, x):
            for i in range(3):
                spec = self.layers[f"{prefix}.conv{i}"]
                x = ad.relu(ad.conv2d(
                    x, params[f"{spec.name}.weight"], params[f"{spec.name}.bias"],
                    stride_freq=spec.dims["stride_freq"], pad_freq=spec.dims["pad_freq"],
                ))
            out_ch = spec.dims["out_ch"]
            return ad.reshape(x, (t, out_ch * conv_out_freq(spec)))

        def lin(name, x):
            spec = self.layers[name]
            return ad.relu(ad.grouped_linear(
                x, params[f"{name}.weight"], params[f"{name}.bias"], spec.dims["groups"]
            ))

        def gru(name, x):
            return ad.gru_sequence(
                x, params[f"{name}.weight_ih"], params[f"{name}.weight_hh"],
                params[f"{name}.bias_ih"], params[f"{name}.bias_hh"],
            )

        erb_in = np.ascontiguousarray(erb_vals)[:, None, :]
        df_in = np.stack([comp_vals.real.astype(dtype), comp_vals.imag.astype(dtype)], axis=1)
        erb_flat = conv_stack("enc.erb", erb_in)
        df_flat = conv_stack("enc.df", df_in)
        emb_t = None
        if emb_values is not None:
            emb_t = np.broadcast_to(np.asarray(emb_values, dtype=dtype), (t, emb_values.shape[0]))

        if self.variant in ("baseline", "unified"):
            parts = [erb_flat, df_flat]
            if self.variant == "unified":
                parts.append(emb_t)
            latent = gru("enc.gru", lin("enc.junction.lin", ad.concat(parts, axis=1)))
            erb_latent = df_latent = latent
        else:
            erb_parts = [erb_flat]
            df_parts = [df_flat]
            if self.variant in ("dual_both", "dual_erb"):
                erb_parts.append(emb_t)
            if self.variant in ("dual_both", "dual_df"):
                df_parts.append(emb_t)
            erb_latent = gru("enc.erb.gru", lin("enc.erb.lin", ad.concat(erb_parts, axis=1)))
            df_latent = gru("enc.df.gru", lin("enc.df.lin", ad.concat(df_parts, axis=1)))

        g = gru("dec.erb.gru", erb_latent)
        g = lin("dec.erb.lin0", g)
        spec = self.layers["dec.erb.out"]
        gains = ad.sigmoid(ad.grouped_linear(
            g, params["dec.erb.out.weight"], params["dec.erb.out.bias"], spec.dims["groups"]
        ))

        f = gru("dec.df.gru", df_latent)
        f = lin("dec.df.lin1", lin("dec.df.lin0", f))
        spec = self.layers["dec.df.out"]
        taps = ad.grouped_linear(
            f, params["dec.df.out.weight"], params["dec.df.out.bias"], spec.dims["groups"]
        )
        taps = ad.reshape(taps, (t, d.df_order, 2, d.df_bins))
        taps_re = ad.reshape(ad.narrow(taps, 2, 0, 1), (t, d.df_order, d.df_bins))
        taps_im = ad.reshape(ad.narrow(taps, 2, 1, 1), (t, d.df_order, d.df_bins))
        return gains, taps_re, taps_im

    def apply_enhancement(self, spec_re, spec_im, gains, taps_re, taps_im):
        """Stage 1 (band gains) then stage 2 (deep filter) on re/im planes."""
        d = self.cfg.dsp
        df, n = d.df_bins, d.df_order
        spread = self._spread.astype(np.asarray(ad.val(spec_re)).dtype)
        per_bin = ad.matmul(gains, spread)
        s1_re = ad.mul(per_bin, spec_re)
        s1_im = ad.mul(per_bin, spec_im)
        low_re = ad.narrow(s1_re, 1, 0, df)
        low_im = ad.narrow(s1_im, 1, 0, df)
        t = ad.val(spec_re).shape[0]
        acc_re = acc_im = None
        for i in range(n):
            offset = i - (n - 1) + d.lookahead_frames
            x_re = ad.shift_rows(low_re, offset)
            x_im = ad.shift_rows(low_im, offset)
            t_re = ad.reshape(ad.narrow(taps_re, 1, i, 1), (t, df))
            t_im = ad.reshape(ad.narrow(taps_im, 1, i, 1), (t, df))
            y_re, y_im = ad.cmul(t_re, t_im, x_re, x_im)
            acc_re = y_re if acc_re is None else ad.add(acc_re, y_re)
            acc_im = y_im if acc_im is None else ad.add(acc_im, y_im)
        bins = ad.val(spec_re).shape[1]
        hi_re = ad.narrow(s1_re, 1, df, bins - df)
        hi_im = ad.narrow(s1_im, 1, df, bins - df)
        est_re = ad.concat([acc_re, hi_re], axis=1)
        est_im = ad.concat([acc_im, hi_im], axis=1)
        return est_re, est_im

    def features(self, spec_values: np.ndarray, state: dsp.NormState):
        """Normalized ERB + complex features for a spectrogram array."""
        d = self.cfg.dsp
        cspec = dsp.ComplexSpectrogram(spec_values)
        erb = dsp.erb_features(cspec, self.fb, state, d).values
        comp = dsp.complex_features(cspec, d, state).values
        return erb, comp

    def enhance_spectrogram(self, spec_values: np.ndarray, emb,
                            params: dict | None = None):
        """Offline enhancement of a complex spectrogram array (index-aligned)."""
        self._check_embedding(emb)
        if params is None:
            params = self.runtime_params()
        state = dsp.NormState()
        erb_vals, comp_vals = self.features(spec_values, state)
        emb_values = emb.values if emb is not None else None
        gains, taps_re, taps_im = self.forward_sequence(erb_vals, comp_vals, emb_values, params)
        dtype = erb_vals.dtype
        est_re, est_im = self.apply_enhancement(
            spec_values.real.astype(dtype), spec_values.imag.astype(dtype),
            gains, taps_re, taps_im,
        )
        return est_re, est_im, gains, (taps_re, taps_im)

    def enhance_offline(self, audio: AudioBuffer, emb: SpeakerEmbedding | None = None) -> AudioBuffer:
        """wav -> wav offline path (float32); output length equals input length."""
        d = self.cfg.dsp
        if audio.sample_rate != d.sample_rate:
            raise DataError(
                f"audio at {audio.sample_rate} Hz but model expects {d.sample_rate} Hz"
            )
        x32 = audio.samples.astype(np.float32)
        spec = dsp.stft_array(x32, d.win, d.hop, d.n_fft)
        est_re, est_im, _, _ = self.enhance_spectrogram(spec, emb)
        est = est_re.astype(np.float64) + 1j * est_im.astype(np.float64)
        out = dsp.istft_array(est, d.win, d.hop, d.n_fft)
        return AudioBuffer(out[: x32.shape[0]].astype(np.float32), d.sample_rate)

    # ------------------------------------------------------------------
    # Streaming path

    def enhance_frame(self, state: ModelState, frame: np.ndarray,
                      emb: SpeakerEmbedding | None = None) -> np.ndarray:
        """Process one spectrum frame; returns the enhanced frame delayed by
        lookahead_frames (zeros until the pipeline fills)."""
        self._check_embedding(emb)
        d = self.cfg.dsp
        if frame.shape != (d.bins,):
            raise DomainError(f"frame must have shape ({d.bins},), got {frame.shape}")
        frame = frame.astype(np.complex64)
        params = self.runtime_params()
        alpha = np.float32(d.norm_alpha)

        power = (frame.real ** 2 + frame.imag ** 2).astype(np.float32)
        vals = np.log10(self._mean32 @ power + np.float32(dsp.EPS))
        if state.norm.erb_mean is None:
            state.norm.erb_mean = vals.copy()
        else:
            state.norm.erb_mean = alpha * state.norm.erb_mean + (np.float32(1.0) - alpha) * vals
        erb_f = vals - state.norm.erb_mean

        low = frame[: d.df_bins]
        frame_ms = float(np.mean(low.real ** 2 + low.imag ** 2))
        if state.norm.comp_power is None:
            state.norm.comp_power = frame_ms
        else:
            state.norm.comp_power = float(alpha) * state.norm.comp_power + (1.0 - float(alpha)) * frame_ms
        comp = low / np.float32(math.sqrt(state.norm.comp_power) + dsp.EPS)

        emb32 = None
        if emb is not None:
            emb32 = emb.values.astype(np.float32)
        gains, taps = self._frame_forward(state, erb_f, comp, emb32, params)

        stage1 = frame * gains[self._band_of_bin]
        maxlen = d.df_order - 1 + d.lookahead_frames
        state.stage1.append(stage1)
        if len(state.stage1) > max(maxlen, d.df_order):
            state.stage1.popleft()
        state.taps.append(taps)
        if len(state.taps) > d.lookahead_frames + 1:
            state.taps.popleft()

        t = state.frame_index
        state.frame_index += 1
        m = t - d.lookahead_frames
        if m < 0:
            return np.zeros(d.bins, dtype=np.complex64)
        taps_m = state.taps[0]
        window = list(state.stage1)[-d.df_order:]
        while len(window) < d.df_order:
            window.insert(0, np.zeros(d.bins, dtype=np.complex64))
        acc = np.zeros(d.df_bins, dtype=np.complex64)
        for i in range(d.df_order):
            acc += taps_m[i] * window[i][: d.df_bins]
        out = state.stage1[-(d.lookahead_frames + 1)].copy()
        out[: d.df_bins] = acc
        return out

    def _frame_forward(self, state: ModelState, erb_f, comp, emb32, params):
        """Per-frame network pass via layer_forward, mutating stream state."""
        d = self.cfg.dsp

        def conv_stack(prefix, x):
            for i in range(3):
                name = f"{prefix}.conv{i}"
                spec = self.layers[name]
                x, state.conv_bufs[name] = layer_forward(
                    spec, params, [x], state.conv_bufs.get(name)
                )
                x = np.maximum(x, np.float32(0.0))
            return x.reshape(-1)

        def lin(name, x):
            out, _ = layer_forward(self.layers[name], params, [x])
            return np.maximum(out, np.float32(0.0))

        def gru(name, x):
            h, new = layer_forward(self.layers[name], params, [x], state.gru_h.get(name))
            state.gru_h[name] = new
            return h

        erb_flat = conv_stack("enc.erb", erb_f[None, :])
        df_flat = conv_stack("enc.df", np.stack([comp.real, comp.imag], axis=0))

        if self.variant in ("baseline", "unified"):
            parts = [erb_flat, df_flat]
            if self.variant == "unified":
                parts.append(emb32)
            latent = gru("enc.gru", lin("enc.junction.lin", np.concatenate(parts)))
            erb_latent = df_latent = latent
        else:
            erb_parts = [erb_flat]
            df_parts = [df_flat]
            if self.variant in ("dual_both", "dual_erb"):
                erb_parts.append(emb32)
            if self.variant in ("dual_both", "dual_df"):
                df_parts.append(emb32)
            erb_latent = gru("enc.erb.gru", lin("enc.erb.lin", np.concatenate(erb_parts)))
            df_latent = gru("enc.df.gru", lin("enc.df.lin", np.concatenate(df_parts)))

        g = gru("dec.erb.gru", erb_latent)
        g = lin("dec.erb.lin0", g)
        g, _ = layer_forward(self.layers["dec.erb.out"], params, [g])
        gains = 1.0 / (1.0 + np.exp(-g))

        f = gru("dec.df.gru", df_latent)
        f = lin("dec.df.lin1", lin("dec.df.lin0", f))
        f, _ = layer_forward(self.layers["dec.df.out"], params, [f])
        taps = f.reshape(d.df_order, 2, d.df_bins)
        return gains.astype(np.float32), (taps[:, 0, :] + 1j * taps[:, 1, :]).astype(np.complex64)


class StreamingEnhancer:
    """Sample-in/sample-out wrapper around the frame-level streaming model."""

    def __init__(self, model: Model, emb: SpeakerEmbedding | None = None):
        self.model = model
        self.emb = emb
        d = model.cfg.dsp
        self.win, self.hop, self.n_fft = d.win, d.hop, d.n_fft
        self.window = dsp.hann_window(self.win).astype(np.float32)
        self.state = model.new_state()
        self.in_buf = np.zeros(self.win, dtype=np.float32)
        self.ola = np.zeros(self.win, dtype=np.float64)
        wsq = dsp.hann_window(self.win) ** 2
        env = wsq[: self.hop] + wsq[self.hop: 2 * self.hop] if self.win == 2 * self.hop else None
        if env is None:
            env = dsp.synthesis_envelope(3, self.win, self.hop)[self.hop: 2 * self.hop]
        self.env_interior = np.maximum(env, dsp.ENV_FLOOR)
        self.env_tail = np.maximum(wsq[self.hop:], dsp.ENV_FLOOR)
        self.out_frames = 0

    def push_hop(self, samples: np.ndarray) -> np.ndarray | None:
        """Feed exactly one hop of samples; returns one hop of enhanced audio
        once the lookahead pipeline has filled, else None."""
        self.in_buf = np.concatenate([self.in_buf[self.hop:], samples.astype(np.float32)])
        spec = np.fft.rfft(self.in_buf * self.window, n=self.n_fft)
        out_frame = self.model.enhance_frame(self.state, spec, self.emb)
        if self.state.frame_index <= self.model.cfg.dsp.lookahead_frames:
            return None
        return self._synthesize(out_frame)

    def _synthesize(self, spec_frame: np.ndarray) -> np.ndarray:
        frame = np.fft.irfft(spec_frame, n=self.n_fft)[: self.win] * self.window
        self.ola += frame
        chunk = self.ola[: self.hop] / self.env_interior
        self.ola = np.concatenate([self.ola[self.hop:], np.zeros(self.hop)])
        self.out_frames += 1
        # The first synthesized chunk predates the signal (analysis lead-in).
        if self.out_frames == 1:
            return None
        return chunk

    def drain(self) -> list:
        """Flush the lookahead pipeline with zero spectra (matching the
        offline zero-fill convention) and emit the single-coverage tail."""
        d = self.model.cfg.dsp
        chunks = []
        for _ in range(d.lookahead_frames):
            out_frame = self.model.enhance_frame(
                self.state, np.zeros(d.bins, dtype=np.complex64), self.emb
            )
            if self.state.frame_index <= d.lookahead_frames:
                continue
            chunk = self._synthesize(out_frame)
            if chunk is not None:
                chunks.append(chunk)
        tail = self.ola[: self.win - self.hop] / self.env_tail
        chunks.append(tail[: self.hop])
        return chunks

    def process(self, audio: AudioBuffer) -> AudioBuffer:
        """Stream a whole clip through and return the aligned enhancement."""
        d = self.model.cfg.dsp
        n = audio.samples.shape[0]
        frames = dsp.frame_count(n, self.hop)
        x = np.concatenate([
            audio.samples.astype(np.float32),
            np.zeros(frames * self.hop - n, dtype=np.float32),
        ])
        chunks = []
        for k in range(frames):
            out = self.push_hop(x[k * self.hop:(k + 1) * self.hop])
            if out is not None:
                chunks.append(out)
        chunks.extend(self.drain())
        out = np.concatenate(chunks)[:n].astype(np.float32)
        return AudioBuffer(out, d.sample_rate)


def build_model(cfg: ModelConfig) -> Model:
    """Construct the layer graph and freshly initialized parameters."""
    specs = build_layer_specs(cfg)
    params = init_params(cfg, specs)
    return Model(cfg, params)


def save_model(model: Model, path, params: ParamStore | None = None) -> None:
    """Persist as a float32 container with the model metadata keys."""
    store = (params or model.params).astype(np.float32)
    store.metadata = model_metadata(model.cfg)
    save_container(store, path)


def load_model(path) -> Model:
    store = load_container(path)
    cfg = config_from_metadata(store.metadata)
    return Model(cfg, store)
