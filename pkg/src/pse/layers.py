"""Layer specifications, per-frame forward, parameter init, and complexity counters."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from . import autodiff as ad
from .container import ParamStore
from .errors import ConfigurationError, DomainError

KINDS = ("conv2d", "grouped_linear", "gru_cell", "pointwise", "concat")
NONLINEARITIES = ("sigmoid", "tanh", "relu")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the model. `dims` is kind-specific:

    conv2d:         in_ch, out_ch, k_freq, k_time, stride_freq, pad_freq, in_freq
    grouped_linear: in, out, groups, bias (0/1)
    gru_cell:       in, hidden
    pointwise:      fn (one of sigmoid/tanh/relu)
    concat:         (no dims)
    """

    kind: str
    name: str
    dims: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if not isinstance(self.dims, MappingProxyType):
            object.__setattr__(self, "dims", MappingProxyType(dict(self.dims)))
        for key, value in self.dims.items():
            if key == "fn":
                if value not in NONLINEARITIES:
                    raise ConfigurationError(f"unknown nonlinearity {value!r}")
            elif key in ("pad_freq", "bias"):
                if value < 0:
                    raise ConfigurationError(f"{self.name}: {key} must be >= 0")
            elif value <= 0:
                raise ConfigurationError(f"{self.name}: {key} must be positive")


def conv_out_freq(spec: LayerSpec) -> int:
    d = spec.dims
    return ad.conv_out_freq(d["in_freq"], d["k_freq"], d["stride_freq"], d["pad_freq"])


def param_shapes(spec: LayerSpec) -> dict:
    """Trainable tensor shapes for one layer, keyed by suffix."""
    d = spec.dims
    if spec.kind == "conv2d":
        shapes = {"weight": (d["out_ch"], d["in_ch"], d["k_freq"], d["k_time"]),
                  "bias": (d["out_ch"],)}
    elif spec.kind == "grouped_linear":
        g = d["groups"]
        if d["in"] % g or d["out"] % g:
            raise ConfigurationError(
                f"{spec.name}: groups {g} must divide in={d['in']} and out={d['out']}"
            )
        shapes = {"weight": (g, d["in"] // g, d["out"] // g)}
        if d.get("bias", 1):
            shapes["bias"] = (d["out"],)
    elif spec.kind == "gru_cell":
        h = d["hidden"]
        shapes = {"weight_ih": (3 * h, d["in"]), "weight_hh": (3 * h, h),
                  "bias_ih": (3 * h,), "bias_hh": (3 * h,)}
    else:
        shapes = {}
    return shapes


def init_layer_params(spec: LayerSpec, store: ParamStore, rng: np.random.Generator) -> None:
    """Uniform +-sqrt(1/fan_in) init, drawn in a fixed order."""
    d = spec.dims
    if spec.kind == "conv2d":
        fan_in = {"weight": d["in_ch"] * d["k_freq"] * d["k_time"]}
    elif spec.kind == "grouped_linear":
        fan_in = {"weight": d["in"] // d["groups"]}
    elif spec.kind == "gru_cell":
        fan_in = {"weight_ih": d["in"], "weight_hh": d["hidden"]}
    else:
        return
    default_fan = min(fan_in.values())
    for suffix, shape in param_shapes(spec).items():
        bound = np.sqrt(1.0 / fan_in.get(suffix, default_fan))
        store.add(f"{spec.name}.{suffix}", rng.uniform(-bound, bound, size=shape))


def layer_param_count(spec: LayerSpec) -> int:
    return sum(int(np.prod(shape)) for shape in param_shapes(spec).values())


def count_params(model_description) -> int:
    """Exact trainable scalar count over a list of LayerSpec."""
    return sum(layer_param_count(spec) for spec in model_description)


def layer_macs_per_frame(spec: LayerSpec) -> int:
    d = spec.dims
    if spec.kind == "conv2d":
        return d["out_ch"] * conv_out_freq(spec) * d["in_ch"] * d["k_freq"] * d["k_time"]
    if spec.kind == "grouped_linear":
        return d["in"] * d["out"] // d["groups"]
    if spec.kind == "gru_cell":
        return 3 * (d["in"] * d["hidden"] + d["hidden"] * d["hidden"])
    return 0


def count_macs(model_description, cfg) -> int:
    """Analytic multiply-accumulates per second of audio at cfg's frame rate."""
    per_frame = sum(layer_macs_per_frame(spec) for spec in model_description)
    return int(round(per_frame * cfg.frames_per_second))


def _params_for(spec: LayerSpec, params) -> list:
    return [params[f"{spec.name}.{suffix}"] for suffix in param_shapes(spec)]


def layer_forward(spec: LayerSpec, params, inputs: list,
                  recurrent_state: np.ndarray | None = None):
    """Single-frame forward pass; returns (output, new_recurrent_state).

    conv2d consumes one frame [in_ch, F] and keeps the previous k_time-1
    frames in recurrent_state; gru_cell keeps its hidden vector. Stateless
    kinds return None as the new state.
    """
    if spec.kind == "conv2d":
        x = inputs[0]
        d = spec.dims
        if x.shape != (d["in_ch"], d["in_freq"]):
            raise DomainError(
                f"{spec.name}: frame shape {x.shape} != {(d['in_ch'], d['in_freq'])}"
            )
        k_time = d["k_time"]
        if recurrent_state is None:
            recurrent_state = np.zeros((k_time - 1, d["in_ch"], d["in_freq"]), dtype=x.dtype)
        stacked = np.concatenate([recurrent_state, x[None]], axis=0)  # [k_time, C, F]
        w, b = _params_for(spec, params)
        padded = np.pad(stacked, ((0, 0), (0, 0), (d["pad_freq"], d["pad_freq"])))
        f_out = conv_out_freq(spec)
        # Patch layout matches autodiff.conv2d: (c, k_freq, k_time) flattened.
        cols = np.empty((f_out, d["in_ch"], d["k_freq"], k_time), dtype=x.dtype)
        for dt in range(k_time):
            for df in range(d["k_freq"]):
                cols[:, :, df, dt] = padded[dt, :, df:df + (f_out - 1) * d["stride_freq"] + 1:d["stride_freq"]].T
        out = cols.reshape(f_out, -1) @ w.reshape(d["out_ch"], -1).T + b
        new_state = stacked[1:] if k_time > 1 else recurrent_state
        return out.T, new_state
    if spec.kind == "grouped_linear":
        x = inputs[0]
        d = spec.dims
        if x.shape[-1] != d["in"]:
            raise DomainError(f"{spec.name}: input width {x.shape[-1]} != {d['in']}")
        tensors = _params_for(spec, params)
        w = tensors[0]
        g = d["groups"]
        out = np.matmul(x.reshape(g, 1, -1), w).reshape(-1)
        if d.get("bias", 1):
            out = out + tensors[1]
        return out, None
    if spec.kind == "gru_cell":
        x = inputs[0]
        d = spec.dims
        if recurrent_state is None:
            recurrent_state = np.zeros(d["hidden"], dtype=x.dtype)
        wi, wh, bi, bh = _params_for(spec, params)
        h = ad.gru_cell_step(x, recurrent_state, wi, wh, bi, bh)
        return h, h
    if spec.kind == "pointwise":
        fn = spec.dims["fn"]
        x = inputs[0]
        if fn == "sigmoid":
            return 1.0 / (1.0 + np.exp(-x)), None
        if fn == "tanh":
            return np.tanh(x), None
        return np.maximum(x, 0.0), None
    if spec.kind == "concat":
        return np.concatenate(inputs, axis=-1), None
    raise ConfigurationError(f"unknown layer kind {spec.kind!r}")
