"""Minimal reverse-mode autodiff over numpy arrays.

Scope is deliberately narrow: exactly the layer kinds of the enhancement
model (causal conv2d, grouped linear, GRU sequences, pointwise
nonlinearities, concat) plus the array ops the loss terms need (complex
arithmetic via re/im pairs, compressed magnitudes, STFT/iSTFT). Every
function below accepts either a Var or a plain ndarray and returns the
matching kind, so forward math is written once and reused for inference.

Gradients are validated against central finite differences in the test
suite; anything outside this op set raises CapabilityError.
"""

from __future__ import annotations

import numpy as np

from .errors import CapabilityError
from . import dsp


class Var:
    """A node in the tape: value, accumulated grad, and a vjp closure."""

    __slots__ = ("value", "grad", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    # Operator sugar; constants may appear on either side.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(value) -> Var:
    return Var(value)


def val(x):
    return x.value if isinstance(x, Var) else x


def _is_var(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def _check_numeric(x):
    arr = val(x)
    if not isinstance(arr, (np.ndarray, int, float, complex, np.number)):
        raise CapabilityError(f"unsupported operand type {type(arr)} in autodiff graph")
    return arr


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad over axes that were broadcast to produce `shape`-shaped input."""
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _make(out_value, var_inputs, vjp):
    return Var(out_value, parents=tuple(var_inputs), vjp=vjp)


def backward(root: Var, seed: np.ndarray | float = 1.0) -> None:
    """Accumulate grads into every Var reachable from root (iterative topo order)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.broadcast_to(np.asarray(seed, dtype=np.float64), root.value.shape).copy()
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g


def grads_for(loss: Var, named_leaves: dict) -> dict:
    """Run backward and collect gradients per leaf name (zeros when unused)."""
    for v in named_leaves.values():
        v.grad = None
    backward(loss)
    return {
        name: (v.grad if v.grad is not None else np.zeros_like(v.value))
        for name, v in named_leaves.items()
    }


# ---------------------------------------------------------------------------
# Elementwise / reduction ops


def add(a, b):
    _check_numeric(a), _check_numeric(b)
    if not _is_var(a, b):
        return a + b
    out = val(a) + val(b)
    variables = [x for x in (a, b) if isinstance(x, Var)]

    def vjp(g):
        return [_unbroadcast(g, x.value.shape) for x in variables]

    return _make(out, variables, vjp)


def sub(a, b):
    return add(a, mul(b, -1.0))


def mul(a, b):
    _check_numeric(a), _check_numeric(b)
    if not _is_var(a, b):
        return a * b
    av, bv = val(a), val(b)
    out = av * bv
    variables = []
    sides = []
    if isinstance(a, Var):
        variables.append(a)
        sides.append(bv)
    if isinstance(b, Var):
        variables.append(b)
        sides.append(av)

    def vjp(g):
        return [_unbroadcast(g * other, x.value.shape) for x, other in zip(variables, sides)]

    return _make(out, variables, vjp)


def matmul(a, b):
    if not _is_var(a, b):
        return a @ b
    av, bv = val(a), val(b)
    out = av @ bv
    variables = [x for x in (a, b) if isinstance(x, Var)]

    def vjp(g):
        grads = []
        if isinstance(a, Var):
            grads.append(g @ bv.T)
        if isinstance(b, Var):
            grads.append(av.T @ g)
        return grads

    return _make(out, variables, vjp)


def sigmoid(x):
    xv = val(x)
    out = 1.0 / (1.0 + np.exp(-xv))
    if not isinstance(x, Var):
        return out
    return _make(out, [x], lambda g, o=out: [g * o * (1.0 - o)])


def tanh(x):
    xv = val(x)
    out = np.tanh(xv)
    if not isinstance(x, Var):
        return out
    return _make(out, [x], lambda g, o=out: [g * (1.0 - o * o)])


def relu(x):
    xv = val(x)
    out = np.maximum(xv, 0.0)
    if not isinstance(x, Var):
        return out
    mask = (xv > 0.0).astype(np.float64)
    return _make(out, [x], lambda g: [g * mask])


def sqrt(x):
    xv = val(x)
    out = np.sqrt(xv)
    if not isinstance(x, Var):
        return out
    return _make(out, [x], lambda g, o=out: [g * 0.5 / o])


def powc(x, c: float):
    """x ** c for strictly positive x and a constant exponent."""
    xv = val(x)
    out = xv ** c
    if not isinstance(x, Var):
        return out
    return _make(out, [x], lambda g: [g * c * xv ** (c - 1.0)])


def mean_all(x):
    xv = val(x)
    out = xv.mean()
    if not isinstance(x, Var):
        return out
    n = xv.size

    def vjp(g):
        return [np.broadcast_to(np.asarray(g) / n, xv.shape).copy()]

    return _make(out, [x], vjp)


def sum_all(x):
    xv = val(x)
    out = xv.sum()
    if not isinstance(x, Var):
        return out

    def vjp(g):
        return [np.broadcast_to(np.asarray(g), xv.shape).copy()]

    return _make(out, [x], vjp)


# ---------------------------------------------------------------------------
# Shape ops


def reshape(x, shape):
    xv = val(x)
    out = xv.reshape(shape)
    if not isinstance(x, Var):
        return out
    return _make(out, [x], lambda g: [np.asarray(g).reshape(xv.shape)])


def concat(parts, axis: int = -1):
    if not _is_var(*parts):
        return np.concatenate(parts, axis=axis)
    values = [val(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    variables = [p for p in parts if isinstance(p, Var)]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(p, Var):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                grads.append(np.ascontiguousarray(g[tuple(idx)]))
        return grads

    return _make(out, variables, vjp)


def narrow(x, axis: int, start: int, length: int):
    """Static slice along one axis."""
    xv = val(x)
    idx = [slice(None)] * xv.ndim
    idx[axis] = slice(start, start + length)
    out = xv[tuple(idx)]
    if not isinstance(x, Var):
        return out

    def vjp(g):
        full = np.zeros_like(xv)
        full[tuple(idx)] = g
        return [full]

    return _make(np.ascontiguousarray(out), [x], vjp)


def shift_rows(x, offset: int):
    """Row k of the result is row k+offset of x, zero where out of range."""
    xv = val(x)
    out = dsp.shift_rows(xv, offset)
    if not isinstance(x, Var):
        return out

    def vjp(g):
        return [dsp.shift_rows(np.asarray(g), -offset)]

    return _make(out, [x], vjp)


# ---------------------------------------------------------------------------
# Fused layer ops


def grouped_linear(x, w, b, groups: int):
    """x: [T, in] -> [T, out]; w: [groups, in/groups, out/groups]; b: [out] or None."""
    xv, wv = val(x), val(w)
    t = xv.shape[0]
    g, gin, gout = wv.shape
    xg = xv.reshape(t, g, gin).transpose(1, 0, 2)  # [g, t, gin]
    out = np.matmul(xg, wv).transpose(1, 0, 2).reshape(t, g * gout)
    if b is not None:
        out = out + val(b)
    if not _is_var(x, w, b):
        return out
    variables = [v for v in (x, w, b) if isinstance(v, Var)]

    def vjp(grad):
        gg = grad.reshape(t, g, gout).transpose(1, 0, 2)  # [g, t, gout]
        grads = []
        if isinstance(x, Var):
            gx = np.matmul(gg, wv.transpose(0, 2, 1))  # [g, t, gin]
            grads.append(gx.transpose(1, 0, 2).reshape(t, g * gin))
        if isinstance(w, Var):
            grads.append(np.matmul(xg.transpose(0, 2, 1), gg))  # [g, gin, gout]
        if isinstance(b, Var):
            grads.append(grad.sum(axis=0))
        return grads

    return _make(out, variables, vjp)


def conv_out_freq(in_freq: int, k_freq: int, stride_freq: int, pad_freq: int) -> int:
    return (in_freq + 2 * pad_freq - k_freq) // stride_freq + 1


def _conv2d_patches(xv: np.ndarray, k_freq: int, k_time: int,
                    stride_freq: int, pad_freq: int) -> np.ndarray:
    """im2col for [T, C, F] input, causal in time. Output [T, F_out, C*k_freq*k_time]."""
    t, c, f = xv.shape
    padded = np.pad(xv, ((k_time - 1, 0), (0, 0), (pad_freq, pad_freq)))
    f_out = conv_out_freq(f, k_freq, stride_freq, pad_freq)
    cols = np.empty((t, f_out, c, k_freq, k_time), dtype=xv.dtype)
    for dt in range(k_time):
        for df in range(k_freq):
            sl = padded[dt:dt + t, :, df:df + (f_out - 1) * stride_freq + 1:stride_freq]
            cols[:, :, :, df, dt] = sl.transpose(0, 2, 1)
    return cols.reshape(t, f_out, c * k_freq * k_time)


def _conv2d_scatter(gcols: np.ndarray, in_shape, k_freq: int, k_time: int,
                    stride_freq: int, pad_freq: int) -> np.ndarray:
    """Adjoint of _conv2d_patches."""
    t, c, f = in_shape
    f_out = gcols.shape[1]
    gcols = gcols.reshape(t, f_out, c, k_freq, k_time)
    gpad = np.zeros((t + k_time - 1, c, f + 2 * pad_freq))
    for dt in range(k_time):
        for df in range(k_freq):
            gpad[dt:dt + t, :, df:df + (f_out - 1) * stride_freq + 1:stride_freq] += \
                gcols[:, :, :, df, dt].transpose(0, 2, 1)
    return gpad[k_time - 1:, :, pad_freq:pad_freq + f]


def conv2d(x, w, b, stride_freq: int = 1, pad_freq: int = 0):
    """Causal-in-time 2-D convolution.

    x: [T, in_ch, F]; w: [out_ch, in_ch, k_freq, k_time]; b: [out_ch] or None.
    Returns [T, out_ch, F_out]. Time taps address frames t-k_time+1 .. t.
    """
    xv, wv = val(x), val(w)
    out_ch, in_ch, k_freq, k_time = wv.shape
    cols = _conv2d_patches(xv, k_freq, k_time, stride_freq, pad_freq)
    wmat = wv.reshape(out_ch, in_ch * k_freq * k_time).T
    out = cols @ wmat
    if b is not None:
        out = out + val(b)
    out = out.transpose(0, 2, 1)  # [T, out_ch, F_out]
    if not _is_var(x, w, b):
        return out
    variables = [v for v in (x, w, b) if isinstance(v, Var)]

    def vjp(grad):
        gout = grad.transpose(0, 2, 1)  # [T, F_out, out_ch]
        grads = []
        if isinstance(x, Var):
            gcols = gout @ wmat.T
            grads.append(_conv2d_scatter(gcols, xv.shape, k_freq, k_time,
                                         stride_freq, pad_freq))
        if isinstance(w, Var):
            k = cols.shape[2]
            gw = cols.reshape(-1, k).T @ gout.reshape(-1, gout.shape[2])
            grads.append(gw.T.reshape(wv.shape))
        if isinstance(b, Var):
            grads.append(gout.sum(axis=(0, 1)))
        return grads

    return _make(out, variables, vjp)


def _gru_gates(x_t, h, wi, wh, bi, bh, hidden):
    gi = x_t @ wi.T + bi
    gh = h @ wh.T + bh
    r = 1.0 / (1.0 + np.exp(-(gi[:hidden] + gh[:hidden])))
    z = 1.0 / (1.0 + np.exp(-(gi[hidden:2 * hidden] + gh[hidden:2 * hidden])))
    n = np.tanh(gi[2 * hidden:] + r * gh[2 * hidden:])
    h_new = (1.0 - z) * n + z * h
    return r, z, n, h_new, gh[2 * hidden:]


def gru_cell_step(x_t: np.ndarray, h: np.ndarray, wi, wh, bi, bh) -> np.ndarray:
    """Single inference step of the standard GRU (reset gate inside the candidate)."""
    hidden = h.shape[0]
    return _gru_gates(x_t, h, wi, wh, bi, bh, hidden)[3]


def gru_sequence(x, wi, wh, bi, bh, h0: np.ndarray | None = None):
    """Run a GRU over [T, in]; returns [T, hidden]. Gate order is r, z, n.

    wi: [3*hidden, in], wh: [3*hidden, hidden], bi/bh: [3*hidden].
    """
    xv = val(x)
    wiv, whv, biv, bhv = val(wi), val(wh), val(bi), val(bh)
    t = xv.shape[0]
    hidden = whv.shape[1]
    h = np.zeros(hidden) if h0 is None else np.asarray(h0, dtype=np.float64)
    gi_all = xv @ wiv.T + biv  # [T, 3H]
    hs = np.empty((t, hidden))
    rs = np.empty((t, hidden))
    zs = np.empty((t, hidden))
    ns = np.empty((t, hidden))
    ghn = np.empty((t, hidden))
    hprev = np.empty((t, hidden))
    for k in range(t):
        hprev[k] = h
        gh = h @ whv.T + bhv
        r = 1.0 / (1.0 + np.exp(-(gi_all[k, :hidden] + gh[:hidden])))
        z = 1.0 / (1.0 + np.exp(-(gi_all[k, hidden:2 * hidden] + gh[hidden:2 * hidden])))
        n = np.tanh(gi_all[k, 2 * hidden:] + r * gh[2 * hidden:])
        h = (1.0 - z) * n + z * h
        rs[k], zs[k], ns[k], ghn[k], hs[k] = r, z, n, gh[2 * hidden:], h
    if not _is_var(x, wi, wh, bi, bh):
        return hs
    variables = [v for v in (x, wi, wh, bi, bh) if isinstance(v, Var)]

    def vjp(grad):
        dgi = np.zeros((t, 3 * hidden))
        dgh = np.zeros((t, 3 * hidden))
        dh = np.zeros(hidden)
        for k in range(t - 1, -1, -1):
            dh = dh + grad[k]
            r, z, n = rs[k], zs[k], ns[k]
            dn = dh * (1.0 - z)
            dz = dh * (hprev[k] - n)
            dh_pass = dh * z
            da_n = dn * (1.0 - n * n)
            dr = da_n * ghn[k]
            da_r = dr * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            dgi[k, :hidden] = da_r
            dgi[k, hidden:2 * hidden] = da_z
            dgi[k, 2 * hidden:] = da_n
            dgh[k, :hidden] = da_r
            dgh[k, hidden:2 * hidden] = da_z
            dgh[k, 2 * hidden:] = da_n * r
            dh = dh_pass + dgh[k] @ whv
        grads = []
        if isinstance(x, Var):
            grads.append(dgi @ wiv)
        if isinstance(wi, Var):
            grads.append(dgi.T @ xv)
        if isinstance(wh, Var):
            grads.append(dgh.T @ hprev)
        if isinstance(bi, Var):
            grads.append(dgi.sum(axis=0))
        if isinstance(bh, Var):
            grads.append(dgh.sum(axis=0))
        return grads

    return _make(hs, variables, vjp)


# ---------------------------------------------------------------------------
# Spectral ops (linear maps with hand-derived adjoints)


def _rfft_adjoint(g_re: np.ndarray, g_im: np.ndarray, n_fft: int) -> np.ndarray:
    """Adjoint of x -> (Re rfft(x), Im rfft(x)) as a real-linear map."""
    g = g_re + 1j * g_im
    padded = np.zeros(g.shape[:-1] + (n_fft,), dtype=np.complex128)
    padded[..., :g.shape[-1]] = g
    return np.real(np.fft.ifft(padded, axis=-1)) * n_fft


def _irfft_adjoint(g: np.ndarray, bins: int, n_fft: int):
    """Adjoint of (re, im) -> irfft(re + j*im, n_fft) as a real-linear map."""
    spec = np.fft.rfft(g, n=n_fft, axis=-1) / n_fft
    scale = np.full(bins, 2.0)
    scale[0] = 1.0
    if n_fft % 2 == 0:
        scale[-1] = 1.0
    return np.real(spec) * scale, np.imag(spec) * scale


def stft_graph(audio, win: int, hop: int, n_fft: int, window: np.ndarray):
    """Differentiable STFT matching dsp.stft_array; returns (re, im)."""
    xv = val(audio)
    spec = dsp.stft_array(xv, win, hop, n_fft, window)
    if not isinstance(audio, Var):
        return np.real(spec), np.imag(spec)
    n = xv.shape[0]
    frames = spec.shape[0]
    lead = win - hop

    def scatter(g_frames: np.ndarray) -> np.ndarray:
        out = np.zeros(lead + frames * hop)
        for k in range(frames):
            out[k * hop:k * hop + win] += g_frames[k]
        return out[lead:lead + n]

    def vjp_re(g):
        g_frames = _rfft_adjoint(g, np.zeros_like(g), n_fft)[:, :win] * window
        return [scatter(g_frames)]

    def vjp_im(g):
        g_frames = _rfft_adjoint(np.zeros_like(g), g, n_fft)[:, :win] * window
        return [scatter(g_frames)]

    re = _make(np.real(spec), [audio], vjp_re)
    im = _make(np.imag(spec), [audio], vjp_im)
    return re, im


def istft_graph(re, im, win: int, hop: int, n_fft: int, window: np.ndarray):
    """Differentiable iSTFT matching dsp.istft_array; returns audio of frames*hop."""
    re_v, im_v = val(re), val(im)
    spec = re_v + 1j * im_v
    out = dsp.istft_array(spec, win, hop, n_fft, window)
    if not _is_var(re, im):
        return out
    frames, bins = spec.shape
    lead = win - hop
    env = dsp.synthesis_envelope(frames, win, hop, window)
    variables = [v for v in (re, im) if isinstance(v, Var)]

    def vjp(g):
        buf = np.zeros(lead + frames * hop)
        buf[lead:] = g
        buf /= env
        g_frames = np.empty((frames, win))
        for k in range(frames):
            g_frames[k] = buf[k * hop:k * hop + win]
        g_frames *= window
        padded = np.zeros((frames, n_fft))
        padded[:, :win] = g_frames
        g_re, g_im = _irfft_adjoint(padded, bins, n_fft)
        grads = []
        if isinstance(re, Var):
            grads.append(g_re)
        if isinstance(im, Var):
            grads.append(g_im)
        return grads

    return _make(out, variables, vjp)


# ---------------------------------------------------------------------------
# Complex helpers built from the primitives above


def cmul(ar, ai, br, bi):
    """(ar + j ai) * (br + j bi) -> (re, im)."""
    return sub(mul(ar, br), mul(ai, bi)), add(mul(ar, bi), mul(ai, br))


def magnitude_sq(re, im, eps_sq: float = 0.0):
    out = add(add(mul(re, re), mul(im, im)), eps_sq)
    return out
