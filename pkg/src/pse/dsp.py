"""STFT analysis/synthesis, ERB banding, feature extraction, and deep filtering.

Conventions fixed here and relied on everywhere else:
  * periodic Hann window for both analysis and synthesis, 50% overlap;
  * the signal is padded with (win - hop) leading zeros so that frame k ends
    at sample (k+1)*hop, which is exactly the streaming framing;
  * synthesis divides by the accumulated squared-window envelope, so
    istft(stft(x)) reproduces x on interior samples;
  * the whole lookahead budget lives in the deep-filter tap alignment; every
    other stage is causal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

EPS = 1e-10
# Floors the squared-window synthesis envelope at single-coverage edges.
ENV_FLOOR = 1e-2

# ERB-rate scale constants (Glasberg & Moore style fit).
_ERB_A = 9.265
_ERB_B = 24.7 * 9.16


def hz_to_erb(f):
    """Frequency in Hz -> ERB-rate."""
    return _ERB_A * np.log(1.0 + np.asarray(f, dtype=np.float64) / _ERB_B)


def erb_to_hz(e):
    """ERB-rate -> frequency in Hz."""
    return _ERB_B * (np.exp(np.asarray(e, dtype=np.float64) / _ERB_A) - 1.0)


@dataclass(frozen=True)
class DspConfig:
    """Front-end hyperparameters. Derived sizes are properties."""

    sample_rate: int = 48000
    win_ms: float = 20.0
    overlap: float = 0.5
    fft_size: int | None = None  # defaults to the window length
    lookahead_frames: int = 2
    erb_bands: int = 32
    f_df: float = 5000.0
    df_order: int = 5
    norm_tau_s: float = 1.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be > 0")
        win = self.win
        hop = self.hop
        if hop <= 0 or win % hop != 0:
            raise ConfigurationError(
                f"hop ({hop}) must be positive and divide the window length ({win})"
            )
        if self.n_fft < win:
            raise ConfigurationError("fft_size must be >= window length")
        if self.f_df > self.sample_rate / 2:
            raise ConfigurationError("f_df must not exceed the Nyquist frequency")
        if self.erb_bands < 2:
            raise ConfigurationError("erb_bands must be >= 2")
        if self.df_order < 1:
            raise ConfigurationError("df_order must be >= 1")
        if self.lookahead_frames < 0:
            raise ConfigurationError("lookahead_frames must be >= 0")

    @property
    def win(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.win * (1.0 - self.overlap)))

    @property
    def n_fft(self) -> int:
        return self.fft_size if self.fft_size is not None else self.win

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.n_fft

    @property
    def df_bins(self) -> int:
        """Number of STFT bins whose center frequency lies below f_df."""
        return int(np.sum(np.arange(self.bins) * self.bin_hz < self.f_df))

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop

    @property
    def norm_alpha(self) -> float:
        return math.exp(-(self.hop / self.sample_rate) / self.norm_tau_s)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


@dataclass
class ComplexSpectrogram:
    """Complex STFT matrix, frames along axis 0, bins along axis 1."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise DomainError(f"spectrogram must be 2-D, got shape {self.values.shape}")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


@dataclass
class ErbFeature:
    values: np.ndarray  # [frames, erb_bands] real
    normalized: bool


@dataclass
class ComplexFeature:
    values: np.ndarray  # [frames, df_bins] complex
    df_bins: int


@dataclass
class DfCoeffs:
    """Per-frame complex filter taps, shape [frames, df_order, df_bins]."""

    taps: np.ndarray

    def __post_init__(self):
        self.taps = np.asarray(self.taps)
        if self.taps.ndim != 3:
            raise DomainError(f"taps must be 3-D, got shape {self.taps.shape}")


# ---------------------------------------------------------------------------
# STFT / iSTFT


def frame_count(n_samples: int, hop: int) -> int:
    return -(-n_samples // hop)


def stft_array(x: np.ndarray, win: int, hop: int, n_fft: int,
               window: np.ndarray | None = None) -> np.ndarray:
    """Core framing + windowed rFFT. Frame k covers samples [(k+1)*hop - win, (k+1)*hop)."""
    x = np.asarray(x)
    n = x.shape[0]
    frames = frame_count(n, hop)
    lead = win - hop
    if window is None:
        window = hann_window(win)
    padded = np.concatenate([
        np.zeros(lead, dtype=x.dtype), x,
        np.zeros(frames * hop - n, dtype=x.dtype),
    ])
    strided = np.lib.stride_tricks.sliding_window_view(padded, win)[::hop]
    return np.fft.rfft(strided * window.astype(x.dtype), n=n_fft, axis=1)


def synthesis_envelope(frames: int, win: int, hop: int,
                       window: np.ndarray | None = None) -> np.ndarray:
    """Accumulated squared synthesis window over the overlap-add buffer."""
    if window is None:
        window = hann_window(win)
    env = np.zeros((frames - 1) * hop + win)
    wsq = window * window
    for k in range(frames):
        env[k * hop:k * hop + win] += wsq
    return np.maximum(env, ENV_FLOOR)


def istft_array(spec: np.ndarray, win: int, hop: int, n_fft: int,
                window: np.ndarray | None = None) -> np.ndarray:
    """Overlap-add synthesis, envelope-normalized; returns frames*hop samples."""
    if window is None:
        window = hann_window(win)
    frames = spec.shape[0]
    time_frames = np.fft.irfft(spec, n=n_fft, axis=1)[:, :win] * window
    buf = np.zeros((frames - 1) * hop + win)
    for k in range(frames):
        buf[k * hop:k * hop + win] += time_frames[k]
    buf /= synthesis_envelope(frames, win, hop, window)
    lead = win - hop
    return buf[lead:lead + frames * hop]


def stft(audio, cfg: DspConfig) -> ComplexSpectrogram:
    """Analyze an AudioBuffer into a ComplexSpectrogram with ceil(len/hop) frames."""
    if audio.sample_rate != cfg.sample_rate:
        raise ConfigurationError(
            f"audio sample rate {audio.sample_rate} != configured {cfg.sample_rate}"
        )
    n = audio.samples.shape[0]
    if n == 0:
        raise DomainError("cannot analyze empty audio")
    if n < cfg.hop:
        raise DomainError(f"audio shorter than one hop ({cfg.hop} samples)")
    return ComplexSpectrogram(stft_array(audio.samples, cfg.win, cfg.hop, cfg.n_fft))


def istft(spec: ComplexSpectrogram, cfg: DspConfig):
    """Synthesize audio from a spectrogram; output length = frames * hop."""
    from .audio_io import AudioBuffer

    if spec.bins != cfg.bins:
        raise DomainError(f"spectrogram has {spec.bins} bins, config implies {cfg.bins}")
    samples = istft_array(spec.values, cfg.win, cfg.hop, cfg.n_fft)
    return AudioBuffer(samples, cfg.sample_rate)


# ---------------------------------------------------------------------------
# ERB filterbank and features


@dataclass(frozen=True)
class ErbFilterbank:
    """Contiguous rectangular bands over STFT bins: edges[b] .. edges[b+1]."""

    band_edges: tuple

    @property
    def bands(self) -> int:
        return len(self.band_edges) - 1

    @property
    def bins(self) -> int:
        return self.band_edges[-1]

    @property
    def widths(self) -> np.ndarray:
        e = np.asarray(self.band_edges)
        return e[1:] - e[:-1]

    def band_of_bin(self) -> np.ndarray:
        """Map bin index -> band index."""
        out = np.empty(self.bins, dtype=np.int64)
        for b in range(self.bands):
            out[self.band_edges[b]:self.band_edges[b + 1]] = b
        return out

    def mean_matrix(self) -> np.ndarray:
        """[bands, bins] matrix averaging member-bin powers per band."""
        m = np.zeros((self.bands, self.bins))
        for b in range(self.bands):
            lo, hi = self.band_edges[b], self.band_edges[b + 1]
            m[b, lo:hi] = 1.0 / (hi - lo)
        return m

    def spread_matrix(self) -> np.ndarray:
        """[bands, bins] 0/1 matrix broadcasting a band gain onto its bins."""
        m = np.zeros((self.bands, self.bins))
        for b in range(self.bands):
            m[b, self.band_edges[b]:self.band_edges[b + 1]] = 1.0
        return m


def build_erb_filterbank(cfg: DspConfig) -> ErbFilterbank:
    """Partition the STFT bins into erb_bands contiguous bands.

    Edges are uniformly spaced on the ERB-rate scale, then widened so every
    band holds at least 2 bins; the last edge always equals the bin count.
    """
    bins = cfg.bins
    n_bands = cfg.erb_bands
    if 2 * n_bands > bins:
        raise ConfigurationError(
            f"{n_bands} bands of >= 2 bins do not fit into {bins} bins"
        )
    erb_edges = np.linspace(0.0, float(hz_to_erb(cfg.sample_rate / 2.0)), n_bands + 1)
    edges = np.round(erb_to_hz(erb_edges) / cfg.bin_hz).astype(np.int64)
    edges[0] = 0
    edges[-1] = bins
    for i in range(1, n_bands + 1):
        edges[i] = max(edges[i], edges[i - 1] + 2)
    edges[-1] = bins
    for i in range(n_bands - 1, 0, -1):
        edges[i] = min(edges[i], edges[i + 1] - 2)
    return ErbFilterbank(tuple(int(e) for e in edges))


@dataclass
class NormState:
    """Exponential-moving statistics for feature normalization.

    Owned by exactly one stream; reset() clears it. Lazily initialized with
    the first observed frame so normalized output is scale-correct from the
    first frame onward.
    """

    erb_mean: np.ndarray | None = None
    comp_power: float | None = None

    def reset(self) -> None:
        self.erb_mean = None
        self.comp_power = None


def erb_band_log_power(power_frame: np.ndarray, mean_mat: np.ndarray) -> np.ndarray:
    return np.log10(mean_mat @ power_frame + EPS)


def erb_features(spec: ComplexSpectrogram, fb: ErbFilterbank,
                 state: NormState | None, cfg: DspConfig | None = None,
                 normalize: bool = True) -> ErbFeature:
    """Per-band log10 mean power, optionally mean-normalized with an EMA."""
    if spec.bins != fb.bins:
        raise DomainError(f"spectrogram bins {spec.bins} != filterbank bins {fb.bins}")
    power = np.abs(spec.values) ** 2
    vals = np.log10(power @ fb.mean_matrix().T + EPS)
    if not normalize or state is None:
        return ErbFeature(vals, normalized=False)
    alpha = cfg.norm_alpha if cfg is not None else DspConfig().norm_alpha
    out = np.empty_like(vals)
    mean = state.erb_mean
    for k in range(vals.shape[0]):
        if mean is None:
            mean = vals[k].copy()
        else:
            mean = alpha * mean + (1.0 - alpha) * vals[k]
        out[k] = vals[k] - mean
    state.erb_mean = mean
    return ErbFeature(out, normalized=True)


def complex_features(spec: ComplexSpectrogram, cfg: DspConfig,
                     state: NormState | None, normalize: bool = True) -> ComplexFeature:
    """Low-band complex spectrum, unit-normalized by an EMA of its RMS magnitude."""
    df = cfg.df_bins
    low = spec.values[:, :df]
    if not normalize or state is None:
        return ComplexFeature(low.copy(), df)
    alpha = cfg.norm_alpha
    out = np.empty_like(low)
    ms = state.comp_power
    for k in range(low.shape[0]):
        frame_ms = float(np.mean(np.abs(low[k]) ** 2))
        if ms is None:
            ms = frame_ms
        else:
            ms = alpha * ms + (1.0 - alpha) * frame_ms
        out[k] = low[k] / (math.sqrt(ms) + EPS)
    state.comp_power = ms
    return ComplexFeature(out, df)


# ---------------------------------------------------------------------------
# Gain application and deep filtering


def apply_erb_gains(spec: ComplexSpectrogram, gains: np.ndarray,
                    fb: ErbFilterbank) -> ComplexSpectrogram:
    """Multiply every bin by its band gain (piecewise-constant, phase preserved)."""
    gains = np.asarray(gains)
    if gains.shape != (spec.frames, fb.bands):
        raise DomainError(
            f"gains shape {gains.shape} != (frames, bands) = {(spec.frames, fb.bands)}"
        )
    if gains.size and (gains.min() < 0.0 or gains.max() > 1.0):
        raise DomainError("gains must lie in [0, 1]")
    per_bin = gains[:, fb.band_of_bin()]
    return ComplexSpectrogram(spec.values * per_bin)


def shift_rows(x: np.ndarray, offset: int) -> np.ndarray:
    """Row k of the result is row k+offset of x; out-of-range rows are zero."""
    out = np.zeros_like(x)
    t = x.shape[0]
    if offset >= 0:
        if offset < t:
            out[:t - offset] = x[offset:]
    else:
        if -offset < t:
            out[-offset:] = x[:t + offset]
    return out


def deep_filter(spec: ComplexSpectrogram, coeffs: DfCoeffs, cfg: DspConfig) -> ComplexSpectrogram:
    """Apply per-bin complex FIR taps across neighboring frames below f_df.

    Y(k, f) = sum_i taps(k, i, f) * X(k - (N-1) + i + lookahead, f) for the
    df_bins low bins; bins at and above f_df pass through unchanged.
    """
    n = cfg.df_order
    df = cfg.df_bins
    if coeffs.taps.shape != (spec.frames, n, df):
        raise DomainError(
            f"taps shape {coeffs.taps.shape} != {(spec.frames, n, df)}"
        )
    low = spec.values[:, :df]
    acc = np.zeros_like(low)
    for i in range(n):
        offset = i - (n - 1) + cfg.lookahead_frames
        acc += coeffs.taps[:, i, :] * shift_rows(low, offset)
    out = spec.values.copy()
    out[:, :df] = acc
    return ComplexSpectrogram(out)
