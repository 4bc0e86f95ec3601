"""Objective metrics: classic STOI, SI-SDR, and a toy enrollment embedder.

STOI follows the classic (non-extended) definition: resample to 10 kHz,
drop silent frames by a 40 dB energy rule on the clean reference, build
15 one-third-octave band envelopes from 150 Hz upward (256-sample frames,
50% overlap, 512-point FFT), then average the clipped, normalized
correlation between clean and processed envelopes over 384 ms segments.
The test suite checks it against an independent straight-line
re-implementation, so keep any change mirrored there.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import resample_poly

from .audio_io import AudioBuffer
from .errors import DomainError
from .model import SpeakerEmbedding

STOI_SR = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30  # frames of 12.8 ms -> 384 ms
STOI_DYN_RANGE = 40.0
STOI_BETA = -15.0
SI_SDR_CAP = 80.0
_TINY = 1e-15


def _to_10k(audio: AudioBuffer) -> np.ndarray:
    x = audio.samples.astype(np.float64)
    if audio.sample_rate == STOI_SR:
        return x
    g = math.gcd(audio.sample_rate, STOI_SR)
    return resample_poly(x, STOI_SR // g, audio.sample_rate // g)


def _frame(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    n_frames = 1 + (x.shape[0] - win) // hop
    return np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float = STOI_DYN_RANGE):
    """Drop frames whose clean energy sits more than dyn_range below the max;
    the same mask applies to both signals."""
    w = _hann(STOI_FRAME)
    xf = _frame(x, STOI_FRAME, STOI_HOP) * w
    yf = _frame(y, STOI_FRAME, STOI_HOP) * w
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _TINY)
    mask = energy > energy.max() - dyn_range
    xk, yk = xf[mask], yf[mask]
    n_out = (xk.shape[0] - 1) * STOI_HOP + STOI_FRAME
    xs = np.zeros(n_out)
    ys = np.zeros(n_out)
    for j in range(xk.shape[0]):
        xs[j * STOI_HOP:j * STOI_HOP + STOI_FRAME] += xk[j]
        ys[j * STOI_HOP:j * STOI_HOP + STOI_FRAME] += yk[j]
    return xs, ys


def third_octave_matrix(sr: int = STOI_SR, nfft: int = STOI_NFFT,
                        n_bands: int = STOI_BANDS, min_freq: float = STOI_MIN_FREQ):
    freqs = np.fft.rfftfreq(nfft, 1.0 / sr)
    centers = min_freq * 2.0 ** (np.arange(n_bands) / 3.0)
    obm = np.zeros((n_bands, freqs.shape[0]))
    for k, cf in enumerate(centers):
        lo, hi = cf / 2 ** (1 / 6), cf * 2 ** (1 / 6)
        obm[k] = (freqs >= lo) & (freqs < hi)
    return obm


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    frames = _frame(x, STOI_FRAME, STOI_HOP) * _hann(STOI_FRAME)
    spec = np.fft.rfft(frames, n=STOI_NFFT, axis=1)
    return np.sqrt(np.abs(spec) ** 2 @ obm.T).T  # [bands, frames]


def stoi(clean: AudioBuffer, est: AudioBuffer) -> float:
    """Short-time objective intelligibility in [-1, 1]."""
    if clean.samples.shape != est.samples.shape:
        raise DomainError("clean and estimate must have equal length")
    if clean.sample_rate != est.sample_rate:
        raise DomainError("clean and estimate must share a sample rate")
    x = _to_10k(clean)
    y = _to_10k(est)
    if x.shape[0] < STOI_FRAME:
        raise DomainError("clip shorter than one analysis frame")
    x, y = remove_silent_frames(x, y)
    obm = third_octave_matrix()
    ex = _band_envelopes(x, obm)
    ey = _band_envelopes(y, obm)
    n_frames = ex.shape[1]
    if n_frames < STOI_SEGMENT:
        raise DomainError(
            f"clip too short after silence removal: {n_frames} frames < one "
            f"{STOI_SEGMENT}-frame segment"
        )
    clip_factor = 1.0 + 10.0 ** (-STOI_BETA / 20.0)
    xseg = np.lib.stride_tricks.sliding_window_view(ex, STOI_SEGMENT, axis=1)
    yseg = np.lib.stride_tricks.sliding_window_view(ey, STOI_SEGMENT, axis=1)
    alpha = np.linalg.norm(xseg, axis=2, keepdims=True) / (
        np.linalg.norm(yseg, axis=2, keepdims=True) + _TINY)
    yprime = np.minimum(alpha * yseg, clip_factor * xseg)
    xc = xseg - xseg.mean(axis=2, keepdims=True)
    yc = yprime - yprime.mean(axis=2, keepdims=True)
    num = np.sum(xc * yc, axis=2)
    den = np.linalg.norm(xc, axis=2) * np.linalg.norm(yc, axis=2) + _TINY
    return float(np.mean(num / den))


def si_sdr(clean: AudioBuffer, est: AudioBuffer) -> float:
    """Scale-invariant SDR in dB, capped at +80."""
    if clean.samples.shape != est.samples.shape:
        raise DomainError("clean and estimate must have equal length")
    s = clean.samples.astype(np.float64)
    e = est.samples.astype(np.float64)
    s_energy = float(np.dot(s, s))
    if s_energy <= _TINY:
        raise DomainError("clean reference is silent")
    a = float(np.dot(e, s)) / s_energy
    target = a * s
    err = e - target
    err_energy = float(np.dot(err, err))
    t_energy = float(np.dot(target, target))
    if err_energy <= 0.0 or t_energy / err_energy > 10.0 ** (SI_SDR_CAP / 10.0):
        return SI_SDR_CAP
    return 10.0 * np.log10(t_energy / err_energy)


# ---------------------------------------------------------------------------
# Toy enrollment embedder


TOY_EMBED_MIN_SECS = 2.0
TOY_EMBED_MEL_BANDS = 96
TOY_EMBED_FMIN = 50.0


def _mel_filterbank(n_bands: int, nfft: int, sr: int, fmin: float) -> np.ndarray:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    points = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(sr / 2.0), n_bands + 2))
    bins = np.floor((nfft + 1) * points / sr).astype(int)
    fb = np.zeros((n_bands, nfft // 2 + 1))
    for i in range(1, n_bands + 1):
        left, center, right = bins[i - 1], bins[i], bins[i + 1]
        for k in range(left, center):
            fb[i - 1, k] = (k - left) / max(center - left, 1)
        for k in range(center, right):
            fb[i - 1, k] = (right - k) / max(right - center, 1)
    return fb


def toy_embed(enrollment: AudioBuffer) -> SpeakerEmbedding:
    """Mean + standard-deviation pooling of 96-band log-mel frames -> 192 dims.

    A deterministic stand-in for a real speaker encoder, good enough to give
    the toy pipeline distinct, stable per-speaker vectors.
    """
    if enrollment.duration_s < TOY_EMBED_MIN_SECS:
        raise DomainError(
            f"enrollment must be at least {TOY_EMBED_MIN_SECS:.0f} s, "
            f"got {enrollment.duration_s:.2f} s"
        )
    sr = enrollment.sample_rate
    win = int(round(sr * 0.020))
    hop = win // 2
    frames = _frame(enrollment.samples.astype(np.float64), win, hop) * _hann(win)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    fb = _mel_filterbank(TOY_EMBED_MEL_BANDS, win, sr, TOY_EMBED_FMIN)
    logmel = np.log10(power @ fb.T + 1e-10)
    vec = np.concatenate([logmel.mean(axis=0), logmel.std(axis=0)])
    norm = float(np.linalg.norm(vec))
    if norm <= 0.0:
        raise DomainError("enrollment produced a degenerate embedding")
    return SpeakerEmbedding(vec / norm)
