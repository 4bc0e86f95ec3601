"""Training objective: compressed spectral loss, multi-resolution loss on
re-analyzed audio, and a one-sided over-suppression penalty.

All terms use magnitude compression |S|^c with c = 0.6 and are written
against the autodiff dispatch layer, so the same code computes plain floats
for evaluation and differentiable graphs for training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dsp
from .errors import DomainError

COMPRESSION = 0.6
MR_WINDOWS_MS = (5.0, 10.0, 20.0, 40.0)
MAG_EPS_SQ = 1e-20  # added under the magnitude sqrt; keeps x^(c-1) finite at 0


@dataclass(frozen=True)
class LossWeights:
    lambda_spec: float = 1e3
    lambda_mr: float = 5e2
    lambda_os: float = 5e2

    def __post_init__(self):
        if min(self.lambda_spec, self.lambda_mr, self.lambda_os) < 0:
            raise DomainError("loss weights must be non-negative")


def _compressed(re, im, c: float = COMPRESSION):
    """Returns (|S|^c, S * |S|^(c-1)) as (mag_c, (re_c, im_c))."""
    msq = ad.magnitude_sq(re, im, MAG_EPS_SQ)
    mag_c = ad.powc(msq, c / 2.0)
    scale = ad.powc(msq, (c - 1.0) / 2.0)
    return mag_c, (ad.mul(re, scale), ad.mul(im, scale))


def spectral_loss_core(est_re, est_im, clean_re, clean_im):
    est_mc, (est_cr, est_ci) = _compressed(est_re, est_im)
    clean_mc, (clean_cr, clean_ci) = _compressed(clean_re, clean_im)
    mag_term = ad.mul(ad.sub(est_mc, clean_mc), ad.sub(est_mc, clean_mc))
    dr = ad.sub(est_cr, clean_cr)
    di = ad.sub(est_ci, clean_ci)
    cplx_term = ad.add(ad.mul(dr, dr), ad.mul(di, di))
    return ad.mean_all(ad.add(mag_term, cplx_term))


def oversuppression_loss_core(est_re, est_im, clean_re, clean_im):
    est_mc, _ = _compressed(est_re, est_im)
    clean_mc, _ = _compressed(clean_re, clean_im)
    deficit = ad.relu(ad.sub(clean_mc, est_mc))
    return ad.mean_all(ad.mul(deficit, deficit))


def multires_loss_core(est_audio, clean_audio, sample_rate: int):
    total = None
    for win_ms in MR_WINDOWS_MS:
        win = int(round(sample_rate * win_ms / 1000.0))
        hop = win // 2
        window = dsp.hann_window(win)
        est_re, est_im = ad.stft_graph(est_audio, win, hop, win, window)
        clean_spec = dsp.stft_array(np.asarray(ad.val(clean_audio)), win, hop, win, window)
        term = spectral_loss_core(est_re, est_im, np.real(clean_spec), np.imag(clean_spec))
        total = term if total is None else ad.add(total, term)
    return total


def _check_spectrograms(est, clean):
    if est.values.shape != clean.values.shape:
        raise DomainError(
            f"spectrogram shapes differ: {est.values.shape} vs {clean.values.shape}"
        )


def spectral_loss(est: dsp.ComplexSpectrogram, clean: dsp.ComplexSpectrogram) -> float:
    """Mean over TF bins of (|E|^c - |S|^c)^2 + |E|^c e^{j angE} - |S|^c e^{j angS}|^2."""
    _check_spectrograms(est, clean)
    return float(spectral_loss_core(
        np.real(est.values), np.imag(est.values),
        np.real(clean.values), np.imag(clean.values),
    ))


def oversuppression_loss(est: dsp.ComplexSpectrogram, clean: dsp.ComplexSpectrogram) -> float:
    """Penalizes only under-estimation of clean speech energy (max(|S|^c-|E|^c, 0)^2)."""
    _check_spectrograms(est, clean)
    return float(oversuppression_loss_core(
        np.real(est.values), np.imag(est.values),
        np.real(clean.values), np.imag(clean.values),
    ))


def multires_loss(est_audio, clean_audio) -> float:
    """Sum of the spectral loss over 5/10/20/40 ms Hann windows at 50% overlap."""
    if est_audio.sample_rate != clean_audio.sample_rate:
        raise DomainError("sample rates differ")
    if est_audio.samples.shape != clean_audio.samples.shape:
        raise DomainError(
            f"lengths differ: {est_audio.samples.shape[0]} vs {clean_audio.samples.shape[0]}"
        )
    return float(multires_loss_core(
        est_audio.samples.astype(np.float64),
        clean_audio.samples.astype(np.float64),
        est_audio.sample_rate,
    ))


def combined_loss(est: dsp.ComplexSpectrogram, clean: dsp.ComplexSpectrogram,
                  est_audio, clean_audio, w: LossWeights = LossWeights()) -> float:
    """lambda_spec * L_spec + lambda_MR * L_MR + lambda_OS * L_OS."""
    return (
        w.lambda_spec * spectral_loss(est, clean)
        + w.lambda_mr * multires_loss(est_audio, clean_audio)
        + w.lambda_os * oversuppression_loss(est, clean)
    )


def combined_loss_core(est_re, est_im, clean_spec: np.ndarray,
                       est_audio, clean_audio: np.ndarray,
                       sample_rate: int, w: LossWeights):
    """Graph-mode combined loss; est_* may be Vars, clean sides are constants."""
    clean_re, clean_im = np.real(clean_spec), np.imag(clean_spec)
    total = ad.mul(spectral_loss_core(est_re, est_im, clean_re, clean_im), w.lambda_spec)
    if w.lambda_mr != 0.0:
        total = ad.add(total, ad.mul(
            multires_loss_core(est_audio, clean_audio, sample_rate), w.lambda_mr))
    if w.lambda_os != 0.0:
        total = ad.add(total, ad.mul(
            oversuppression_loss_core(est_re, est_im, clean_re, clean_im), w.lambda_os))
    return total
