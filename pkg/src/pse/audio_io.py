"""Mono WAV input/output (PCM 16-bit and 32-bit float, little-endian)."""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import DataError, DomainError


@dataclass
class AudioBuffer:
    """Linear-PCM samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise DomainError(f"audio must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise DomainError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise DomainError("audio contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def astype(self, dtype) -> "AudioBuffer":
        return AudioBuffer(self.samples.astype(dtype), self.sample_rate)


@contextmanager
def atomic_output(path: str | os.PathLike, suffix: str = ""):
    """Write to a temp file in the target directory, rename into place on success."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=suffix or os.path.splitext(path)[1])
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_wav(path: str | os.PathLike) -> AudioBuffer:
    """Read a mono WAV file. Accepts PCM16 and float32; rejects anything else."""
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(
            f"{path}: expected mono audio, got {data.shape[1]} channels"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise DataError(
            f"{path}: unsupported sample format {data.dtype}; only PCM16 and float32 are handled"
        )
    return AudioBuffer(samples, int(rate))


def write_wav(path: str | os.PathLike, audio: AudioBuffer, pcm16: bool = False) -> None:
    """Write mono WAV, float32 by default, atomically (no partial files on error)."""
    if pcm16:
        scaled = np.round(audio.samples * 32768.0)
        data = np.clip(scaled, -32768, 32767).astype(np.int16)
    else:
        data = audio.samples.astype(np.float32)
    with atomic_output(path, suffix=".wav") as tmp:
        wavfile.write(tmp, int(audio.sample_rate), data)
