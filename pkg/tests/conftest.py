import numpy as np
import pytest

from pse import dsp
from pse.audio_io import AudioBuffer
from pse.model import ModelConfig, SpeakerEmbedding


@pytest.fixture(scope="session")
def cfg16k():
    """Small-sample-rate config used for fast tests; same df_bins as 48 kHz."""
    return dsp.DspConfig(sample_rate=16000)


@pytest.fixture(scope="session")
def cfg48k():
    return dsp.DspConfig()


def tiny_model_config(variant: str, seed: int = 1, sr: int = 16000) -> ModelConfig:
    return ModelConfig(
        dsp=dsp.DspConfig(sample_rate=sr),
        variant=variant,
        conv_channels=8,
        erb_gru_hidden=32,
        df_gru_hidden=32,
        seed=seed,
    )


def noise_buffer(seconds: float, sr: int, seed: int = 0, level: float = 0.1) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sr))
    return AudioBuffer((level * rng.standard_normal(n)).astype(np.float64), sr)


def random_embedding(seed: int = 0) -> SpeakerEmbedding:
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(192)
    return SpeakerEmbedding(vec / np.linalg.norm(vec))


def speechlike_buffer(seconds: float, sr: int, seed: int = 0) -> AudioBuffer:
    """Modulated harmonic signal; has the band variance STOI segments need."""
    from pse.toydata import utterance

    return utterance(seed % 4, seconds, sr, seed)
