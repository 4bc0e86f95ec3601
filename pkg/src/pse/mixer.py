"""Mixture synthesis: category draws, SNR/SIR leveling, dataset generation.

Three clip categories: target+noise (pn), target+interferer (ps), and
target+interferer+noise (psn), drawn 20/30/50 by default. Levels come from
a truncated normal (training recipe) or uniform draw (test recipe) over
SNR in [-5, 35] dB and SIR in [-5, 25] dB. SNR is defined against
target-plus-scaled-interferer as the signal. Power measurements exclude
silence more than 50 dB below each clip's peak.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, atomic_output, read_wav, write_wav
from .errors import DomainError, UsageError

log = logging.getLogger(__name__)

CATEGORIES = ("target_noise", "target_interferer", "target_interferer_noise")
SUBSET_TAGS = {"target_noise": "pn", "target_interferer": "ps",
               "target_interferer_noise": "psn"}
SNR_RANGE = (-5.0, 35.0)
SIR_RANGE = (-5.0, 25.0)
# Silence exclusion threshold, relative to the clip's own peak power so that
# activity masks (and therefore measured levels) are scale-invariant.
ACTIVE_THRESHOLD_DB = -50.0
PEAK_LIMIT = 0.99
MANIFEST_FIELDS = ("clip", "clean", "category", "snr_db", "sir_db",
                   "target_speaker", "interferer_speaker", "seed")


@dataclass(frozen=True)
class CategoryDistribution:
    weights: tuple = (0.20, 0.30, 0.50)
    draw_mode: str = "gaussian"

    def __post_init__(self):
        if len(self.weights) != 3 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise DomainError("category weights must be 3 values summing to 1")
        if self.draw_mode not in ("gaussian", "uniform"):
            raise DomainError(f"draw_mode must be gaussian or uniform, got {self.draw_mode!r}")


@dataclass
class MixSpec:
    category: str
    snr_db: float | None
    sir_db: float | None
    target_ref: str
    interferer_ref: str | None
    noise_ref: str | None
    target_speaker: str
    interferer_speaker: str | None
    seed: int


@dataclass
class CorpusIndex:
    """Per-role file lists; speech roles are keyed by speaker (subfolder name)."""

    targets: dict = field(default_factory=dict)      # speaker -> [paths]
    interferers: dict = field(default_factory=dict)  # speaker -> [paths]
    noises: list = field(default_factory=list)


def _draw_level(rng: np.random.Generator, lo: float, hi: float, mode: str) -> float:
    if mode == "uniform":
        return float(rng.uniform(lo, hi))
    mean = 0.5 * (lo + hi)
    sd = (hi - lo) / 4.0
    while True:  # rejection keeps the draw inside the stated interval
        x = float(rng.normal(mean, sd))
        if lo <= x <= hi:
            return x


def draw_mix_spec(rng: np.random.Generator, dist: CategoryDistribution,
                  corpus: CorpusIndex) -> MixSpec:
    """Sample one mixture recipe; the interferer speaker never matches the target."""
    if not corpus.targets:
        raise UsageError("corpus has no target speakers")
    category = CATEGORIES[int(rng.choice(3, p=np.asarray(dist.weights)))]
    needs_interf = category != "target_noise"
    needs_noise = category != "target_interferer"
    if needs_noise and not corpus.noises:
        raise UsageError("corpus has no noise files")
    target_speakers = sorted(corpus.targets)
    target_speaker = target_speakers[int(rng.integers(len(target_speakers)))]
    target_ref = _pick(rng, corpus.targets[target_speaker])
    interferer_ref = interferer_speaker = None
    if needs_interf:
        choices = sorted(s for s in corpus.interferers if s != target_speaker)
        if not choices:
            raise UsageError(
                f"no interferer speaker distinct from target {target_speaker!r}"
            )
        interferer_speaker = choices[int(rng.integers(len(choices)))]
        interferer_ref = _pick(rng, corpus.interferers[interferer_speaker])
    noise_ref = _pick(rng, corpus.noises) if needs_noise else None
    snr = _draw_level(rng, *SNR_RANGE, dist.draw_mode) if needs_noise else None
    sir = _draw_level(rng, *SIR_RANGE, dist.draw_mode) if needs_interf else None
    return MixSpec(category, snr, sir, target_ref, interferer_ref, noise_ref,
                   target_speaker, interferer_speaker,
                   seed=int(rng.integers(2 ** 62)))


def _pick(rng: np.random.Generator, items: list) -> str:
    return items[int(rng.integers(len(items)))]


def active_power(samples: np.ndarray) -> float:
    """Mean power over active samples (above -50 dB relative to the peak)."""
    power = samples.astype(np.float64) ** 2
    active = power > power.max() * 10.0 ** (ACTIVE_THRESHOLD_DB / 10.0)
    if not np.any(active):
        return 0.0
    return float(np.mean(power[active]))


def measure_level_db(signal: np.ndarray, contaminant: np.ndarray) -> float:
    """Measured SNR/SIR between two already-scaled components."""
    ps = active_power(signal)
    pc = active_power(contaminant)
    if ps <= 0.0 or pc <= 0.0:
        raise DomainError("cannot measure a level against a silent component")
    return 10.0 * np.log10(ps / pc)


def scale_for_snr(target: AudioBuffer, contaminant: AudioBuffer, level_db: float) -> float:
    """Gain for the contaminant so that 10*log10(P_t / P_c') = level_db."""
    pt = active_power(target.samples)
    pc = active_power(contaminant.samples)
    if pt <= 0.0:
        raise DomainError("target signal is silent")
    if pc <= 0.0:
        raise DomainError("contaminant signal is silent")
    return float(np.sqrt(pt / (pc * 10.0 ** (level_db / 10.0))))


@dataclass
class MixtureResult:
    mixture: AudioBuffer
    clean_target: AudioBuffer
    interferer_scaled: np.ndarray | None
    noise_scaled: np.ndarray | None
    norm_scale: float


def _crop(rng: np.random.Generator, audio: AudioBuffer, n: int) -> np.ndarray:
    if audio.samples.shape[0] < n:
        raise DomainError(
            f"source shorter than clip length ({audio.samples.shape[0]} < {n} samples)"
        )
    start = int(rng.integers(audio.samples.shape[0] - n + 1))
    return audio.samples[start:start + n].astype(np.float64)


def synthesize_mixture(spec: MixSpec, target: AudioBuffer,
                       interferer: AudioBuffer | None = None,
                       noise: AudioBuffer | None = None,
                       clip_secs: float = 5.0) -> MixtureResult:
    """Crop, level, and sum sources per the spec; peak-limit to 0.99 with one
    scalar applied to mixture and clean target alike."""
    sr = target.sample_rate
    n = int(round(clip_secs * sr))
    rng = np.random.default_rng(spec.seed)
    t = _crop(rng, target, n)
    if active_power(t) <= 0.0:
        raise DomainError("target crop is silent; cannot set mixture levels")
    partial = t.copy()
    interf_scaled = None
    if spec.category != "target_noise":
        if interferer is None:
            raise UsageError(f"category {spec.category} needs an interferer source")
        i = _crop(rng, interferer, n)
        gain_sir = scale_for_snr(AudioBuffer(t, sr), AudioBuffer(i, sr), spec.sir_db)
        interf_scaled = gain_sir * i
        partial = partial + interf_scaled
    noise_scaled = None
    if spec.category != "target_interferer":
        if noise is None:
            raise UsageError(f"category {spec.category} needs a noise source")
        d = _crop(rng, noise, n)
        gain_snr = scale_for_snr(AudioBuffer(partial, sr), AudioBuffer(d, sr), spec.snr_db)
        noise_scaled = gain_snr * d
    mixture = partial + (noise_scaled if noise_scaled is not None else 0.0)
    peak = float(np.max(np.abs(mixture)))
    scale = min(1.0, PEAK_LIMIT / peak) if peak > 0 else 1.0
    return MixtureResult(
        mixture=AudioBuffer(mixture * scale, sr),
        clean_target=AudioBuffer(t * scale, sr),
        interferer_scaled=None if interf_scaled is None else interf_scaled * scale,
        noise_scaled=None if noise_scaled is None else noise_scaled * scale,
        norm_scale=scale,
    )


def index_corpus(target_dir, interf_dir=None, noise_dir=None,
                 min_secs: float = 0.0) -> CorpusIndex:
    """Scan role directories. Speech roles use per-speaker subfolders; noise is
    any WAV below its root. Unreadable or too-short files are skipped with a
    warning."""
    corpus = CorpusIndex()
    corpus.targets = _index_speakers(Path(target_dir), min_secs)
    if interf_dir is not None:
        corpus.interferers = _index_speakers(Path(interf_dir), min_secs)
    if noise_dir is not None:
        corpus.noises = [p for p in _iter_wavs(Path(noise_dir), min_secs)]
    return corpus


def _usable(path: Path, min_secs: float) -> bool:
    try:
        audio = read_wav(path)
    except Exception as exc:
        log.warning("skipping unreadable audio %s: %s", path, exc)
        return False
    if audio.duration_s < min_secs:
        log.warning("skipping %s: %.2fs shorter than clip length %.2fs",
                    path, audio.duration_s, min_secs)
        return False
    return True


def _iter_wavs(root: Path, min_secs: float):
    for path in sorted(root.rglob("*.wav")):
        if _usable(path, min_secs):
            yield str(path)


def _index_speakers(root: Path, min_secs: float) -> dict:
    speakers = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        files = list(_iter_wavs(sub, min_secs))
        if files:
            speakers[sub.name] = files
    return speakers


def _format_db(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def write_manifest(rows: list, path) -> None:
    with atomic_output(path) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\t".join(MANIFEST_FIELDS) + "\n")
            for row in rows:
                fh.write("\t".join(row) + "\n")


@dataclass
class ManifestEntry:
    clip: str
    clean: str
    category: str
    snr_db: float | None
    sir_db: float | None
    target_speaker: str
    interferer_speaker: str | None
    seed: int


def read_manifest(path) -> list:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != list(MANIFEST_FIELDS):
            raise UsageError(f"unexpected manifest header in {path}: {header}")
        base = os.path.dirname(os.fspath(path))
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(MANIFEST_FIELDS):
                raise UsageError(f"malformed manifest line in {path}: {line!r}")
            clip, clean, category, snr, sir, tspk, ispk, seed = parts
            entries.append(ManifestEntry(
                clip=os.path.join(base, clip), clean=os.path.join(base, clean),
                category=category,
                snr_db=float(snr) if snr else None,
                sir_db=float(sir) if sir else None,
                target_speaker=tspk, interferer_speaker=ispk or None,
                seed=int(seed),
            ))
    return entries


def generate_dataset(target_dir, interf_dir, noise_dir, hours: float,
                     dist: CategoryDistribution, seed: int, out_dir,
                     clip_secs: float = 5.0) -> str:
    """Synthesize hours of clips into out_dir; returns the manifest path.

    Deterministic under seed: every clip gets its own generator derived from
    (seed, clip index), so the output is byte-identical across reruns.
    """
    corpus = index_corpus(target_dir, interf_dir, noise_dir, min_secs=clip_secs)
    if not corpus.targets:
        raise UsageError(f"no usable target audio under {target_dir}")
    n_clips = int(round(hours * 3600.0 / clip_secs))
    if n_clips < 1:
        raise UsageError("requested duration yields zero clips")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n_clips):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        spec = draw_mix_spec(rng, dist, corpus)
        target = read_wav(spec.target_ref)
        interferer = read_wav(spec.interferer_ref) if spec.interferer_ref else None
        noise = read_wav(spec.noise_ref) if spec.noise_ref else None
        result = synthesize_mixture(spec, target, interferer, noise, clip_secs)
        clip_name = f"clip_{i:06d}.wav"
        clean_name = f"clean_{i:06d}.wav"
        write_wav(out / clip_name, result.mixture.astype(np.float32))
        write_wav(out / clean_name, result.clean_target.astype(np.float32))
        rows.append((
            clip_name, clean_name, spec.category,
            _format_db(spec.snr_db), _format_db(spec.sir_db),
            spec.target_speaker, spec.interferer_speaker or "", str(spec.seed),
        ))
    manifest_path = out / "manifest.tsv"
    write_manifest(rows, manifest_path)
    return str(manifest_path)
