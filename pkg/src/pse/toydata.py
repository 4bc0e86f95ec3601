"""Synthetic toy speakers with distinct spectral envelopes.

Each "speaker" is a harmonic source with a fixed fundamental and two
formant-like spectral bumps, amplitude-modulated at syllable-ish rates.
The envelopes are chosen so different speakers occupy mostly disjoint
bands, which makes personalization effects visible at toy scale. All
output is deterministic in (speaker, seed).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, write_wav

# (f0 Hz, (formant centers Hz), formant width factor)
_PROFILES = (
    (120.0, (280.0, 640.0), 0.22),
    (235.0, (2100.0, 3600.0), 0.18),
    (165.0, (480.0, 1050.0), 0.22),
    (305.0, (2700.0, 4300.0), 0.18),
)


def speaker_profile(speaker: int):
    return _PROFILES[speaker % len(_PROFILES)]


def utterance(speaker: int, seconds: float, sr: int, seed: int) -> AudioBuffer:
    """One synthetic utterance for a speaker."""
    rng = np.random.default_rng([speaker, seed])
    f0, formants, width = speaker_profile(speaker)
    f0 = f0 * (1.0 + 0.04 * (rng.random() - 0.5))
    n = int(round(seconds * sr))
    t = np.arange(n) / sr
    limit = min(0.45 * sr, 1.6 * max(formants))
    signal = np.zeros(n)
    h = 1
    while h * f0 < limit:
        fh = h * f0
        amp = sum(np.exp(-0.5 * ((fh - fc) / (width * fc + 40.0)) ** 2) for fc in formants)
        if amp > 1e-3:
            signal += amp * np.sin(2.0 * np.pi * fh * t + rng.uniform(0, 2 * np.pi))
        h += 1
    syllable = 0.5 + 0.5 * np.sin(2.0 * np.pi * rng.uniform(1.5, 3.0) * t
                                  + rng.uniform(0, 2 * np.pi))
    slow = 0.6 + 0.4 * np.sin(2.0 * np.pi * rng.uniform(0.2, 0.6) * t
                              + rng.uniform(0, 2 * np.pi))
    signal *= 0.35 + 0.65 * syllable * slow
    signal += 1e-3 * rng.standard_normal(n)
    peak = np.max(np.abs(signal))
    signal *= rng.uniform(0.35, 0.55) / peak
    return AudioBuffer(signal.astype(np.float32), sr)


def noise_clip(seconds: float, sr: int, seed: int) -> AudioBuffer:
    """Colored noise: white noise through a random one-pole lowpass."""
    rng = np.random.default_rng([7777, seed])
    n = int(round(seconds * sr))
    white = rng.standard_normal(n)
    pole = rng.uniform(0.8, 0.98)
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = pole * acc + (1.0 - pole) * white[i]
        out[i] = acc
    out /= np.max(np.abs(out))
    return AudioBuffer((0.35 * out).astype(np.float32), sr)


def build_toy_corpus(root, sr: int = 16000, speakers=(0, 1), utts: int = 4,
                     utt_secs: float = 6.0, noises: int = 4, seed: int = 0) -> dict:
    """Write target/interferer/noise trees plus enrollment clips.

    Both speech roles hold the same speaker set, so the mixer's
    same-speaker exclusion forces every interferer to be the other speaker
    and the enrollment embedding is the only cue to the target.
    """
    root = Path(root)
    paths = {
        "targets": root / "targets",
        "interferers": root / "interferers",
        "noise": root / "noise",
        "enroll": root / "enroll",
    }
    for speaker in speakers:
        name = f"s{speaker}"
        for role, base_seed in (("targets", 1000), ("interferers", 2000)):
            d = paths[role] / name
            d.mkdir(parents=True, exist_ok=True)
            for j in range(utts):
                write_wav(d / f"utt_{j:02d}.wav",
                          utterance(speaker, utt_secs, sr, seed + base_seed + j))
        paths["enroll"].mkdir(parents=True, exist_ok=True)
        write_wav(paths["enroll"] / f"{name}.wav",
                  utterance(speaker, 4.0, sr, seed + 9000))
    paths["noise"].mkdir(parents=True, exist_ok=True)
    for j in range(noises):
        write_wav(paths["noise"] / f"noise_{j:02d}.wav",
                  noise_clip(utt_secs, sr, seed + 3000 + j))
    return {k: str(v) for k, v in paths.items()}


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Generate a synthetic toy corpus.")
    parser.add_argument("--out", required=True)
    parser.add_argument("--sr", type=int, default=16000)
    parser.add_argument("--speakers", type=int, default=2)
    parser.add_argument("--utts", type=int, default=4)
    parser.add_argument("--utt-secs", type=float, default=6.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = build_toy_corpus(args.out, sr=args.sr, speakers=tuple(range(args.speakers)),
                             utts=args.utts, utt_secs=args.utt_secs, seed=args.seed)
    for role, path in paths.items():
        print(f"{role}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
