"""Evaluation over manifests (pn/ps/psn subset report) and complexity benchmarking."""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioBuffer, atomic_output, read_wav
from .container import load_embedding
from .errors import UsageError
from .layers import count_macs, count_params
from .metrics import si_sdr, stoi
from .mixer import SUBSET_TAGS, read_manifest
from .model import Model, SpeakerEmbedding, StreamingEnhancer

SUBSETS = ("pn", "ps", "psn")


@dataclass
class ClipScore:
    clip: str
    subset: str
    stoi: float
    si_sdr_db: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def subset_rows(self, subset: str) -> list:
        return [r for r in self.rows if r.subset == subset]

    def aggregates(self) -> dict:
        out = {}
        for subset in SUBSETS:
            rows = self.subset_rows(subset)
            if not rows:
                continue
            out[subset] = {
                "count": len(rows),
                "stoi": _stats([r.stoi for r in rows]),
                "si_sdr_db": _stats([r.si_sdr_db for r in rows]),
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["clip", "subset", "stoi", "si_sdr_db"])
        for r in self.rows:
            writer.writerow([r.clip, r.subset, f"{r.stoi:.6f}", f"{r.si_sdr_db:.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = ["subset  n      metric     mean   median       q1       q3      min      max"]
        for subset, agg in self.aggregates().items():
            for metric in ("stoi", "si_sdr_db"):
                s = agg[metric]
                lines.append(
                    f"{subset:<6}  {agg['count']:<5}  {metric:<9}"
                    + "".join(f" {s[k]:8.3f}" for k in
                              ("mean", "median", "q1", "q3", "min", "max"))
                )
        return "\n".join(lines) + "\n"

    def write(self, prefix: str) -> list:
        """Emit <prefix>.csv and <prefix>.txt; returns the written paths."""
        paths = []
        for suffix, payload in ((".csv", self.to_csv()), (".txt", self.to_text())):
            path = prefix + suffix
            with atomic_output(path) as tmp:
                with open(tmp, "w", encoding="utf-8") as fh:
                    fh.write(payload)
            paths.append(path)
        return paths


def _stats(values: list) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "q1": float(np.percentile(arr, 25)),
        "q3": float(np.percentile(arr, 75)),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


class IdentityEnhancer:
    """Pass-through enhancer; scores it produces are the raw-mixture scores."""

    wants_embedding = False
    variant = "identity"

    def enhance_offline(self, audio: AudioBuffer, emb=None) -> AudioBuffer:
        return audio


def load_speaker_embeddings(embeddings_dir, speakers) -> dict:
    """Load <speaker>.emb per speaker; missing speakers raise a usage error."""
    table = {}
    missing = []
    for speaker in sorted(set(speakers)):
        path = os.path.join(os.fspath(embeddings_dir), f"{speaker}.emb")
        if not os.path.exists(path):
            missing.append(speaker)
            continue
        table[speaker] = SpeakerEmbedding(load_embedding(path))
    if missing:
        raise UsageError(
            "missing embeddings for speaker(s): " + ", ".join(missing)
        )
    return table


def evaluate(enhancer, manifest_path, embeddings_dir=None, jobs: int = 1) -> EvalReport:
    """Enhance every manifest clip with its target's enrollment embedding and
    score STOI / SI-SDR per pn/ps/psn subset."""
    entries = read_manifest(manifest_path)
    wants = getattr(enhancer, "wants_embedding", False)
    table = {}
    if wants:
        if embeddings_dir is None:
            raise UsageError("this model needs --embeddings-dir")
        table = load_speaker_embeddings(
            embeddings_dir, [e.target_speaker for e in entries]
        )

    def score(entry):
        mixture = read_wav(entry.clip)
        clean = read_wav(entry.clean)
        emb = table[entry.target_speaker] if wants else None
        est = enhancer.enhance_offline(mixture, emb)
        return ClipScore(
            clip=os.path.basename(entry.clip),
            subset=SUBSET_TAGS[entry.category],
            stoi=stoi(clean, est),
            si_sdr_db=si_sdr(clean, est),
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(score, entries))
    else:
        rows = [score(e) for e in entries]
    return EvalReport(rows)


# ---------------------------------------------------------------------------
# Complexity


@dataclass
class ComplexityReport:
    variant: str
    params: int
    macs_per_s: int
    rtf: float

    CSV_HEADER = "variant,params,macs_per_s,rtf"

    def csv_row(self) -> str:
        return f"{self.variant},{self.params},{self.macs_per_s},{self.rtf:.6f}"


def measure_rtf(model: Model, seconds: float = 30.0, repetitions: int = 5,
                seed: int = 0) -> ComplexityReport:
    """Median wall-time / audio-time over single-threaded streaming runs.

    Uses seeded noise input and a seeded unit embedding when the variant is
    personalized; a short warm-up run is excluded from timing. File I/O never
    enters the loop.
    """
    d = model.cfg.dsp
    rng = np.random.default_rng(seed)
    audio = AudioBuffer(
        (0.1 * rng.standard_normal(int(seconds * d.sample_rate))).astype(np.float32),
        d.sample_rate,
    )
    emb = None
    if model.wants_embedding:
        vec = rng.standard_normal(model.cfg.embedding_dim)
        emb = SpeakerEmbedding(vec / np.linalg.norm(vec))
    warm = AudioBuffer(audio.samples[: d.sample_rate], d.sample_rate)
    StreamingEnhancer(model, emb).process(warm)
    times = []
    for _ in range(max(1, repetitions)):
        enhancer = StreamingEnhancer(model, emb)
        t0 = time.perf_counter()
        enhancer.process(audio)
        times.append(time.perf_counter() - t0)
    description = model.description()
    return ComplexityReport(
        variant=model.variant,
        params=count_params(description),
        macs_per_s=count_macs(description, d),
        rtf=float(np.median(times)) / audio.duration_s,
    )
