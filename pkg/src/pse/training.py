"""Desk-scale training loop: Adam, per-epoch batch doubling, early stopping.

The loop is deterministic under a fixed seed: shuffling comes from one
seeded generator, batches are walked in order, and gradients accumulate
clip by clip (datasets are variable-length, so batching is accumulation,
not tensor stacking).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dsp
from .audio_io import AudioBuffer, atomic_output
from .container import ParamStore, save_container
from .errors import ConfigurationError, TrainingError, UsageError
from .losses import LossWeights, combined_loss_core
from .model import Model, SpeakerEmbedding


@dataclass
class TrainExample:
    mixture: AudioBuffer
    clean: AudioBuffer
    embedding: SpeakerEmbedding | None


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_start: int = 8
    batch_cap: int = 128
    patience: int = 15
    max_epochs: int = 30
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for name in ("batch_start", "batch_cap"):
            v = getattr(self, name)
            if v < 1 or (v & (v - 1)) != 0:
                raise ConfigurationError(f"{name} must be a power of two, got {v}")
        if not (self.batch_start <= self.batch_cap):
            raise ConfigurationError("batch_start must not exceed batch_cap")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")


def batch_size_for_epoch(epoch_index: int, tc: TrainConfig) -> int:
    """8, 16, 32, 64, 128, 128, ... independent of dataset size."""
    return min(tc.batch_start * (2 ** epoch_index), tc.batch_cap)


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1 ** self.t)
            vhat = self.v[name] / (1 - b2 ** self.t)
            p -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p)


def clip_loss_graph(model: Model, example: TrainExample, params: dict,
                    weights: LossWeights):
    """Full forward graph for one clip: features -> net -> gains/taps ->
    deep filter -> iSTFT -> combined loss. Returns the scalar loss Var."""
    d = model.cfg.dsp
    mix = example.mixture.samples.astype(np.float64)
    clean = example.clean.samples.astype(np.float64)
    spec = dsp.stft_array(mix, d.win, d.hop, d.n_fft)
    clean_spec = dsp.stft_array(clean, d.win, d.hop, d.n_fft)
    state = dsp.NormState()
    erb_vals, comp_vals = model.features(spec, state)
    emb_values = example.embedding.values if example.embedding is not None else None
    gains, taps_re, taps_im = model.forward_sequence(erb_vals, comp_vals, emb_values, params)
    est_re, est_im = model.apply_enhancement(
        np.real(spec), np.imag(spec), gains, taps_re, taps_im
    )
    window = dsp.hann_window(d.win)
    est_audio = ad.istft_graph(est_re, est_im, d.win, d.hop, d.n_fft, window)
    frames = spec.shape[0]
    clean_pad = np.zeros(frames * d.hop)
    clean_pad[: clean.shape[0]] = clean
    return combined_loss_core(est_re, est_im, clean_spec, est_audio, clean_pad,
                              d.sample_rate, weights)


def dataset_loss(model: Model, dataset: list, weights: LossWeights,
                 params: dict | None = None) -> float:
    """Mean combined loss over a dataset, forward-only (no graph)."""
    if params is None:
        params = {k: v.astype(np.float64) for k, v in model.params.tensors.items()}
    total = 0.0
    for example in dataset:
        total += float(ad.val(clip_loss_graph(model, example, params, weights)))
    return total / len(dataset)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    batch_size: int


def write_history_csv(history: list, path) -> None:
    with atomic_output(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "batch_size"])
            for rec in history:
                writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss),
                                 rec.batch_size])


def toy_train(model: Model, train_set: list, val_set: list, tc: TrainConfig,
              checkpoint_dir=None, log=None) -> tuple:
    """Train in place on (mixture, clean, embedding) triplets.

    Returns (best ParamStore, list[EpochRecord]). Stops after `patience`
    consecutive epochs without validation improvement; the returned
    parameters are the best-validation snapshot, never a later one.
    """
    if not train_set:
        raise UsageError("training set is empty")
    if not val_set:
        raise UsageError("validation set is empty")
    rng = np.random.default_rng(tc.seed)
    params = {k: v.astype(np.float64) for k, v in model.params.tensors.items()}
    opt = Adam(tc.lr, tc.weight_decay)
    history: list[EpochRecord] = []
    best_val = np.inf
    best_params: dict | None = None
    bad_epochs = 0
    global_step = 0
    for epoch_index in range(tc.max_epochs):
        epoch = epoch_index + 1
        bs = batch_size_for_epoch(epoch_index, tc)
        order = rng.permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), bs):
            batch = order[start:start + bs]
            leaves = {name: ad.leaf(arr) for name, arr in params.items()}
            for idx in batch:
                loss = clip_loss_graph(model, train_set[int(idx)], leaves, tc.weights)
                value = float(loss.value)
                if not np.isfinite(value):
                    raise TrainingError("non-finite training loss", step_index=global_step)
                epoch_losses.append(value)
                ad.backward(loss, seed=1.0 / len(batch))
            grads = {
                name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
                for name, leaf in leaves.items()
            }
            opt.step(params, grads)
            global_step += 1
        train_loss = float(np.mean(epoch_losses))
        val_loss = dataset_loss(model, val_set, tc.weights, params)
        if not np.isfinite(val_loss):
            raise TrainingError("non-finite validation loss", step_index=global_step)
        history.append(EpochRecord(epoch, train_loss, val_loss, bs))
        if log is not None:
            log(f"epoch {epoch}: train {train_loss:.4f}  val {val_loss:.4f}  batch {bs}")
        if checkpoint_dir is not None:
            store = ParamStore({k: v.copy() for k, v in params.items()},
                               {"epoch": str(epoch), "val_loss": repr(val_loss)})
            save_container(store, os.path.join(checkpoint_dir, f"epoch_{epoch:04d}.pdf2"))
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tc.patience:
                break
    assert best_params is not None
    store = ParamStore(best_params, dict(model.params.metadata))
    return store, history
