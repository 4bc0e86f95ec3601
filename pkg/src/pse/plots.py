"""Figure rendering for the report paths (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .audio_io import atomic_output

SUBSET_ORDER = ("pn", "ps", "psn")


def _save(fig, path: str) -> None:
    with atomic_output(path, suffix=".png") as tmp:
        fig.savefig(tmp, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_eval_boxplot(report, path: str) -> None:
    """Per-subset box plots of STOI and SI-SDR, one panel per metric."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, metric, label in zip(
        axes, ("stoi", "si_sdr_db"), ("STOI", "SI-SDR (dB)")
    ):
        data, labels = [], []
        for subset in SUBSET_ORDER:
            rows = report.subset_rows(subset)
            if rows:
                data.append([getattr(r, metric) for r in rows])
                labels.append(f"{subset}\n(n={len(rows)})")
        if data:
            ax.boxplot(data, tick_labels=labels, whis=(0, 100))
        ax.set_title(label)
        ax.grid(True, axis="y", alpha=0.3)
    fig.suptitle("Per-subset enhancement scores")
    _save(fig, path)


def render_loss_curves(history, path: str) -> None:
    """Train/validation loss per epoch with the batch-size schedule annotated."""
    epochs = [rec.epoch for rec in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [rec.train_loss for rec in history], marker="o", label="train")
    ax.plot(epochs, [rec.val_loss for rec in history], marker="s", label="validation")
    for rec in history:
        ax.annotate(str(rec.batch_size), (rec.epoch, rec.train_loss),
                    textcoords="offset points", xytext=(0, 6), fontsize=7)
    ax.set_xlabel("epoch")
    ax.set_ylabel("combined loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.suptitle("Training curve (batch size annotated)")
    _save(fig, path)
