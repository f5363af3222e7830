"""PNG figures rendered next to the tab-separated command output."""

from __future__ import annotations

import io as _io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    buf = _io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def training_figure(log, path) -> None:
    """Loss and accuracy (plus mIoU when present) per epoch."""
    epochs = [e.epoch for e in log]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8, 3))
    ax_loss.plot(epochs, [e.loss for e in log], marker="o", ms=3)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy")
    ax_acc.plot(epochs, [e.accuracy for e in log], marker="o", ms=3, label="accuracy")
    if log and log[0].miou is not None:
        ax_acc.plot(epochs, [e.miou for e in log], marker="s", ms=3, label="mIoU")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def evaluation_figure(result, rotation_mode: str, path) -> None:
    """Per-class accuracy bars."""
    classes = sorted(result.per_class_accuracy)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar([str(c) for c in classes], [result.per_class_accuracy[c] for c in classes], color="tab:blue")
    ax.axhline(result.accuracy, color="k", ls="--", lw=1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("class")
    ax.set_ylabel("accuracy")
    ax.set_title(f"rotation: {rotation_mode}")
    fig.tight_layout()
    _save(fig, path)


def ablation_figure(axis: str, rows, path) -> None:
    """Grouped bars of accuracy and mIoU for each setting of one axis."""
    labels = [str(v) for v, _ in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar([i - 0.2 for i in x], [r.accuracy for _, r in rows], width=0.4, label="accuracy")
    if rows and rows[0][1].miou_instance is not None:
        ax.bar([i + 0.2 for i in x], [r.miou_instance for _, r in rows], width=0.4, label="mIoU")
    ax.set_xticks(list(x), labels)
    ax.set_xlabel(axis)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)
