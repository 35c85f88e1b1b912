"""Report figures rendered to files next to the delimited outputs.

Everything draws through the Agg backend so the CLI works headless.
Figures are presentation only; the CSV/JSON copies stay authoritative.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

Array = np.ndarray


def confusion_figure(confusion: Array, path) -> str:
    cm = np.asarray(confusion, dtype=np.int64)
    k = cm.shape[0]
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(cm, cmap="Blues")
    threshold = cm.max() / 2 if cm.max() else 0.5
    for i in range(k):
        for j in range(k):
            color = "white" if cm[i, j] > threshold else "black"
            ax.text(j, i, str(cm[i, j]), ha="center", va="center",
                    color=color, fontsize=9)
    ax.set_xticks(range(k), [f"G{j}" for j in range(k)])
    ax.set_yticks(range(k), [f"G{i}" for i in range(k)])
    ax.set_xlabel("predicted grade")
    ax.set_ylabel("true grade")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def curves_figure(fold_logs: list[list], path) -> str:
    """Training loss and validation accuracy per fold over epochs."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8.2, 3.4))
    for fold, rows in enumerate(fold_logs):
        epochs = [r.epoch for r in rows]
        ax_loss.plot(epochs, [r.train_loss for r in rows], alpha=0.8)
        ax_acc.plot(epochs, [r.val_accuracy for r in rows], alpha=0.8,
                    label=f"fold {fold}")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("val accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    if fold_logs:
        ax_acc.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def saliency_figure(image: Array, saliency: Array, path) -> str:
    """Input image with the patch-attention mass overlaid as a heat layer."""
    img = np.asarray(image, dtype=np.float32)
    sal = np.asarray(saliency, dtype=np.float64)
    h, w = img.shape
    gh, gw = sal.shape
    rows = (np.arange(h) * gh // h).clip(0, gh - 1)
    cols = (np.arange(w) * gw // w).clip(0, gw - 1)
    upsampled = sal[np.ix_(rows, cols)]
    fig, (ax_img, ax_sal) = plt.subplots(1, 2, figsize=(6.6, 3.2))
    ax_img.imshow(img, cmap="gray", vmin=0.0, vmax=1.0)
    ax_img.set_title("input", fontsize=9)
    ax_sal.imshow(img, cmap="gray", vmin=0.0, vmax=1.0)
    ax_sal.imshow(upsampled, cmap="inferno", alpha=0.45)
    ax_sal.set_title("attention mass", fontsize=9)
    for ax in (ax_img, ax_sal):
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
