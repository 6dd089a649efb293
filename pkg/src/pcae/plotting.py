"""Static report figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_history(history, path):
    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.total for r in history], label="total")
    ax.plot(epochs, [r.local for r in history], label="local", ls="--")
    ax.plot(epochs, [r.global_ for r in history], label="global", ls=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("Chamfer loss")
    ax.set_yscale("log")
    ax.legend()
    return _save(fig, path)


def plot_pr_curve(recall, precision, path, label=None):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(recall, precision, label=label)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    if label:
        ax.legend(loc="lower left")
    return _save(fig, path)


def plot_attention_vector(vector, path, title=None):
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(np.arange(len(vector)), vector, width=1.0)
    ax.set_xlabel("location")
    ax.set_ylabel("attention")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_clouds(clouds, path, titles=None):
    """Side-by-side 3D scatter plots."""
    fig = plt.figure(figsize=(4 * len(clouds), 4))
    for k, pts in enumerate(clouds):
        ax = fig.add_subplot(1, len(clouds), k + 1, projection="3d")
        pts = np.asarray(pts)
        ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=2)
        ax.set_axis_off()
        if titles:
            ax.set_title(titles[k])
    return _save(fig, path)
