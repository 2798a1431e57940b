"""Static figures: real vs generated overlays and latent PCA scatter."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from sklearn.decomposition import PCA  # noqa: E402

__all__ = ["plot_latent_pca", "plot_overlays"]


def plot_overlays(
    real: np.ndarray,
    generated: np.ndarray,
    channel_names: Sequence[str],
    path: Path,
    title: str,
) -> Path:
    """Mean trajectory per channel with a shaded ±1 std band, real vs generated."""
    n_channels = real.shape[-1]
    cols = min(3, n_channels)
    rows = math.ceil(n_channels / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 2.6 * rows), squeeze=False)
    steps = np.arange(real.shape[1])
    for c, ax in enumerate(axes.flat):
        if c >= n_channels:
            ax.axis("off")
            continue
        for data, label, color in ((real, "real", "tab:blue"), (generated, "generated", "tab:orange")):
            mean = data[..., c].mean(axis=0)
            std = data[..., c].std(axis=0)
            ax.plot(steps, mean, color=color, label=label, linewidth=1.2)
            ax.fill_between(steps, mean - std, mean + std, color=color, alpha=0.2)
        ax.set_title(channel_names[c] if c < len(channel_names) else f"ch{c}", fontsize=9)
        ax.tick_params(labelsize=7)
    axes.flat[0].legend(fontsize=7)
    fig.suptitle(title)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_latent_pca(
    zx: np.ndarray, zy: np.ndarray, labels: np.ndarray, path: Path, title: str
) -> Path:
    """2-D PCA of both modalities' pooled latents, coloured by task label."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, latents, name in ((axes[0], zx, "X"), (axes[1], zy, "Y")):
        coords = PCA(n_components=2, random_state=0).fit_transform(latents)
        scatter = ax.scatter(coords[:, 0], coords[:, 1], c=labels, cmap="viridis", s=12)
        ax.set_title(f"latent {name}")
        ax.set_xlabel("PC1")
        ax.set_ylabel("PC2")
    fig.colorbar(scatter, ax=axes, label="label")
    fig.suptitle(title)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
