"""Figures written next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import read_metrics  # noqa: E402


def _style(ax, xlabel: str, ylabel: str) -> None:
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.grid(alpha=0.3, linewidth=0.5)


def plot_training_curves(metrics_paths: dict[str, str | Path], out_png: str | Path) -> Path:
    """Step loss (smoothed) and per-epoch test accuracy, one line per run."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 3.8))
    for label, path in metrics_paths.items():
        steps, epochs = read_metrics(path)
        loss = np.array([r["loss"] for r in steps])
        if loss.size:
            k = max(1, min(25, loss.size // 10))
            smooth = np.convolve(loss, np.ones(k) / k, mode="valid")
            ax_loss.plot(np.arange(smooth.size) + k, smooth, label=label, linewidth=1)
        if epochs:
            ax_acc.plot([r["epoch"] + 1 for r in epochs], [100 * r["test_acc"] for r in epochs], label=label, linewidth=1.2)
    _style(ax_loss, "step", "training loss")
    _style(ax_acc, "epoch", "test accuracy (%)")
    ax_acc.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plot_comparison(rows: list[dict], out_png: str | Path) -> Path:
    """Per-seed test accuracy per model with the median marked."""
    names = list(dict.fromkeys(r["model"] for r in rows))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for i, name in enumerate(names):
        accs = [100 * r["test_acc"] for r in rows if r["model"] == name]
        ax.scatter([i] * len(accs), accs, s=18, color="0.4", zorder=3)
        ax.hlines(np.median(accs), i - 0.25, i + 0.25, color="C0", linewidth=2)
    ax.set_xticks(range(len(names)), names)
    _style(ax, "", "final test accuracy (%)")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plot_attention_pyramid(maps: dict[tuple[int, int], np.ndarray], image: np.ndarray | None, out_png: str | Path) -> Path:
    """Grid of attention maps: rows are flows, columns stages."""
    flows = sorted({n for n, _ in maps})
    stages = sorted({l for _, l in maps})
    cols = len(stages) + (image is not None)
    fig, axes = plt.subplots(len(flows), cols, figsize=(2.2 * cols, 2.2 * len(flows)), squeeze=False)
    for r, n in enumerate(flows):
        if image is not None:
            axes[r, 0].imshow(np.transpose(image, (1, 2, 0)))
            axes[r, 0].set_title("input" if r == 0 else "", fontsize=8)
        for c, l in enumerate(stages):
            ax = axes[r, c + (image is not None)]
            if (n, l) in maps:
                ax.imshow(maps[(n, l)], cmap="gray", vmin=0, vmax=1, interpolation="nearest")
                ax.set_title(f"flow {n}, stage {l}", fontsize=8)
            else:
                ax.set_visible(False)
    for ax in axes.flat:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)
