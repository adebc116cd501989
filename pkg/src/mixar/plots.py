"""Static plot and image-grid output for run directories."""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch


def save_image_grid(pixels: torch.Tensor, path: str | Path, per_row: int = 8) -> Path:
    """Tile (B, 3, H, W) pixels in [0,1] into one lossless PNG."""
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    b, c, h, w = pixels.shape
    rows = math.ceil(b / per_row)
    canvas = np.ones((rows * h, per_row * w, c), dtype=np.float32)
    for i in range(b):
        r, col = divmod(i, per_row)
        canvas[r * h : (r + 1) * h, col * w : (col + 1) * w] = (
            pixels[i].numpy().transpose(1, 2, 0)
        )
    img = Image.fromarray((canvas * 255.0).round().astype(np.uint8))
    img.save(path)
    return path


def plot_loss_curves(metrics_path: str | Path, out_path: str | Path) -> Path:
    """Loss/Frechet curves from a metrics.jsonl file."""
    records = [json.loads(line) for line in Path(metrics_path).read_text().splitlines() if line]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [r["epoch"] for r in records]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(epochs, [r["train_loss"] for r in records], label="train")
    axes[0].plot(epochs, [r["val_loss_gt"] for r in records], label="val (gt guidance)")
    axes[0].plot(epochs, [r["val_loss_gen"] for r in records], label="val (generated)")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("diffusion loss")
    axes[0].legend()
    fr = [(r["epoch"], r["frechet"]) for r in records if r.get("frechet") is not None]
    if fr:
        axes[1].plot([e for e, _ in fr], [f for _, f in fr])
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("Frechet surrogate")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_balance(
    token_counts: dict[str, int], scores: dict[str, float], out_path: str | Path
) -> Path:
    """Scatter of generation quality vs tokens involved, one point per variant."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, tokens in token_counts.items():
        if name not in scores:
            continue
        ax.scatter(tokens, scores[name], label=name)
        ax.annotate(name, (tokens, scores[name]), textcoords="offset points", xytext=(5, 5))
    ax.set_xlabel("tokens per forward")
    ax.set_ylabel("Frechet surrogate")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
