"""Procedural toy image dataset.

Eight (by default) visually distinct families of 16x16 RGB images: a filled
ellipse or diamond with a class-specific hue and a class-specific stripe
frequency, over a gray background, plus a small amount of additive noise.
Every pixel is a pure function of (spec, sample index), so the dataset is
bit-reproducible and trivially parallelizable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError

NOISE_SIGMA = 0.02
VAL_FRACTION_DENOM = 10  # index-hash bucket 0 of 10 -> val (90/10 split)


@dataclass(frozen=True)
class DatasetSpec:
    n_classes: int = 8
    images_per_class: int = 64
    image_size: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.n_classes <= 0 or self.image_size <= 0:
            raise ConfigError(
                f"dataset dims must be positive, got n_classes={self.n_classes} "
                f"image_size={self.image_size}"
            )
        if self.images_per_class < 0:
            raise ConfigError(f"images_per_class must be >= 0, got {self.images_per_class}")

    @property
    def n_images(self) -> int:
        return self.n_classes * self.images_per_class


@dataclass
class ImageBatch:
    """Raster images in [0,1] with integer class labels."""

    pixels: torch.Tensor  # (B, 3, H, W) float32 in [0, 1]
    labels: torch.Tensor  # (B,) int64 in [0, n_classes)

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass
class ToyDataset:
    spec: DatasetSpec
    pixels: torch.Tensor  # (B, 3, H, W)
    labels: torch.Tensor  # (B,)
    is_val: torch.Tensor  # (B,) bool

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @property
    def train(self) -> ImageBatch:
        keep = ~self.is_val
        return ImageBatch(self.pixels[keep], self.labels[keep])

    @property
    def val(self) -> ImageBatch:
        return ImageBatch(self.pixels[self.is_val], self.labels[self.is_val])


def _split_hash(index: int) -> int:
    # Knuth multiplicative hash; split depends on the index alone so that
    # growing the dataset never reshuffles existing samples across splits.
    return (index * 2654435761) % (2**32)


def sample_split(index: int) -> str:
    return "val" if _split_hash(index) % VAL_FRACTION_DENOM == 0 else "train"


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB, all channels in [0,1]. Returns (..., 3)."""
    h = np.mod(h, 1.0) * 6.0
    i = np.floor(h).astype(np.int64) % 6
    f = h - np.floor(h)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = np.stack(
        [
            np.stack([v, t, p], axis=-1),
            np.stack([q, v, p], axis=-1),
            np.stack([p, v, t], axis=-1),
            np.stack([p, q, v], axis=-1),
            np.stack([t, p, v], axis=-1),
            np.stack([v, p, q], axis=-1),
        ],
        axis=0,
    )
    return np.take_along_axis(choices, i[None, ..., None], axis=0)[0]


def generate_image(spec: DatasetSpec, index: int) -> np.ndarray:
    """Render sample `index` of the dataset as a (3, H, W) float32 array.

    Pure in (spec, index): repeated calls return identical bytes.
    """
    label = index % spec.n_classes
    rng = np.random.default_rng([spec.seed, index])
    size = spec.image_size

    hue = label / spec.n_classes
    stripe_freq = 1.0 + (label % 4)
    is_ellipse = label % 2 == 0

    cx, cy = rng.uniform(0.35, 0.65, size=2)
    rx = rng.uniform(0.22, 0.34)
    ry = rng.uniform(0.22, 0.34)
    angle = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    background = rng.uniform(0.15, 0.35)

    ys, xs = np.meshgrid(
        (np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size, indexing="ij"
    )
    dx, dy = xs - cx, ys - cy
    ca, sa = np.cos(angle), np.sin(angle)
    u = (ca * dx + sa * dy) / rx
    w = (-sa * dx + ca * dy) / ry
    if is_ellipse:
        inside = (u**2 + w**2) <= 1.0
    else:
        inside = (np.abs(u) + np.abs(w)) <= 1.0

    stripes = 0.5 + 0.5 * np.sin(2.0 * np.pi * stripe_freq * u + phase)
    value = 0.55 + 0.45 * stripes
    fg = _hsv_to_rgb(np.full_like(value, hue), np.full_like(value, 0.9), value)

    img = np.full((size, size, 3), background, dtype=np.float64)
    img[inside] = fg[inside]
    img += rng.normal(0.0, NOISE_SIGMA, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return np.ascontiguousarray(img.transpose(2, 0, 1)).astype(np.float32)


def generate_dataset(spec: DatasetSpec) -> ToyDataset:
    """Materialize the full dataset described by `spec` (deterministic)."""
    spec.validate()
    n = spec.n_images
    pixels = np.zeros((n, 3, spec.image_size, spec.image_size), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    is_val = np.zeros(n, dtype=bool)
    for i in range(n):
        pixels[i] = generate_image(spec, i)
        labels[i] = i % spec.n_classes
        is_val[i] = sample_split(i) == "val"
    return ToyDataset(
        spec=spec,
        pixels=torch.from_numpy(pixels),
        labels=torch.from_numpy(labels),
        is_val=torch.from_numpy(is_val),
    )


def save_dataset(dataset: ToyDataset, out_dir: str | Path) -> Path:
    """Write samples as PNG files plus a manifest (path, label, split)."""
    from PIL import Image

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "split"])
        for i in range(len(dataset)):
            arr = (dataset.pixels[i].numpy().transpose(1, 2, 0) * 255.0).round()
            img = Image.fromarray(arr.astype(np.uint8))
            rel = f"images/{i:05d}.png"
            img.save(out_dir / rel)
            split = "val" if bool(dataset.is_val[i]) else "train"
            writer.writerow([rel, int(dataset.labels[i]), split])
    return manifest_path
