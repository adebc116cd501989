"""Evaluation stack: probe classifier and the Frechet surrogate.

The probe is a small MLP trained on real toy images; its penultimate layer
defines the feature space in which generated and real image sets are
compared via the Frechet distance between fitted Gaussians.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F
from torch import nn

from .data import ImageBatch
from .errors import ContractError, NumericsError


class ProbeClassifier(nn.Module):
    """Two-layer MLP over flattened pixels; penultimate width = feature dim."""

    def __init__(self, image_size: int = 16, channels: int = 3, n_classes: int = 8, feature_dim: int = 64):
        super().__init__()
        self.feature_dim = feature_dim
        self.backbone = nn.Sequential(
            nn.Flatten(),
            nn.Linear(channels * image_size * image_size, 128),
            nn.ReLU(),
            nn.Linear(128, feature_dim),
            nn.ReLU(),
        )
        self.head = nn.Linear(feature_dim, n_classes)

    def features(self, pixels: torch.Tensor) -> torch.Tensor:
        return self.backbone(pixels)

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(pixels))


def train_probe(
    images: ImageBatch,
    seed: int = 0,
    epochs: int = 60,
    lr: float = 2e-3,
    batch_size: int = 256,
    holdout_fraction: float = 0.2,
) -> tuple[ProbeClassifier, float]:
    """Train on a (1 - holdout) share, report held-out accuracy."""
    n = len(images)
    if n < 4:
        raise ContractError("probe training needs at least a handful of images")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_hold = max(1, int(round(holdout_fraction * n)))
    hold, fit = order[:n_hold], order[n_hold:]

    probe = ProbeClassifier(
        image_size=images.pixels.shape[-1],
        channels=images.pixels.shape[1],
        n_classes=int(images.labels.max()) + 1,
    )
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    for _ in range(epochs):
        perm = rng.permutation(len(fit))
        for start in range(0, len(fit), batch_size):
            idx = fit[perm[start : start + batch_size]]
            logits = probe(images.pixels[idx])
            loss = F.cross_entropy(logits, images.labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    probe.eval()
    with torch.no_grad():
        pred = probe(images.pixels[hold]).argmax(dim=-1)
        accuracy = float((pred == images.labels[hold]).float().mean())
    return probe, accuracy


@torch.no_grad()
def probe_accuracy(probe: ProbeClassifier, images: ImageBatch) -> float:
    pred = probe(images.pixels).argmax(dim=-1)
    return float((pred == images.labels).float().mean())


@torch.no_grad()
def probe_features(probe: ProbeClassifier, pixels: torch.Tensor) -> np.ndarray:
    return probe.features(pixels).numpy().astype(np.float64)


def gaussian_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if features.ndim != 2 or features.shape[0] < 2:
        raise ContractError("need at least 2 feature rows per side")
    mu = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)
    return mu, np.atleast_2d(cov)


def frechet_gaussian(
    mu1: np.ndarray, sigma1: np.ndarray, mu2: np.ndarray, sigma2: np.ndarray, eps: float = 1e-6
) -> float:
    """||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)), PSD matrix sqrt."""
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape:
        raise ContractError("feature widths differ between the two sides")
    diff = mu1 - mu2
    covmean, _ = scipy.linalg.sqrtm(sigma1 @ sigma2, disp=False)
    if not np.isfinite(covmean).all():
        offset = np.eye(sigma1.shape[0]) * eps
        covmean, _ = scipy.linalg.sqrtm((sigma1 + offset) @ (sigma2 + offset), disp=False)
        if not np.isfinite(covmean).all():
            raise NumericsError("covariance product has no finite PSD square root")
    if np.iscomplexobj(covmean):
        if not np.allclose(np.diagonal(covmean).imag, 0.0, atol=1e-3):
            raise NumericsError(
                f"matrix sqrt has a large imaginary part "
                f"({np.max(np.abs(covmean.imag)):.3g}); covariances are not PSD"
            )
        covmean = covmean.real
    return float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.trace(covmean))


def frechet_surrogate(real_features: np.ndarray, generated_features: np.ndarray) -> float:
    """Frechet distance between Gaussians fit to the two feature sets."""
    mu1, s1 = gaussian_stats(real_features)
    mu2, s2 = gaussian_stats(generated_features)
    return frechet_gaussian(mu1, s1, mu2, s2)
