"""Continuous (VAE) and vector-quantized (VQ-VAE) tokenizers.

Both share the same small conv encoder/decoder architecture with independent
weights. The encoder downsamples 16x16 images to a 4x4 latent grid, which is
flattened row-major into N = 16 tokens everywhere in the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import ImageBatch
from .errors import ConfigError, ContractError, NumericsError


@dataclass(frozen=True)
class TokenizerConfig:
    image_size: int = 16
    channels: int = 3
    downsample: int = 4  # grid = image_size // downsample
    continuous_dim: int = 8  # token width of the continuous tokenizer
    codeword_dim: int = 8  # codeword width of the VQ tokenizer
    codebook_size: int = 64
    hidden: int = 64

    def validate(self) -> None:
        if self.image_size % self.downsample != 0:
            raise ConfigError("downsample must divide image_size")
        if min(self.continuous_dim, self.codeword_dim, self.codebook_size, self.hidden) <= 0:
            raise ConfigError("tokenizer dims must be positive")

    @property
    def grid(self) -> tuple[int, int]:
        g = self.image_size // self.downsample
        return (g, g)

    @property
    def n_tokens(self) -> int:
        h, w = self.grid
        return h * w


class ConvEncoder(nn.Module):
    def __init__(self, cfg: TokenizerConfig, out_dim: int):
        super().__init__()
        h = cfg.hidden
        self.net = nn.Sequential(
            nn.Conv2d(cfg.channels, h, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(h, h, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(h, h, 3, stride=1, padding=1),
            nn.SiLU(),
            nn.Conv2d(h, out_dim, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class ConvDecoder(nn.Module):
    def __init__(self, cfg: TokenizerConfig, in_dim: int):
        super().__init__()
        h = cfg.hidden
        self.net = nn.Sequential(
            nn.Conv2d(in_dim, h, 1),
            nn.SiLU(),
            nn.ConvTranspose2d(h, h, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(h, h, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(h, cfg.channels, 3, padding=1),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


def _grid_to_tokens(z: torch.Tensor) -> torch.Tensor:
    # (B, C, h, w) -> (B, h*w, C), row-major over the grid
    b, c, h, w = z.shape
    return z.permute(0, 2, 3, 1).reshape(b, h * w, c)


def _tokens_to_grid(tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
    b, n, c = tokens.shape
    h, w = grid
    if n != h * w:
        raise ContractError(f"sequence length {n} does not match grid {grid}")
    return tokens.reshape(b, h, w, c).permute(0, 3, 1, 2)


def quantize(latents: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Nearest codeword per position under squared Euclidean distance.

    `latents` is (..., d), `codebook` (V, d). Ties break toward the lowest
    index (argmin picks the first minimum). Returns int64 indices (...).
    """
    if codebook.ndim != 2 or codebook.shape[0] == 0:
        raise ContractError("codebook must be a nonempty (V, d) matrix")
    if latents.shape[-1] != codebook.shape[1]:
        raise ContractError(
            f"latent width {latents.shape[-1]} != codeword width {codebook.shape[1]}"
        )
    flat = latents.reshape(-1, latents.shape[-1])
    d2 = (
        flat.pow(2).sum(1, keepdim=True)
        - 2.0 * flat @ codebook.t()
        + codebook.pow(2).sum(1)
    )
    return d2.argmin(dim=1).reshape(latents.shape[:-1])


class ContinuousTokenizer(nn.Module):
    """Small conv VAE; encode returns the posterior mean by default."""

    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = ConvEncoder(cfg, 2 * cfg.continuous_dim)
        self.decoder = ConvDecoder(cfg, cfg.continuous_dim)
        self.is_trained = False

    def posterior(self, pixels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check_pixels(pixels)
        stats = self.encoder(pixels)
        mean, logvar = stats.chunk(2, dim=1)
        return mean, logvar

    def encode(
        self,
        images: ImageBatch | torch.Tensor,
        sample_posterior: bool = False,
        generator: torch.Generator | None = None,
        allow_untrained: bool = False,
    ) -> torch.Tensor:
        """Images -> (B, N, d_c) continuous token sequences (row-major grid)."""
        if not self.is_trained and not allow_untrained:
            raise ContractError("tokenizer is untrained; pass allow_untrained=True to override")
        pixels = images.pixels if isinstance(images, ImageBatch) else images
        mean, logvar = self.posterior(pixels)
        z = mean
        if sample_posterior:
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
            z = mean + torch.exp(0.5 * logvar) * noise
        return _grid_to_tokens(z)

    def decode(self, tokens: torch.Tensor) -> torch.Tensor:
        """Token sequences -> (B, C, H, W) pixels clamped to [0, 1]."""
        if tokens.shape[-1] != self.cfg.continuous_dim:
            raise ContractError(
                f"token width {tokens.shape[-1]} != configured {self.cfg.continuous_dim}"
            )
        z = _tokens_to_grid(tokens, self.cfg.grid)
        return self.decoder(z).clamp(0.0, 1.0)

    def decode_raw(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.decoder(_tokens_to_grid(tokens, self.cfg.grid))

    def _check_pixels(self, pixels: torch.Tensor) -> None:
        if pixels.ndim != 4 or pixels.shape[1] != self.cfg.channels or (
            pixels.shape[2] != self.cfg.image_size or pixels.shape[3] != self.cfg.image_size
        ):
            raise ContractError(
                f"expected (B,{self.cfg.channels},{self.cfg.image_size},{self.cfg.image_size}) "
                f"pixels, got {tuple(pixels.shape)}"
            )


class VQTokenizer(nn.Module):
    """Small conv VQ-VAE with a straight-through estimator."""

    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = ConvEncoder(cfg, cfg.codeword_dim)
        self.decoder = ConvDecoder(cfg, cfg.codeword_dim)
        self.codebook = nn.Parameter(torch.empty(cfg.codebook_size, cfg.codeword_dim))
        nn.init.uniform_(self.codebook, -1.0 / cfg.codebook_size, 1.0 / cfg.codebook_size)
        self.is_trained = False

    def encode(
        self, images: ImageBatch | torch.Tensor, allow_untrained: bool = False
    ) -> torch.Tensor:
        """Images -> (B, N) int64 codebook indices (row-major grid)."""
        if not self.is_trained and not allow_untrained:
            raise ContractError("tokenizer is untrained; pass allow_untrained=True to override")
        pixels = images.pixels if isinstance(images, ImageBatch) else images
        z = self.encoder(pixels)
        return quantize(_grid_to_tokens(z), self.codebook.detach())

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        """Indices -> codeword vectors (dequantized representation)."""
        if indices.max() >= self.cfg.codebook_size or indices.min() < 0:
            raise ContractError("codebook index out of range")
        return self.codebook.detach()[indices]

    def decode(self, indices: torch.Tensor) -> torch.Tensor:
        tokens = self.lookup(indices)
        return self.decoder(_tokens_to_grid(tokens, self.cfg.grid)).clamp(0.0, 1.0)

    def straight_through(self, pixels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Encoder output, straight-through quantized latents, and indices."""
        z_e = _grid_to_tokens(self.encoder(pixels))
        indices = quantize(z_e.detach(), self.codebook.detach())
        z_q = self.codebook[indices]
        z_st = z_e + (z_q - z_e).detach()
        return z_e, z_st, indices


@dataclass
class TokenizerTrainConfig:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 2e-3
    beta_kl: float = 1e-4
    beta_commit: float = 0.25
    seed: int = 0


@dataclass
class TokenizerTrainResult:
    continuous: ContinuousTokenizer
    vq: VQTokenizer
    continuous_losses: list[float] = field(default_factory=list)
    vq_losses: list[float] = field(default_factory=list)
    codebook_usage: float = 0.0


def vae_loss(
    tok: ContinuousTokenizer,
    pixels: torch.Tensor,
    beta_kl: float,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    mean, logvar = tok.posterior(pixels)
    noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    z = mean + torch.exp(0.5 * logvar) * noise
    recon = tok.decoder(z)
    rec = F.mse_loss(recon, pixels)
    loss = rec
    if beta_kl != 0.0:
        kl = -0.5 * (1.0 + logvar - mean.pow(2) - logvar.exp()).sum(dim=(1, 2, 3)).mean()
        loss = rec + beta_kl * kl
    return loss


def vq_loss(
    tok: VQTokenizer, pixels: torch.Tensor, beta_commit: float
) -> tuple[torch.Tensor, torch.Tensor]:
    z_e, z_st, indices = tok.straight_through(pixels)
    recon = tok.decoder(_tokens_to_grid(z_st, tok.cfg.grid))
    rec = F.mse_loss(recon, pixels)
    z_q = tok.codebook[indices]
    codebook_term = F.mse_loss(z_q, z_e.detach())
    commit_term = F.mse_loss(z_e, z_q.detach())
    return rec + codebook_term + beta_commit * commit_term, indices


def train_tokenizers(
    dataset_pixels: torch.Tensor,
    cfg: TokenizerConfig = TokenizerConfig(),
    train_cfg: TokenizerTrainConfig = TokenizerTrainConfig(),
) -> TokenizerTrainResult:
    """Train both tokenizers on (B, C, H, W) pixels; aborts on divergence."""
    if dataset_pixels.shape[0] == 0:
        raise ContractError("cannot train tokenizers on an empty dataset")
    torch.manual_seed(train_cfg.seed)
    cont = ContinuousTokenizer(cfg)
    vq = VQTokenizer(cfg)
    noise_gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    order_rng = np.random.default_rng(train_cfg.seed + 2)

    result = TokenizerTrainResult(continuous=cont, vq=vq)
    n = dataset_pixels.shape[0]
    bs = min(train_cfg.batch_size, n)

    opt_c = torch.optim.Adam(cont.parameters(), lr=train_cfg.lr)
    opt_v = torch.optim.Adam(vq.parameters(), lr=train_cfg.lr)
    for epoch in range(train_cfg.epochs):
        order = order_rng.permutation(n)
        used = torch.zeros(cfg.codebook_size, dtype=torch.bool)
        last_z_e: torch.Tensor | None = None
        epoch_c, epoch_v, n_batches = 0.0, 0.0, 0
        for start in range(0, n, bs):
            batch = dataset_pixels[order[start : start + bs]]

            loss_c = vae_loss(cont, batch, train_cfg.beta_kl, noise_gen)
            opt_c.zero_grad()
            loss_c.backward()
            opt_c.step()

            loss_v, indices = vq_loss(vq, batch, train_cfg.beta_commit)
            opt_v.zero_grad()
            loss_v.backward()
            opt_v.step()

            if not (torch.isfinite(loss_c) and torch.isfinite(loss_v)):
                raise NumericsError(
                    f"tokenizer training diverged at epoch {epoch}: "
                    f"vae={loss_c.item()} vq={loss_v.item()}"
                )
            used[indices.reshape(-1)] = True
            with torch.no_grad():
                last_z_e = _grid_to_tokens(vq.encoder(batch)).reshape(-1, cfg.codeword_dim)
            epoch_c += loss_c.item()
            epoch_v += loss_v.item()
            n_batches += 1

        # revive codewords no batch selected this epoch
        dead = (~used).nonzero().reshape(-1)
        if len(dead) and last_z_e is not None:
            picks = order_rng.integers(0, last_z_e.shape[0], size=len(dead))
            with torch.no_grad():
                vq.codebook[dead] = last_z_e[picks]
        result.continuous_losses.append(epoch_c / n_batches)
        result.vq_losses.append(epoch_v / n_batches)

    cont.is_trained = True
    vq.is_trained = True
    with torch.no_grad():
        all_idx = vq.encode(dataset_pixels)
        result.codebook_usage = len(torch.unique(all_idx)) / cfg.codebook_size
    return result


def codebook_min_distance(codebook: torch.Tensor) -> float:
    """Smallest pairwise distance between codewords (post-training sanity)."""
    d2 = torch.cdist(codebook, codebook).fill_diagonal_(math.inf)
    return float(d2.min())
