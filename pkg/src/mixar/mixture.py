"""Guidance mixing: DC-Mix sequence construction and TI-Mix token blending.

Pure data-flow over explicit rng handles. DC-Mix swaps each masked
position's embedding for the embedding of its discrete counterpart; TI-Mix
replaces a (1 - lambda) share of the ground-truth discrete guidance inside
the masked region with tokens produced by the frozen discrete generator, so
training gradually matches inference conditions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, ContractError


class Provenance(enum.IntEnum):
    CONTINUOUS = 0
    DISCRETE_GT = 1
    DISCRETE_GEN = 2


@dataclass
class MixedSequence:
    """Backbone-width embeddings plus per-position provenance flags."""

    embeddings: torch.Tensor  # (B, N, d_b)
    provenance: torch.Tensor  # (B, N) int8 of Provenance values
    mask: torch.Tensor  # (B, N) bool, the originating mask

    def __post_init__(self) -> None:
        prov = self.provenance
        cont = prov == int(Provenance.CONTINUOUS)
        if not torch.equal(cont, ~self.mask):
            raise ContractError("provenance must be CONTINUOUS exactly where mask is 0")


@dataclass(frozen=True)
class TIMixConfig:
    lambda_start: float = 1.0
    lambda_end: float = 0.0
    decay: str = "linear"  # or "cosine"
    start_epoch: int = 0

    def validate(self) -> None:
        if not (0.0 <= self.lambda_end <= self.lambda_start <= 1.0):
            raise ConfigError(
                f"need 0 <= lambda_end <= lambda_start <= 1, got "
                f"start={self.lambda_start} end={self.lambda_end}"
            )
        if self.decay not in ("linear", "cosine"):
            raise ConfigError(f"unknown decay {self.decay!r}")
        if self.start_epoch < 0:
            raise ConfigError("start_epoch must be >= 0")


@dataclass
class TiMixResult:
    tokens: torch.Tensor  # (B, N) int64 mixed guidance sequence
    ground_truth: torch.Tensor  # (B, N) bool; True where a masked slot kept GT


def _as_batched(t: torch.Tensor) -> torch.Tensor:
    return t.unsqueeze(0) if t.ndim == 1 else t


def ti_mix(
    gt_tokens: torch.Tensor,
    generated_tokens: torch.Tensor,
    mask: torch.Tensor,
    lam: float,
    rng: np.random.Generator,
) -> TiMixResult:
    """Blend ground-truth and generated discrete tokens inside the mask.

    Per masked position an independent uniform draw keeps the ground-truth
    token with probability `lam`; unmasked positions always keep ground
    truth. The generated sequence must already agree with ground truth off
    the mask (that is the infill contract).
    """
    gt = _as_batched(gt_tokens)
    gen = _as_batched(generated_tokens)
    m = _as_batched(mask).bool()
    if gt.shape != gen.shape or gt.shape != m.shape:
        raise ContractError(
            f"shape mismatch: gt {tuple(gt.shape)} gen {tuple(gen.shape)} mask {tuple(m.shape)}"
        )
    if not (0.0 <= lam <= 1.0):
        raise ContractError(f"lambda must lie in [0, 1], got {lam}")
    if not torch.equal(gt[~m], gen[~m]):
        raise ContractError("generated tokens differ from ground truth at unmasked positions")

    rho = torch.from_numpy(rng.random(tuple(m.shape)))
    keep_gt = (~m) | (rho < lam)
    tokens = torch.where(keep_gt, gt, gen)
    result = TiMixResult(tokens=tokens, ground_truth=m & (rho < lam))
    if gt_tokens.ndim == 1:
        result.tokens = result.tokens[0]
        result.ground_truth = result.ground_truth[0]
    return result


def dc_mix(
    continuous_tokens: torch.Tensor,
    guidance_tokens: torch.Tensor,
    mask: torch.Tensor,
    embedders,
    guidance_ground_truth: torch.Tensor | None = None,
) -> MixedSequence:
    """Build the mixed backbone input: discrete embeddings inside the mask,
    continuous embeddings outside it.

    `embedders` is any object exposing embed_continuous(tokens) and
    embed_discrete(indices) mapping to backbone width (positional terms
    included); the guidance backbone satisfies this. `guidance_ground_truth`
    marks which masked slots carry ground-truth (vs generated) tokens; it
    defaults to all ground truth.
    """
    x_c = _as_batched(continuous_tokens)
    x_d = _as_batched(guidance_tokens)
    m = _as_batched(mask).bool()
    if x_c.shape[:2] != x_d.shape[:2] or x_c.shape[:2] != m.shape:
        raise ContractError(
            f"length mismatch: continuous {tuple(x_c.shape[:2])} "
            f"discrete {tuple(x_d.shape[:2])} mask {tuple(m.shape)}"
        )
    if guidance_ground_truth is None:
        guidance_ground_truth = m
    gt = _as_batched(guidance_ground_truth).bool()

    emb_c = embedders.embed_continuous(x_c)
    emb_d = embedders.embed_discrete(x_d)
    mixed = torch.where(m.unsqueeze(-1), emb_d, emb_c)

    provenance = torch.full(m.shape, int(Provenance.CONTINUOUS), dtype=torch.int8)
    provenance[m & gt] = int(Provenance.DISCRETE_GT)
    provenance[m & ~gt] = int(Provenance.DISCRETE_GEN)
    return MixedSequence(embeddings=mixed, provenance=provenance, mask=m)


def lambda_schedule(epoch: int, total_epochs: int, cfg: TIMixConfig) -> float:
    """Ground-truth guidance ratio for this epoch (monotone non-increasing)."""
    cfg.validate()
    if not (0 <= epoch <= total_epochs):
        raise ContractError(f"epoch {epoch} outside [0, {total_epochs}]")
    if epoch <= cfg.start_epoch or total_epochs <= cfg.start_epoch:
        return cfg.lambda_start
    progress = (epoch - cfg.start_epoch) / (total_epochs - cfg.start_epoch)
    if cfg.decay == "linear":
        frac = 1.0 - progress
    else:
        frac = 0.5 * (1.0 + math.cos(math.pi * progress))
    return cfg.lambda_end + (cfg.lambda_start - cfg.lambda_end) * frac
