"""Mask-ratio sampling, binary mask construction, and decode schedules.

All functions are pure given an explicit numpy Generator; callers own the
rng streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class RatioConfig:
    """Bounds of the uniform masking-ratio distribution."""

    r_min: float = 0.7
    r_max: float = 1.0

    def validate(self) -> None:
        if not (0.0 < self.r_min <= self.r_max <= 1.0):
            raise ConfigError(
                f"need 0 < r_min <= r_max <= 1, got r_min={self.r_min} r_max={self.r_max}"
            )


@dataclass
class MaskSpec:
    """Binary mask over N positions with exactly ceil(r*N) ones."""

    mask: np.ndarray  # (N,) bool
    ratio: float
    masked_positions: np.ndarray  # ordered chosen indices, len = ceil(r*N)

    def __post_init__(self) -> None:
        n_expected = math.ceil(self.ratio * self.mask.shape[0])
        if int(self.mask.sum()) != n_expected:
            raise ContractError(
                f"mask popcount {int(self.mask.sum())} != ceil(r*N) = {n_expected}"
            )
        if len(np.unique(self.masked_positions)) != len(self.masked_positions):
            raise ContractError("masked positions must be unique")
        if not np.array_equal(np.sort(self.masked_positions), np.flatnonzero(self.mask)):
            raise ContractError("masked_positions inconsistent with mask")

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def n_masked(self) -> int:
        return len(self.masked_positions)


def sample_mask_ratio(rng: np.random.Generator, cfg: RatioConfig = RatioConfig()) -> float:
    cfg.validate()
    return float(rng.uniform(cfg.r_min, cfg.r_max))


def build_mask(n: int, ratio: float, rng: np.random.Generator) -> MaskSpec:
    """Choose exactly ceil(ratio*n) positions uniformly without replacement."""
    if n < 1:
        raise ContractError(f"need N >= 1, got {n}")
    if not (0.0 < ratio <= 1.0):
        raise ContractError(f"need 0 < r <= 1, got {ratio}")
    n_masked = math.ceil(ratio * n)
    positions = rng.choice(n, size=n_masked, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[positions] = True
    return MaskSpec(mask=mask, ratio=ratio, masked_positions=positions)


def build_mask_batch(
    batch: int, n: int, cfg: RatioConfig, rng: np.random.Generator
) -> torch.Tensor:
    """Per-sample ratio draw + mask, stacked as a (batch, n) bool tensor."""
    masks = np.zeros((batch, n), dtype=bool)
    for b in range(batch):
        r = sample_mask_ratio(rng, cfg)
        masks[b] = build_mask(n, r, rng).mask
    return torch.from_numpy(masks)


@dataclass
class DecodeSchedule:
    """Per-step unmask counts for iterative parallel decoding."""

    counts: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if any(c < 1 for c in self.counts):
            raise ContractError(f"every per-step count must be >= 1, got {self.counts}")

    @property
    def steps(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)


def build_decode_schedule(
    n_masked: int, steps: int, shape: str = "cosine"
) -> DecodeSchedule:
    """Partition `n_masked` positions into `steps` per-step quotas.

    The cosine shape keeps many positions masked early (few commitments per
    step) and unmaskes aggressively at the end, following the usual parallel
    decoding convention; "linear" spreads commitments evenly.
    """
    if not (1 <= steps <= n_masked):
        raise ContractError(f"need 1 <= steps <= n_masked, got steps={steps} n_masked={n_masked}")
    if shape not in ("cosine", "linear"):
        raise ConfigError(f"unknown schedule shape {shape!r}")

    counts: list[int] = []
    remaining_prev = n_masked
    for t in range(1, steps + 1):
        if shape == "cosine":
            target = math.floor(n_masked * math.cos(math.pi / 2.0 * t / steps))
        else:
            target = round(n_masked * (1.0 - t / steps))
        # keep >=1 commitments now and leave >=1 for each later step
        remaining = max(min(target, remaining_prev - 1), steps - t)
        if t == steps:
            remaining = 0
        counts.append(remaining_prev - remaining)
        remaining_prev = remaining
    return DecodeSchedule(counts=counts)


def choose_step_positions(
    still_masked: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Pick `count` positions uniformly among the still-masked ones."""
    candidates = np.flatnonzero(still_masked)
    if count > len(candidates):
        raise ContractError(f"cannot unmask {count} of {len(candidates)} positions")
    return rng.choice(candidates, size=count, replace=False)
