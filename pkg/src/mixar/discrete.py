"""The masked discrete autoregressive generator (the pretrained prior).

A small bidirectional transformer over codebook indices with a dedicated
mask-token embedding row, trained with masked cross-entropy and decoded by
iterative parallel unmasking. Its infill interface (single forward pass over
a partially masked sequence) is what training-time guidance mixing calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ContractError, NumericsError
from .masking import (
    DecodeSchedule,
    RatioConfig,
    build_decode_schedule,
    build_mask_batch,
    choose_step_positions,
)
from .transformer import Block


@dataclass(frozen=True)
class DiscreteModelConfig:
    codebook_size: int = 64  # V; the mask token takes embedding row V
    n_positions: int = 16
    n_classes: int = 8
    n_class_tokens: int = 4
    embed_dim: int = 128
    depth: int = 4
    num_heads: int = 4

    def validate(self) -> None:
        if min(
            self.codebook_size,
            self.n_positions,
            self.n_classes,
            self.n_class_tokens,
            self.embed_dim,
            self.depth,
            self.num_heads,
        ) <= 0:
            raise ConfigError("all discrete-model dims must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError("num_heads must divide embed_dim")


class DiscreteARModel(nn.Module):
    """Bidirectional transformer emitting V logits per grid position."""

    def __init__(self, cfg: DiscreteModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.embed_dim
        self.mask_id = cfg.codebook_size  # embedding row reserved for the mask token
        self.tok_emb = nn.Embedding(cfg.codebook_size + 1, d)
        nn.init.normal_(self.tok_emb.weight, std=0.02)
        self.class_emb = nn.Embedding(cfg.n_classes, d)
        nn.init.normal_(self.class_emb.weight, std=0.02)
        self.cls_pos = nn.Parameter(torch.empty(1, cfg.n_class_tokens, d))
        nn.init.normal_(self.cls_pos, std=0.02)
        self.pos_emb = nn.Parameter(torch.empty(1, cfg.n_positions, d))
        nn.init.normal_(self.pos_emb, std=0.02)
        self.emb_norm = nn.LayerNorm(d, eps=1e-6)
        self.blocks = nn.ModuleList(Block(d, cfg.num_heads) for _ in range(cfg.depth))
        self.final_norm = nn.LayerNorm(d, eps=1e-6)
        # zero-init head: an untrained model yields exactly uniform logits
        self.head = nn.Linear(d, cfg.codebook_size)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.forward_calls = 0

    def forward(self, tokens: torch.Tensor, class_ids: torch.Tensor) -> torch.Tensor:
        """Token ids (B, N; mask slots carry mask_id) -> logits (B, N, V)."""
        if tokens.shape[1] != self.cfg.n_positions:
            raise ContractError(
                f"sequence length {tokens.shape[1]} != N={self.cfg.n_positions}"
            )
        if int(tokens.max()) > self.mask_id or int(tokens.min()) < 0:
            raise ContractError("token id out of range")
        self.forward_calls += 1
        cls = self.class_emb(class_ids).unsqueeze(1).expand(
            -1, self.cfg.n_class_tokens, -1
        ) + self.cls_pos
        h = torch.cat([cls, self.tok_emb(tokens) + self.pos_emb], dim=1)
        h = self.emb_norm(h)
        for block in self.blocks:
            h = block(h)
        h = self.final_norm(h)
        return self.head(h[:, -self.cfg.n_positions :])


def mask_discrete_sequence(
    tokens: torch.Tensor, mask: torch.Tensor, mask_id: int
) -> torch.Tensor:
    """Replace masked positions with the mask-token id."""
    if tokens.shape != mask.shape:
        raise ContractError(
            f"token/mask length mismatch: {tuple(tokens.shape)} vs {tuple(mask.shape)}"
        )
    return torch.where(mask.bool(), torch.full_like(tokens, mask_id), tokens)


def masked_cross_entropy(
    logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Mean NLL over masked positions; unmasked positions contribute zero."""
    mask = mask.bool()
    if not mask.any():
        raise ContractError("no masked positions to score")
    picked_logits = logits[mask]
    picked_targets = targets[mask]
    return F.cross_entropy(picked_logits, picked_targets)


def train_step_discrete(
    model: DiscreteARModel,
    tokens: torch.Tensor,
    class_ids: torch.Tensor,
    mask_rng: np.random.Generator,
    ratio_cfg: RatioConfig = RatioConfig(),
) -> torch.Tensor:
    """One masked-prediction step: sample masks, score, backprop.

    Leaves gradients accumulated on the model; the caller owns the optimizer.
    """
    if tokens.shape[0] == 0:
        raise ContractError("empty batch")
    mask = build_mask_batch(tokens.shape[0], tokens.shape[1], ratio_cfg, mask_rng)
    masked = mask_discrete_sequence(tokens, mask, model.mask_id)
    logits = model(masked, class_ids)
    loss = masked_cross_entropy(logits, tokens, mask)
    if not torch.isfinite(loss):
        raise NumericsError(f"discrete training loss is non-finite: {loss.item()}")
    loss.backward()
    return loss.detach()


def _sample_logits(
    logits: torch.Tensor, temperature: float, generator: torch.Generator | None
) -> torch.Tensor:
    """Sample token ids from (..., V) logits; temperature 0 means argmax."""
    if temperature <= 0.0:
        return logits.argmax(dim=-1)
    probs = torch.softmax(logits / temperature, dim=-1)
    flat = probs.reshape(-1, probs.shape[-1])
    draws = torch.multinomial(flat, 1, generator=generator).squeeze(-1)
    return draws.reshape(probs.shape[:-1])


@torch.no_grad()
def infill_discrete(
    model: DiscreteARModel,
    masked_tokens: torch.Tensor,
    class_ids: torch.Tensor,
    generator: torch.Generator | None = None,
    temperature: float = 1.0,
) -> torch.Tensor:
    """Single-pass infill: sample every masked slot, keep the rest verbatim."""
    mask = masked_tokens == model.mask_id
    if not mask.any():
        raise ContractError("infill requires at least one masked position")
    logits = model(masked_tokens, class_ids)
    sampled = _sample_logits(logits, temperature, generator)
    return torch.where(mask, sampled, masked_tokens)


@torch.no_grad()
def generate_discrete(
    model: DiscreteARModel,
    class_ids: torch.Tensor,
    schedule: DecodeSchedule | None = None,
    temperature: float = 1.0,
    generator: torch.Generator | None = None,
    position_rng: np.random.Generator | None = None,
) -> torch.Tensor:
    """Iterative parallel decoding from a fully masked sequence.

    Positions committed at each step are chosen uniformly at random among the
    still-masked ones; the per-step counts come from the schedule.
    """
    n = model.cfg.n_positions
    if schedule is None:
        schedule = build_decode_schedule(n, min(8, n), "cosine")
    if schedule.total != n:
        raise ContractError(f"schedule covers {schedule.total} positions, need {n}")
    if position_rng is None:
        position_rng = np.random.default_rng(0)
    batch = class_ids.shape[0]
    tokens = torch.full((batch, n), model.mask_id, dtype=torch.long)
    still_masked = np.ones((batch, n), dtype=bool)
    for count in schedule.counts:
        sampled = infill_discrete(model, tokens, class_ids, generator, temperature)
        for b in range(batch):
            picks = choose_step_positions(still_masked[b], count, position_rng)
            tokens[b, picks] = sampled[b, picks]
            still_masked[b, picks] = False
    if bool((tokens == model.mask_id).any()):
        raise ContractError("decoding finished with mask tokens left")
    return tokens


@dataclass
class DiscreteTrainResult:
    model: DiscreteARModel
    losses: list[float] = field(default_factory=list)


def train_discrete(
    model: DiscreteARModel,
    tokens: torch.Tensor,
    class_ids: torch.Tensor,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    ratio_cfg: RatioConfig = RatioConfig(),
) -> DiscreteTrainResult:
    """Masked cross-entropy training loop over a pre-tokenized dataset."""
    if tokens.shape[0] == 0:
        raise ContractError("cannot train on an empty dataset")
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    mask_rng = np.random.default_rng(seed)
    order_rng = np.random.default_rng(seed + 1)
    result = DiscreteTrainResult(model=model)
    n = tokens.shape[0]
    bs = min(batch_size, n)
    for _ in range(epochs):
        order = order_rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            opt.zero_grad()
            loss = train_step_discrete(model, tokens[idx], class_ids[idx], mask_rng, ratio_cfg)
            opt.step()
            epoch_loss += float(loss)
            n_batches += 1
        result.losses.append(epoch_loss / n_batches)
    return result
