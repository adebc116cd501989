"""The guidance-consuming transformer backbone.

One bidirectional stack supports four input assemblies:

  MAR_BASELINE  masked positions carry a learned mask token
  DC_MIX        masked positions carry codeword embeddings (codebook lookup
                + learned projection; no extra embedding table)
  DC_SA         full discrete sequence prepended as prefix tokens, attended
                by self-attention (sequence grows from N to 2N)
  DC_CA         discrete sequence as cross-attention memory, one cross block
                after every self-attention block

Every forward reports the exact number of attention query-key pairs it
performed, so efficiency claims are asserted rather than estimated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, ContractError
from .mixture import MixedSequence
from .transformer import Block, CrossBlock


class GuidanceVariant(str, enum.Enum):
    MAR_BASELINE = "mar-baseline"
    DC_MIX = "dc-mix"
    DC_SA = "dc-sa"
    DC_CA = "dc-ca"

    @property
    def uses_discrete_guidance(self) -> bool:
        return self is not GuidanceVariant.MAR_BASELINE


@dataclass(frozen=True)
class BackboneConfig:
    variant: GuidanceVariant = GuidanceVariant.DC_MIX
    n_positions: int = 16  # N, flattened latent grid length
    n_class_tokens: int = 4
    n_classes: int = 8
    continuous_dim: int = 8  # d_c
    codeword_dim: int = 8  # d_d
    embed_dim: int = 128  # d_b
    depth: int = 6
    num_heads: int = 4
    codebook_size: int = 64  # V

    def validate(self) -> None:
        if min(
            self.n_positions,
            self.n_class_tokens,
            self.n_classes,
            self.continuous_dim,
            self.codeword_dim,
            self.embed_dim,
            self.depth,
            self.num_heads,
            self.codebook_size,
        ) <= 0:
            raise ConfigError("all backbone dims must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError("num_heads must divide embed_dim")


@dataclass
class BackboneOutput:
    z: torch.Tensor  # (B, N, d_b) conditioning vectors, continuous positions
    attention_pairs: int  # exact query-key pair count of this forward


def attention_pair_count(variant: GuidanceVariant, n: int, n_cls: int, depth: int) -> int:
    """Analytic attention query-key pairs for one forward pass."""
    if variant in (GuidanceVariant.MAR_BASELINE, GuidanceVariant.DC_MIX):
        return (n + n_cls) ** 2 * depth
    if variant is GuidanceVariant.DC_SA:
        return (2 * n + n_cls) ** 2 * depth
    return ((n + n_cls) ** 2 + (n + n_cls) * n) * depth


class GuidanceBackbone(nn.Module):
    """Variant-assembled transformer emitting one conditioning vector per
    grid position.

    Shared trunk parameters are created (and initialized) before any
    variant-specific parameter, so two variants built under the same torch
    seed share bit-identical trunk weights.
    """

    def __init__(self, cfg: BackboneConfig, codebook: torch.Tensor | None = None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.variant = cfg.variant
        d = cfg.embed_dim

        # --- shared trunk (creation order fixed across variants) ---
        self.cont_proj = nn.Linear(cfg.continuous_dim, d)
        self.pos_emb = nn.Parameter(torch.empty(1, cfg.n_positions, d))
        nn.init.normal_(self.pos_emb, std=0.02)
        # one extra class row serves as the learned null class for guidance-free sampling
        self.class_emb = nn.Embedding(cfg.n_classes + 1, d)
        nn.init.normal_(self.class_emb.weight, std=0.02)
        self.cls_pos = nn.Parameter(torch.empty(1, cfg.n_class_tokens, d))
        nn.init.normal_(self.cls_pos, std=0.02)
        self.emb_norm = nn.LayerNorm(d, eps=1e-6)
        self.blocks = nn.ModuleList(Block(d, cfg.num_heads) for _ in range(cfg.depth))
        self.final_norm = nn.LayerNorm(d, eps=1e-6)

        # --- variant-specific parameters ---
        if self.variant is not GuidanceVariant.DC_MIX:
            self.mask_token = nn.Parameter(torch.empty(1, 1, d))
            nn.init.normal_(self.mask_token, std=0.02)
        if self.variant is GuidanceVariant.DC_MIX:
            if codebook is None:
                raise ConfigError("DC_MIX requires the trained codebook")
            if tuple(codebook.shape) != (cfg.codebook_size, cfg.codeword_dim):
                raise ConfigError(
                    f"codebook shape {tuple(codebook.shape)} != "
                    f"({cfg.codebook_size}, {cfg.codeword_dim})"
                )
            self.register_buffer("codebook", codebook.detach().clone().float())
            self.disc_proj = nn.Linear(cfg.codeword_dim, d)
        if self.variant in (GuidanceVariant.DC_SA, GuidanceVariant.DC_CA):
            self.disc_emb = nn.Embedding(cfg.codebook_size, d)
            nn.init.normal_(self.disc_emb.weight, std=0.02)
            self.prefix_pos = nn.Parameter(torch.empty(1, cfg.n_positions, d))
            nn.init.normal_(self.prefix_pos, std=0.02)
        if self.variant is GuidanceVariant.DC_CA:
            self.cross_blocks = nn.ModuleList(
                CrossBlock(d, cfg.num_heads) for _ in range(cfg.depth)
            )

    # --- embedders -------------------------------------------------------
    @property
    def null_class_id(self) -> int:
        return self.cfg.n_classes

    def embed_continuous(self, tokens: torch.Tensor) -> torch.Tensor:
        """Continuous tokens (B, N, d_c) -> (B, N, d_b), positional term added."""
        if tokens.shape[-1] != self.cfg.continuous_dim:
            raise ContractError(
                f"continuous width {tokens.shape[-1]} != {self.cfg.continuous_dim}"
            )
        return self.cont_proj(tokens) + self.pos_emb

    def embed_discrete(self, indices: torch.Tensor) -> torch.Tensor:
        """Codebook indices (B, N) -> (B, N, d_b) via lookup + projection."""
        if self.variant is not GuidanceVariant.DC_MIX:
            raise ContractError(f"{self.variant.value} has no codeword projection embedder")
        self._check_indices(indices)
        return self.disc_proj(self.codebook[indices]) + self.pos_emb

    def embed_prefix(self, indices: torch.Tensor) -> torch.Tensor:
        """Discrete guidance (B, N) -> prefix/memory embeddings (B, N, d_b)."""
        if self.variant not in (GuidanceVariant.DC_SA, GuidanceVariant.DC_CA):
            raise ContractError(f"{self.variant.value} has no prefix embedder")
        self._check_indices(indices)
        return self.disc_emb(indices) + self.prefix_pos

    def _check_indices(self, indices: torch.Tensor) -> None:
        if indices.numel() and (
            int(indices.max()) >= self.cfg.codebook_size or int(indices.min()) < 0
        ):
            raise ContractError("discrete guidance index out of codebook range")

    def _class_tokens(self, class_ids: torch.Tensor) -> torch.Tensor:
        if int(class_ids.max()) > self.cfg.n_classes or int(class_ids.min()) < 0:
            raise ContractError("class id out of range")
        emb = self.class_emb(class_ids)
        return emb.unsqueeze(1).expand(-1, self.cfg.n_class_tokens, -1) + self.cls_pos

    def _masked_continuous(self, x_c: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        tokens = self.cont_proj(x_c)
        tokens = torch.where(
            mask.unsqueeze(-1), self.mask_token.to(tokens.dtype), tokens
        )
        return tokens + self.pos_emb

    # --- forward ---------------------------------------------------------
    def forward(
        self,
        class_ids: torch.Tensor,
        mixed: MixedSequence | None = None,
        x_c: torch.Tensor | None = None,
        mask: torch.Tensor | None = None,
        guidance: torch.Tensor | None = None,
    ) -> BackboneOutput:
        """Run the variant's assembly; returns z for the N grid positions."""
        v = self.variant
        n = self.cfg.n_positions
        if v is GuidanceVariant.DC_MIX:
            if mixed is None or x_c is not None or guidance is not None:
                raise ContractError("DC_MIX forward takes a MixedSequence only")
            if mixed.embeddings.shape[1] != n:
                raise ContractError(f"mixed length {mixed.embeddings.shape[1]} != N={n}")
            stream = mixed.embeddings
        else:
            if mixed is not None or x_c is None or mask is None:
                raise ContractError(f"{v.value} forward takes x_c and mask")
            if x_c.shape[1] != n or mask.shape[1] != n:
                raise ContractError("sequence length mismatch with configured N")
            if v is GuidanceVariant.MAR_BASELINE and guidance is not None:
                raise ContractError("MAR baseline accepts no discrete guidance")
            if v in (GuidanceVariant.DC_SA, GuidanceVariant.DC_CA) and guidance is None:
                raise ContractError(f"{v.value} requires the discrete guidance sequence")
            stream = self._masked_continuous(x_c, mask.bool())

        cls = self._class_tokens(class_ids).to(stream.dtype)
        if v is GuidanceVariant.DC_SA:
            prefix = self.embed_prefix(guidance).to(stream.dtype)
            h = torch.cat([cls, prefix, stream], dim=1)
        else:
            h = torch.cat([cls, stream], dim=1)
        h = self.emb_norm(h)

        memory = None
        if v is GuidanceVariant.DC_CA:
            memory = self.embed_prefix(guidance).to(stream.dtype)

        pairs = 0
        for i, block in enumerate(self.blocks):
            h = block(h)
            pairs += block.attn.last_pairs
            if memory is not None:
                h = self.cross_blocks[i](h, memory)
                pairs += self.cross_blocks[i].attn.last_pairs
        h = self.final_norm(h)

        z = h[:, -n:]
        if not torch.isfinite(z).all():
            raise ContractError("backbone produced non-finite conditioning vectors")
        return BackboneOutput(z=z, attention_pairs=pairs)
