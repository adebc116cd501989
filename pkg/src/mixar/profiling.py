"""Cost accounting for the guidance variants.

Token counts, attention query-key pairs, and trainable-parameter counts are
derived analytically from the architecture and then asserted (exactly)
against an instrumented forward pass of a freshly built model. Wall-clock
numbers come from the same instrumented model; the peak-memory figure is a
stated-formula estimate of live forward activations.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone import BackboneConfig, GuidanceBackbone, GuidanceVariant, attention_pair_count
from .diffusion import DenoiserHead, DiffusionSchedule, denoise_loss, sample_token
from .errors import ConfigError
from .masking import build_decode_schedule
from .mixture import dc_mix


@dataclass(frozen=True)
class ProfileDims:
    n: int = 16  # N, grid positions
    n_cls: int = 4  # class tokens
    depth: int = 6  # L
    embed_dim: int = 128  # d_b
    codebook_size: int = 64  # V
    continuous_dim: int = 8  # d_c
    codeword_dim: int = 8  # d_d
    num_heads: int = 4
    n_classes: int = 8

    def validate(self) -> None:
        if min(self.n, self.n_cls, self.depth, self.embed_dim, self.codebook_size) <= 0:
            raise ConfigError("profile dims must be positive")


@dataclass
class CostReport:
    variant: str
    dims: ProfileDims
    tokens_with_cls: int
    tokens_without_cls: int
    attention_pairs: int
    backbone_params: int
    head_params: int
    train_step_seconds: float
    sample_image_seconds: float
    peak_memory_bytes_estimate: int

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        payload["dims"] = dataclasses.asdict(self.dims)
        return json.dumps(payload, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def token_counts(variant: GuidanceVariant, n: int, n_cls: int) -> tuple[int, int]:
    """(with class tokens, without) token involvement per forward pass."""
    base = n if variant in (GuidanceVariant.MAR_BASELINE, GuidanceVariant.DC_MIX) else 2 * n
    return base + n_cls, base


def _block_params(d: int) -> int:
    # qkv + proj + two layernorms + 4x MLP
    return (3 * d * d + 3 * d) + (d * d + d) + 4 * d + (4 * d * d + 4 * d) + (4 * d * d + d)


def _cross_block_params(d: int) -> int:
    return 4 * d + 4 * (d * d + d)


def backbone_param_count(variant: GuidanceVariant, dims: ProfileDims) -> int:
    """Exact trainable-scalar count of the assembled variant."""
    d = dims.embed_dim
    total = (
        dims.continuous_dim * d + d  # continuous projection
        + dims.n * d  # positional embeddings
        + (dims.n_classes + 1) * d  # class table incl. null row
        + dims.n_cls * d  # class-slot positions
        + 2 * d  # embedding norm
        + dims.depth * _block_params(d)
        + 2 * d  # final norm
    )
    if variant is not GuidanceVariant.DC_MIX:
        total += d  # learned mask token
    if variant is GuidanceVariant.DC_MIX:
        total += dims.codeword_dim * d + d  # codeword projection (codebook is frozen)
    if variant in (GuidanceVariant.DC_SA, GuidanceVariant.DC_CA):
        total += dims.codebook_size * d + dims.n * d  # discrete table + prefix positions
    if variant is GuidanceVariant.DC_CA:
        total += dims.depth * _cross_block_params(d)
    return total


def head_param_count(dims: ProfileDims, width: int = 256, depth: int = 3) -> int:
    w, dc, db = width, dims.continuous_dim, dims.embed_dim
    total = dc * w + w  # x proj
    total += 2 * (w * w + w)  # timestep MLP
    total += db * w + w  # z proj
    total += depth * ((w * 3 * w + 3 * w) + 2 * (w * w + w))  # ada + fc1/fc2 per block
    total += w * 2 * w + 2 * w  # output modulation
    total += w * dc + dc  # output projection
    return total


def peak_memory_estimate(variant: GuidanceVariant, dims: ProfileDims) -> int:
    """Float32 bytes of the dominant live tensors in one forward (batch 1):
    the resident stream, one qkv projection, one attention matrix, and one
    MLP hidden activation."""
    with_cls, _ = token_counts(variant, dims.n, dims.n_cls)
    seq = with_cls
    pairs_one_layer = attention_pair_count(variant, dims.n, dims.n_cls, 1)
    floats = seq * dims.embed_dim * 2 + 3 * seq * dims.embed_dim + pairs_one_layer + 4 * seq * dims.embed_dim
    return 4 * floats


def build_variant(
    variant: GuidanceVariant, dims: ProfileDims, seed: int = 0
) -> GuidanceBackbone:
    torch.manual_seed(seed)
    cfg = BackboneConfig(
        variant=variant,
        n_positions=dims.n,
        n_class_tokens=dims.n_cls,
        n_classes=dims.n_classes,
        continuous_dim=dims.continuous_dim,
        codeword_dim=dims.codeword_dim,
        embed_dim=dims.embed_dim,
        depth=dims.depth,
        num_heads=dims.num_heads,
        codebook_size=dims.codebook_size,
    )
    codebook = None
    if variant is GuidanceVariant.DC_MIX:
        codebook = torch.randn(
            dims.codebook_size, dims.codeword_dim, generator=torch.Generator().manual_seed(seed)
        )
    return GuidanceBackbone(cfg, codebook=codebook)


def _forward_once(model: GuidanceBackbone, dims: ProfileDims, batch: int = 1):
    x_c = torch.randn(batch, dims.n, dims.continuous_dim)
    mask = torch.zeros(batch, dims.n, dtype=torch.bool)
    mask[:, : max(1, dims.n // 2)] = True
    guidance = torch.randint(0, dims.codebook_size, (batch, dims.n))
    class_ids = torch.zeros(batch, dtype=torch.long)
    if model.variant is GuidanceVariant.DC_MIX:
        mixed = dc_mix(x_c, guidance, mask, model)
        return model(class_ids, mixed=mixed), mask, x_c
    if model.variant is GuidanceVariant.MAR_BASELINE:
        return model(class_ids, x_c=x_c, mask=mask), mask, x_c
    return model(class_ids, x_c=x_c, mask=mask, guidance=guidance), mask, x_c


def profile_variant(
    variant: GuidanceVariant,
    dims: ProfileDims = ProfileDims(),
    timing_reps: int = 2,
    measure_time: bool = True,
) -> CostReport:
    """Build the variant at `dims`, assert analytic == instrumented counts,
    and (optionally) measure wall-clock for a training step and one sampled
    image. With measure_time=False the timing fields are reported as 0."""
    dims.validate()
    model = build_variant(variant, dims)
    head = DenoiserHead(dims.continuous_dim, dims.embed_dim, width=256, depth=3)

    out, mask, x_c = _forward_once(model, dims)
    analytic_pairs = attention_pair_count(variant, dims.n, dims.n_cls, dims.depth)
    if out.attention_pairs != analytic_pairs:
        raise AssertionError(
            f"instrumented attention pairs {out.attention_pairs} != analytic {analytic_pairs}"
        )
    built_params = sum(p.numel() for p in model.parameters() if p.requires_grad)
    analytic_params = backbone_param_count(variant, dims)
    if built_params != analytic_params:
        raise AssertionError(
            f"built parameter count {built_params} != analytic {analytic_params}"
        )
    built_head = sum(p.numel() for p in head.parameters() if p.requires_grad)
    analytic_head = head_param_count(dims)
    if built_head != analytic_head:
        raise AssertionError(f"head parameter count {built_head} != analytic {analytic_head}")

    train_seconds, sample_seconds = 0.0, 0.0
    if measure_time:
        schedule = DiffusionSchedule.cosine(1000, 50)
        opt = torch.optim.Adam(list(model.parameters()) + list(head.parameters()), lr=1e-3)
        gen = torch.Generator().manual_seed(0)

        def train_step() -> None:
            out, mask, x_c = _forward_once(model, dims, batch=8)
            loss = denoise_loss(head, out.z[mask], x_c[mask], schedule, gen)
            opt.zero_grad()
            loss.backward()
            opt.step()

        train_step()  # warm up
        t0 = time.perf_counter()
        for _ in range(timing_reps):
            train_step()
        train_seconds = (time.perf_counter() - t0) / timing_reps

        decode = build_decode_schedule(dims.n, min(8, dims.n), "cosine")
        rng = np.random.default_rng(0)

        @torch.no_grad()
        def sample_image() -> None:
            x = torch.zeros(1, dims.n, dims.continuous_dim)
            still = torch.ones(1, dims.n, dtype=torch.bool)
            guidance = torch.randint(0, dims.codebook_size, (1, dims.n))
            cls = torch.zeros(1, dtype=torch.long)
            for count in decode.counts:
                if model.variant is GuidanceVariant.DC_MIX:
                    mixed = dc_mix(x, guidance, still, model)
                    z = model(cls, mixed=mixed).z
                elif model.variant is GuidanceVariant.MAR_BASELINE:
                    z = model(cls, x_c=x, mask=still).z
                else:
                    z = model(cls, x_c=x, mask=still, guidance=guidance).z
                picks = rng.choice(np.flatnonzero(still[0].numpy()), size=count, replace=False)
                tokens = sample_token(head, z[0, picks], schedule, gen)
                x[0, picks] = tokens
                still[0, picks] = False

        sample_image()  # warm up
        t0 = time.perf_counter()
        sample_image()
        sample_seconds = time.perf_counter() - t0

    with_cls, without_cls = token_counts(variant, dims.n, dims.n_cls)
    return CostReport(
        variant=variant.value,
        dims=dims,
        tokens_with_cls=with_cls,
        tokens_without_cls=without_cls,
        attention_pairs=analytic_pairs,
        backbone_params=analytic_params,
        head_params=analytic_head,
        train_step_seconds=train_seconds,
        sample_image_seconds=sample_seconds,
        peak_memory_bytes_estimate=peak_memory_estimate(variant, dims),
    )
