"""Model-specific checkpoint savers/loaders on top of the manifest+arrays
format. Each saver records every dimension needed to rebuild the module,
plus seeds and loss history, so a checkpoint directory is self-describing.
"""

from __future__ import annotations

from pathlib import Path

import torch

from .backbone import BackboneConfig, GuidanceBackbone, GuidanceVariant
from .checkpoint import load_manifest, load_state_dict, save_checkpoint
from .diffusion import DenoiserHead
from .discrete import DiscreteARModel, DiscreteModelConfig
from .errors import DependencyError
from .tokenizers import ContinuousTokenizer, TokenizerConfig, VQTokenizer
from .training import Ema, MixarModel


def _tokenizer_manifest(kind: str, cfg: TokenizerConfig, seed: int, losses: list[float]) -> dict:
    return {
        "kind": kind,
        "image_size": cfg.image_size,
        "channels": cfg.channels,
        "downsample": cfg.downsample,
        "continuous_dim": cfg.continuous_dim,
        "codeword_dim": cfg.codeword_dim,
        "codebook_size": cfg.codebook_size,
        "hidden": cfg.hidden,
        "seed": seed,
        "loss_history": losses,
    }


def _tokenizer_config(manifest: dict) -> TokenizerConfig:
    return TokenizerConfig(
        image_size=manifest["image_size"],
        channels=manifest["channels"],
        downsample=manifest["downsample"],
        continuous_dim=manifest["continuous_dim"],
        codeword_dim=manifest["codeword_dim"],
        codebook_size=manifest["codebook_size"],
        hidden=manifest["hidden"],
    )


def save_continuous_tokenizer(
    out_dir: str | Path, tok: ContinuousTokenizer, seed: int, losses: list[float]
) -> Path:
    return save_checkpoint(
        out_dir, _tokenizer_manifest("continuous", tok.cfg, seed, losses), tok.state_dict()
    )


def save_vq_tokenizer(
    out_dir: str | Path, tok: VQTokenizer, seed: int, losses: list[float], usage: float
) -> Path:
    manifest = _tokenizer_manifest("vq", tok.cfg, seed, losses)
    manifest["codebook_usage"] = usage
    return save_checkpoint(out_dir, manifest, tok.state_dict())


def load_continuous_tokenizer(ckpt_dir: str | Path) -> ContinuousTokenizer:
    manifest = load_manifest(ckpt_dir)
    if manifest.get("kind") != "continuous":
        raise DependencyError(f"{ckpt_dir} is not a continuous tokenizer checkpoint")
    tok = ContinuousTokenizer(_tokenizer_config(manifest))
    tok.load_state_dict(load_state_dict(ckpt_dir))
    tok.is_trained = True
    tok.eval()
    return tok


def load_vq_tokenizer(ckpt_dir: str | Path) -> VQTokenizer:
    manifest = load_manifest(ckpt_dir)
    if manifest.get("kind") != "vq":
        raise DependencyError(f"{ckpt_dir} is not a vq tokenizer checkpoint")
    tok = VQTokenizer(_tokenizer_config(manifest))
    tok.load_state_dict(load_state_dict(ckpt_dir))
    tok.is_trained = True
    tok.eval()
    return tok


def save_discrete_model(
    out_dir: str | Path, model: DiscreteARModel, seed: int, losses: list[float]
) -> Path:
    cfg = model.cfg
    manifest = {
        "kind": "discrete-ar",
        "codebook_size": cfg.codebook_size,
        "n_positions": cfg.n_positions,
        "n_classes": cfg.n_classes,
        "n_class_tokens": cfg.n_class_tokens,
        "embed_dim": cfg.embed_dim,
        "depth": cfg.depth,
        "num_heads": cfg.num_heads,
        "seed": seed,
        "loss_history": losses,
    }
    return save_checkpoint(out_dir, manifest, model.state_dict())


def load_discrete_model(ckpt_dir: str | Path) -> DiscreteARModel:
    manifest = load_manifest(ckpt_dir)
    if manifest.get("kind") != "discrete-ar":
        raise DependencyError(f"{ckpt_dir} is not a discrete generator checkpoint")
    model = DiscreteARModel(
        DiscreteModelConfig(
            codebook_size=manifest["codebook_size"],
            n_positions=manifest["n_positions"],
            n_classes=manifest["n_classes"],
            n_class_tokens=manifest["n_class_tokens"],
            embed_dim=manifest["embed_dim"],
            depth=manifest["depth"],
            num_heads=manifest["num_heads"],
        )
    )
    model.load_state_dict(load_state_dict(ckpt_dir))
    model.eval()
    return model


def save_mixar_model(
    out_dir: str | Path,
    model: MixarModel,
    ema: Ema | None,
    manifest_extra: dict,
) -> Path:
    cfg = model.backbone.cfg
    manifest = {
        "kind": "mixar",
        "variant": cfg.variant.value,
        "n_positions": cfg.n_positions,
        "n_class_tokens": cfg.n_class_tokens,
        "n_classes": cfg.n_classes,
        "continuous_dim": cfg.continuous_dim,
        "codeword_dim": cfg.codeword_dim,
        "embed_dim": cfg.embed_dim,
        "depth": cfg.depth,
        "num_heads": cfg.num_heads,
        "codebook_size": cfg.codebook_size,
        "head_width": model.head.width,
        "head_depth": len(model.head.blocks),
        **manifest_extra,
    }
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    if ema is not None:
        arrays.update({f"ema.{k}": v for k, v in ema.shadow.items()})
    return save_checkpoint(out_dir, manifest, arrays)


def load_mixar_model(ckpt_dir: str | Path, use_ema: bool = False) -> tuple[MixarModel, dict]:
    manifest = load_manifest(ckpt_dir)
    if manifest.get("kind") != "mixar":
        raise DependencyError(f"{ckpt_dir} is not a mixar model checkpoint")
    arrays = load_state_dict(ckpt_dir)
    prefix = "ema." if use_ema else "model."
    state = {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}
    if not state:
        raise DependencyError(f"checkpoint {ckpt_dir} holds no '{prefix}*' arrays")
    variant = GuidanceVariant(manifest["variant"])
    backbone_cfg = BackboneConfig(
        variant=variant,
        n_positions=manifest["n_positions"],
        n_class_tokens=manifest["n_class_tokens"],
        n_classes=manifest["n_classes"],
        continuous_dim=manifest["continuous_dim"],
        codeword_dim=manifest["codeword_dim"],
        embed_dim=manifest["embed_dim"],
        depth=manifest["depth"],
        num_heads=manifest["num_heads"],
        codebook_size=manifest["codebook_size"],
    )
    codebook = None
    if variant is GuidanceVariant.DC_MIX:
        codebook = state["backbone.codebook"]
    backbone = GuidanceBackbone(backbone_cfg, codebook=codebook)
    head = DenoiserHead(
        token_dim=manifest["continuous_dim"],
        cond_dim=manifest["embed_dim"],
        width=manifest["head_width"],
        depth=manifest["head_depth"],
    )
    model = MixarModel(backbone, head)
    model.load_state_dict(state)
    model.eval()
    return model, manifest
