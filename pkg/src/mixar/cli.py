"""Command-line orchestration of the four-stage pipeline.

Subcommands: tokenizer-train | dar-train | mixar-train | sample | eval | profile.
Configuration precedence is built-in defaults < --config JSON file < flags
(including generic --set path.to.key=value overrides); unknown keys are
rejected. Every run directory receives the fully resolved config plus a
manifest, so any run can be reproduced from its own artifacts.

Exit codes: 0 success, 2 usage/config error, 3 missing upstream artifact,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import artifacts
from .backbone import GuidanceVariant
from .data import DatasetSpec, generate_dataset
from .diffusion import DiffusionSchedule
from .discrete import DiscreteARModel, DiscreteModelConfig, train_discrete
from .errors import ConfigError, DependencyError, MixarError, NumericsError
from .masking import RatioConfig
from .metrics import frechet_surrogate, probe_accuracy, probe_features, train_probe
from .mixture import TIMixConfig
from .profiling import ProfileDims, profile_variant
from .tokenizers import TokenizerConfig, TokenizerTrainConfig, train_tokenizers
from .training import (
    MixarModel,
    SeedBundle,
    TrainConfig,
    generate_images,
    train_eval_gap,
    train_mixar,
)

DATASET_DEFAULTS = {"n_classes": 8, "images_per_class": 64, "image_size": 16, "seed": 0}

DEFAULTS: dict[str, dict] = {
    "tokenizer-train": {
        "dataset": dict(DATASET_DEFAULTS),
        "tokenizer": {
            "continuous_dim": 8,
            "codeword_dim": 8,
            "codebook_size": 64,
            "hidden": 64,
            "downsample": 4,
        },
        "train": {
            "epochs": 100,
            "batch_size": 128,
            "lr": 2e-3,
            "beta_kl": 1e-4,
            "beta_commit": 0.25,
            "seed": 0,
        },
    },
    "dar-train": {
        "dataset": dict(DATASET_DEFAULTS),
        "tokenizers": None,
        "model": {"embed_dim": 128, "depth": 4, "num_heads": 4, "n_class_tokens": 4},
        "train": {
            "epochs": 150,
            "batch_size": 128,
            "lr": 1e-3,
            "seed": 0,
            "r_min": 0.7,
            "r_max": 1.0,
        },
    },
    "mixar-train": {
        "dataset": dict(DATASET_DEFAULTS),
        "tokenizers": None,
        "dar": None,
        "continue_from": None,
        "train": {
            "variant": "dc-mix",
            "epochs": 200,
            "batch_size": 128,
            "lr": 1e-3,
            "warmup_fraction": 0.05,
            "ema_decay": 0.999,
            "use_ema": False,
            "seed": 0,
            "r_min": 0.7,
            "r_max": 1.0,
            "eval_interval": 10,
            "frechet_samples": 512,
            "sample_grid": 64,
            "decode_steps": 8,
            "discrete_decode_steps": 8,
            "diffusion_train_steps": 1000,
            "diffusion_sample_steps": 100,
            "head_width": 256,
            "head_depth": 3,
            "depth": 6,
            "embed_dim": 128,
            "num_heads": 4,
            "n_class_tokens": 4,
            "guidance_scale": 1.0,
            "class_dropout": 0.0,
            "temperature": 1.0,
        },
        "ti_mix": {"lambda_start": 1.0, "lambda_end": 1.0, "decay": "linear", "start_epoch": 0},
    },
    "sample": {
        "tokenizers": None,
        "dar": None,
        "mixar": None,
        "seed": 0,
        "n_per_class": 8,
        "classes": None,
        "use_ema": False,
        "guidance_scale": 1.0,
        "decode_steps": 8,
        "discrete_decode_steps": 8,
        "diffusion_sample_steps": 100,
        "temperature": 1.0,
    },
    "eval": {
        "dataset": dict(DATASET_DEFAULTS),
        "tokenizers": None,
        "dar": None,
        "mixar": None,
        "n_samples": 512,
        "seed": 0,
        "probe_seed": 0,
        "use_ema": False,
    },
    "profile": {
        "variant": "dc-mix",
        "N": 256,
        "cls": 64,
        "L": 6,
        "d_b": 128,
        "V": 64,
        "heads": 4,
    },
}


def deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        full = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {full}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = deep_merge(base[key], value, path=f"{full}.")
        else:
            out[key] = value
    return out


def parse_set_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_set(cfg: dict, assignment: str) -> dict:
    if "=" not in assignment:
        raise ConfigError(f"--set needs key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    override: dict = {}
    node = override
    keys = dotted.split(".")
    for key in keys[:-1]:
        node[key] = {}
        node = node[key]
    node[keys[-1]] = parse_set_value(raw)
    return deep_merge(cfg, override)


def resolve_config(command: str, args: argparse.Namespace, flag_overrides: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DependencyError(f"config file {path} does not exist")
        cfg = deep_merge(cfg, json.loads(path.read_text()))
    cfg = deep_merge(cfg, flag_overrides)
    for assignment in args.set or []:
        cfg = apply_set(cfg, assignment)
    return cfg


def resolve_out(command: str, args: argparse.Namespace) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get("MIXAR_RUN_ROOT", "runs"))
    return root / (args.name or command)


def write_run_files(out_dir: Path, command: str, cfg: dict, manifest: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    manifest = {"command": command, **manifest}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def require_dir(path_value, what: str) -> Path:
    if not path_value:
        raise DependencyError(f"missing required upstream artifact: {what}")
    path = Path(path_value)
    if not path.exists():
        raise DependencyError(f"{what} not found at {path}")
    return path


def load_tokenizers(run_dir_value):
    run_dir = require_dir(run_dir_value, "tokenizer run directory")
    cont = artifacts.load_continuous_tokenizer(run_dir / "checkpoints" / "continuous")
    vq = artifacts.load_vq_tokenizer(run_dir / "checkpoints" / "vq")
    return cont, vq


def load_dar(run_dir_value) -> DiscreteARModel:
    run_dir = require_dir(run_dir_value, "discrete generator run directory")
    return artifacts.load_discrete_model(run_dir / "checkpoints" / "dar")


def load_mixar(run_dir_value, use_ema: bool) -> tuple[MixarModel, dict]:
    run_dir = require_dir(run_dir_value, "mixar run directory")
    return artifacts.load_mixar_model(run_dir / "checkpoints" / "mixar", use_ema=use_ema)


def dataset_from_cfg(cfg: dict):
    spec = DatasetSpec(**cfg["dataset"])
    return generate_dataset(spec)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_tokenizer_train(cfg: dict, out_dir: Path) -> int:
    dataset = dataset_from_cfg(cfg)
    tok_cfg = TokenizerConfig(
        image_size=cfg["dataset"]["image_size"],
        continuous_dim=cfg["tokenizer"]["continuous_dim"],
        codeword_dim=cfg["tokenizer"]["codeword_dim"],
        codebook_size=cfg["tokenizer"]["codebook_size"],
        hidden=cfg["tokenizer"]["hidden"],
        downsample=cfg["tokenizer"]["downsample"],
    )
    train_cfg = TokenizerTrainConfig(**cfg["train"])
    result = train_tokenizers(dataset.train.pixels, tok_cfg, train_cfg)
    artifacts.save_continuous_tokenizer(
        out_dir / "checkpoints" / "continuous",
        result.continuous,
        train_cfg.seed,
        result.continuous_losses,
    )
    artifacts.save_vq_tokenizer(
        out_dir / "checkpoints" / "vq",
        result.vq,
        train_cfg.seed,
        result.vq_losses,
        result.codebook_usage,
    )
    write_run_files(
        out_dir,
        "tokenizer-train",
        cfg,
        {
            "final_vae_loss": result.continuous_losses[-1],
            "final_vq_loss": result.vq_losses[-1],
            "codebook_usage": result.codebook_usage,
            "seeds": {"train": train_cfg.seed, "dataset": cfg["dataset"]["seed"]},
        },
    )
    print(f"tokenizers trained: vae={result.continuous_losses[-1]:.5f} "
          f"vq={result.vq_losses[-1]:.5f} usage={result.codebook_usage:.2f}")
    return 0


def cmd_dar_train(cfg: dict, out_dir: Path) -> int:
    dataset = dataset_from_cfg(cfg)
    _, vq = load_tokenizers(cfg["tokenizers"])
    if vq.cfg.image_size != cfg["dataset"]["image_size"]:
        raise DependencyError("tokenizer image size does not match dataset config")
    train_imgs = dataset.train
    with torch.no_grad():
        tokens = vq.encode(train_imgs.pixels)
    torch.manual_seed(cfg["train"]["seed"])
    model = DiscreteARModel(
        DiscreteModelConfig(
            codebook_size=vq.cfg.codebook_size,
            n_positions=vq.cfg.n_tokens,
            n_classes=cfg["dataset"]["n_classes"],
            n_class_tokens=cfg["model"]["n_class_tokens"],
            embed_dim=cfg["model"]["embed_dim"],
            depth=cfg["model"]["depth"],
            num_heads=cfg["model"]["num_heads"],
        )
    )
    result = train_discrete(
        model,
        tokens,
        train_imgs.labels,
        epochs=cfg["train"]["epochs"],
        batch_size=cfg["train"]["batch_size"],
        lr=cfg["train"]["lr"],
        seed=cfg["train"]["seed"],
        ratio_cfg=RatioConfig(cfg["train"]["r_min"], cfg["train"]["r_max"]),
    )
    artifacts.save_discrete_model(
        out_dir / "checkpoints" / "dar", model, cfg["train"]["seed"], result.losses
    )
    write_run_files(
        out_dir,
        "dar-train",
        cfg,
        {
            "final_loss": result.losses[-1],
            "seeds": {"train": cfg["train"]["seed"], "dataset": cfg["dataset"]["seed"]},
        },
    )
    print(f"discrete generator trained: loss={result.losses[-1]:.5f}")
    return 0


def _train_config_from(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        variant=GuidanceVariant(t["variant"]),
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        lr=t["lr"],
        warmup_fraction=t["warmup_fraction"],
        ema_decay=t["ema_decay"],
        use_ema=t["use_ema"],
        ti_mix=TIMixConfig(
            lambda_start=cfg["ti_mix"]["lambda_start"],
            lambda_end=cfg["ti_mix"]["lambda_end"],
            decay=cfg["ti_mix"]["decay"],
            start_epoch=cfg["ti_mix"]["start_epoch"],
        ),
        ratio=RatioConfig(t["r_min"], t["r_max"]),
        seeds=SeedBundle.from_master(t["seed"]),
        eval_interval=t["eval_interval"],
        frechet_samples=t["frechet_samples"],
        sample_grid=t["sample_grid"],
        decode_steps=t["decode_steps"],
        discrete_decode_steps=t["discrete_decode_steps"],
        diffusion_train_steps=t["diffusion_train_steps"],
        diffusion_sample_steps=t["diffusion_sample_steps"],
        head_width=t["head_width"],
        head_depth=t["head_depth"],
        depth=t["depth"],
        embed_dim=t["embed_dim"],
        num_heads=t["num_heads"],
        n_class_tokens=t["n_class_tokens"],
        guidance_scale=t["guidance_scale"],
        class_dropout=t["class_dropout"],
        temperature=t["temperature"],
    )


def cmd_mixar_train(cfg: dict, out_dir: Path) -> int:
    dataset = dataset_from_cfg(cfg)
    cont, vq = load_tokenizers(cfg["tokenizers"])
    train_cfg = _train_config_from(cfg)
    gm = None
    if train_cfg.needs_discrete_model():
        gm = load_dar(cfg["dar"])  # refuses to start without the prior
    elif cfg["dar"]:
        gm = load_dar(cfg["dar"])
    model = None
    if cfg["continue_from"]:
        model, _ = load_mixar(cfg["continue_from"], use_ema=False)
        model.train()
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = None
    if train_cfg.frechet_samples > 0:
        probe, _ = train_probe(dataset.train, seed=0)
    result = train_mixar(train_cfg, cont, vq, gm, dataset, run_dir=out_dir, model=model, probe=probe)
    artifacts.save_mixar_model(
        out_dir / "checkpoints" / "mixar",
        result.model,
        result.ema,
        {
            "seeds": result.model and train_cfg.seeds.to_dict(),
            "gm_invocations": result.gm_invocations,
            "train_losses": result.train_losses,
            "diffusion_train_steps": train_cfg.diffusion_train_steps,
            "diffusion_sample_steps": train_cfg.diffusion_sample_steps,
            "epochs": train_cfg.epochs,
            "ti_mix": cfg["ti_mix"],
        },
    )
    if result.metrics:
        from .plots import plot_loss_curves

        plot_loss_curves(out_dir / "metrics.jsonl", out_dir / "plots" / "losses.png")
    write_run_files(
        out_dir,
        "mixar-train",
        cfg,
        {
            "variant": train_cfg.variant.value,
            "gm_invocations": result.gm_invocations,
            "final_train_loss": result.train_losses[-1],
            "seeds": train_cfg.seeds.to_dict(),
        },
    )
    print(
        f"mixar model trained: variant={train_cfg.variant.value} "
        f"loss={result.train_losses[-1]:.5f} gm_invocations={result.gm_invocations}"
    )
    return 0


def cmd_sample(cfg: dict, out_dir: Path) -> int:
    cont, vq = load_tokenizers(cfg["tokenizers"])
    model, manifest = load_mixar(cfg["mixar"], use_ema=cfg["use_ema"])
    gm = None
    if model.variant.uses_discrete_guidance:
        gm = load_dar(cfg["dar"])  # all three stages must exist for guided sampling
    n_classes = model.backbone.cfg.n_classes
    classes = cfg["classes"] if cfg["classes"] is not None else list(range(n_classes))
    labels = torch.tensor(
        [k for k in classes for _ in range(cfg["n_per_class"])], dtype=torch.long
    )
    gen_cfg = TrainConfig(
        variant=model.variant,
        decode_steps=cfg["decode_steps"],
        discrete_decode_steps=cfg["discrete_decode_steps"],
        diffusion_train_steps=manifest.get("diffusion_train_steps", 1000),
        diffusion_sample_steps=cfg["diffusion_sample_steps"],
        guidance_scale=cfg["guidance_scale"],
        temperature=cfg["temperature"],
    )
    batch, provenance = generate_images(
        gm, model, cont, vq, labels, gen_cfg, seed=cfg["seed"]
    )
    assert bool((provenance == 0).all()), "decode must end fully continuous"
    from .plots import save_image_grid

    samples_dir = out_dir / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    for i in range(len(batch)):
        arr = (batch.pixels[i].numpy().transpose(1, 2, 0) * 255.0).round().astype("uint8")
        Image.fromarray(arr).save(samples_dir / f"class{int(batch.labels[i]):02d}_{i:04d}.png")
    save_image_grid(batch.pixels, out_dir / "samples" / "grid.png")
    write_run_files(out_dir, "sample", cfg, {"n_images": len(batch), "seed": cfg["seed"]})
    print(f"wrote {len(batch)} samples to {samples_dir}")
    return 0


def cmd_eval(cfg: dict, out_dir: Path) -> int:
    dataset = dataset_from_cfg(cfg)
    cont, vq = load_tokenizers(cfg["tokenizers"])
    model, manifest = load_mixar(cfg["mixar"], use_ema=cfg["use_ema"])
    gm = load_dar(cfg["dar"]) if model.variant.uses_discrete_guidance else None
    probe, probe_acc = train_probe(dataset.train, seed=cfg["probe_seed"])

    n = cfg["n_samples"]
    labels = torch.arange(n, dtype=torch.long) % dataset.spec.n_classes
    gen_cfg = TrainConfig(
        variant=model.variant,
        diffusion_train_steps=manifest.get("diffusion_train_steps", 1000),
        diffusion_sample_steps=manifest.get("diffusion_sample_steps", 100),
    )
    schedule = DiffusionSchedule.cosine(
        gen_cfg.diffusion_train_steps, gen_cfg.diffusion_sample_steps
    )
    generated, _ = generate_images(
        gm, model, cont, vq, labels, gen_cfg, schedule=schedule, seed=cfg["seed"]
    )
    real = dataset.train.pixels[:n]
    score = frechet_surrogate(
        probe_features(probe, real), probe_features(probe, generated.pixels)
    )
    gen_acc = probe_accuracy(probe, generated)
    with torch.no_grad():
        roundtrip = cont.decode(cont.encode(real))
    roundtrip_score = frechet_surrogate(
        probe_features(probe, real), probe_features(probe, roundtrip)
    )
    loss_gt, loss_gen = train_eval_gap(
        model, cont, vq, gm,
        dataset.val if len(dataset.val) else dataset.train,
        schedule, seed=cfg["seed"],
    )
    report = {
        "frechet": score,
        "tokenizer_roundtrip_frechet": roundtrip_score,
        "probe_holdout_accuracy": probe_acc,
        "generated_probe_accuracy": gen_acc,
        "val_loss_gt_guidance": loss_gt,
        "val_loss_generated_guidance": loss_gen,
        "train_inference_gap": loss_gen - loss_gt,
        "n_samples": n,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    from .plots import save_image_grid

    save_image_grid(generated.pixels[:64], out_dir / "samples" / "grid.png")
    mixar_metrics = Path(cfg["mixar"]) / "metrics.jsonl"
    if mixar_metrics.exists() and mixar_metrics.read_text().strip():
        from .plots import plot_loss_curves

        plot_loss_curves(mixar_metrics, out_dir / "plots" / "losses.png")
    write_run_files(out_dir, "eval", cfg, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_profile(cfg: dict, out_dir: Path | None) -> int:
    dims = ProfileDims(
        n=cfg["N"],
        n_cls=cfg["cls"],
        depth=cfg["L"],
        embed_dim=cfg["d_b"],
        codebook_size=cfg["V"],
        num_heads=cfg["heads"],
    )
    report = profile_variant(GuidanceVariant(cfg["variant"]), dims)
    print(report.to_json())
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        report.save(out_dir / "cost_report.json")
        write_run_files(out_dir, "profile", cfg, {"variant": report.variant})
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="run directory (overrides MIXAR_RUN_ROOT/--name)")
    parser.add_argument("--name", help="run name under MIXAR_RUN_ROOT")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override any config key, e.g. --set train.epochs=20",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenizer-train", help="train the continuous and VQ tokenizers")
    _add_common(p)
    p.add_argument("--epochs", type=int, dest="flag_epochs")
    p.add_argument("--seed", type=int, dest="flag_seed")

    p = sub.add_parser("dar-train", help="train the discrete masked AR generator")
    _add_common(p)
    p.add_argument("--tokenizers", dest="flag_tokenizers")
    p.add_argument("--epochs", type=int, dest="flag_epochs")
    p.add_argument("--seed", type=int, dest="flag_seed")

    p = sub.add_parser("mixar-train", help="train the guided continuous model")
    _add_common(p)
    p.add_argument("--tokenizers", dest="flag_tokenizers")
    p.add_argument("--dar", dest="flag_dar")
    p.add_argument("--continue-from", dest="flag_continue_from")
    p.add_argument("--variant", dest="flag_variant",
                   choices=[v.value for v in GuidanceVariant])
    p.add_argument("--epochs", type=int, dest="flag_epochs")
    p.add_argument("--seed", type=int, dest="flag_seed")
    p.add_argument("--ti-mix.lambda-start", type=float, dest="flag_lambda_start")
    p.add_argument("--ti-mix.lambda-end", type=float, dest="flag_lambda_end")
    p.add_argument("--ti-mix.start-epoch", type=int, dest="flag_ti_start")
    p.add_argument("--ti-mix.decay", dest="flag_ti_decay", choices=["linear", "cosine"])

    p = sub.add_parser("sample", help="generate images from trained checkpoints")
    _add_common(p)
    p.add_argument("--tokenizers", dest="flag_tokenizers")
    p.add_argument("--dar", dest="flag_dar")
    p.add_argument("--mixar", dest="flag_mixar")
    p.add_argument("--seed", type=int, dest="flag_seed")
    p.add_argument("--n-per-class", type=int, dest="flag_n_per_class")

    p = sub.add_parser("eval", help="score a trained pipeline")
    _add_common(p)
    p.add_argument("--tokenizers", dest="flag_tokenizers")
    p.add_argument("--dar", dest="flag_dar")
    p.add_argument("--mixar", dest="flag_mixar")
    p.add_argument("--n-samples", type=int, dest="flag_n_samples")
    p.add_argument("--seed", type=int, dest="flag_seed")

    p = sub.add_parser("profile", help="cost report for a guidance variant")
    _add_common(p)
    p.add_argument("--variant", dest="flag_variant",
                   choices=[v.value for v in GuidanceVariant])
    p.add_argument("--N", type=int, dest="flag_N")
    p.add_argument("--cls", type=int, dest="flag_cls")
    p.add_argument("--L", type=int, dest="flag_L")
    p.add_argument("--d-b", type=int, dest="flag_d_b")
    p.add_argument("--V", type=int, dest="flag_V")
    return parser


def flag_overrides(command: str, args: argparse.Namespace) -> dict:
    out: dict = {}

    def put(path: list[str], value) -> None:
        if value is None:
            return
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    if command in ("tokenizer-train", "dar-train", "mixar-train"):
        put(["train", "epochs"], getattr(args, "flag_epochs", None))
        put(["train", "seed"], getattr(args, "flag_seed", None))
    if command in ("dar-train", "mixar-train", "sample", "eval"):
        put(["tokenizers"], getattr(args, "flag_tokenizers", None))
    if command in ("mixar-train", "sample", "eval"):
        put(["dar"], getattr(args, "flag_dar", None))
    if command == "mixar-train":
        put(["continue_from"], getattr(args, "flag_continue_from", None))
        put(["train", "variant"], getattr(args, "flag_variant", None))
        put(["ti_mix", "lambda_start"], getattr(args, "flag_lambda_start", None))
        put(["ti_mix", "lambda_end"], getattr(args, "flag_lambda_end", None))
        put(["ti_mix", "start_epoch"], getattr(args, "flag_ti_start", None))
        put(["ti_mix", "decay"], getattr(args, "flag_ti_decay", None))
    if command in ("sample", "eval"):
        put(["mixar"], getattr(args, "flag_mixar", None))
        put(["seed"], getattr(args, "flag_seed", None))
    if command == "sample":
        put(["n_per_class"], getattr(args, "flag_n_per_class", None))
    if command == "eval":
        put(["n_samples"], getattr(args, "flag_n_samples", None))
    if command == "profile":
        put(["variant"], getattr(args, "flag_variant", None))
        put(["N"], getattr(args, "flag_N", None))
        put(["cls"], getattr(args, "flag_cls", None))
        put(["L"], getattr(args, "flag_L", None))
        put(["d_b"], getattr(args, "flag_d_b", None))
        put(["V"], getattr(args, "flag_V", None))
    return out


COMMANDS = {
    "tokenizer-train": cmd_tokenizer_train,
    "dar-train": cmd_dar_train,
    "mixar-train": cmd_mixar_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "profile": cmd_profile,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.command, args, flag_overrides(args.command, args))
        if args.command == "profile" and not (args.out or args.name):
            return COMMANDS[args.command](cfg, None)
        out_dir = resolve_out(args.command, args)
        return COMMANDS[args.command](cfg, out_dir)
    except ConfigError as err:
        print(f"error: category=config message={err}", file=sys.stderr)
        return 2
    except DependencyError as err:
        print(f"error: category=dependency message={err}", file=sys.stderr)
        return 3
    except NumericsError as err:
        print(f"error: category=numerics message={err}", file=sys.stderr)
        return 4
    except MixarError as err:
        print(f"error: category={err.category} message={err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
