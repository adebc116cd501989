"""Training loop for the guided continuous model, the end-to-end sampling
pipeline, and the train-inference gap probe.

The flow per training step: draw a mask ratio and mask, fetch the
pre-tokenized continuous/discrete sequences, optionally swap part of the
ground-truth discrete guidance for generator infills (TI-Mix), assemble the
variant's backbone input, and regress the injected noise at masked
positions with the diffusion head.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import BackboneConfig, GuidanceBackbone, GuidanceVariant
from .data import ImageBatch, ToyDataset
from .diffusion import DenoiserHead, DiffusionSchedule, denoise_loss, sample_token
from .discrete import DiscreteARModel, infill_discrete, generate_discrete, mask_discrete_sequence
from .errors import ConfigError, ContractError, NumericsError
from .masking import RatioConfig, build_decode_schedule, build_mask_batch, choose_step_positions
from .metrics import ProbeClassifier, frechet_surrogate, probe_features, train_probe
from .mixture import Provenance, TIMixConfig, dc_mix, lambda_schedule, ti_mix
from .tokenizers import ContinuousTokenizer, VQTokenizer


@dataclass(frozen=True)
class SeedBundle:
    data: int = 0
    masking: int = 1
    diffusion: int = 2
    ti_mix: int = 3
    init: int = 4

    @classmethod
    def from_master(cls, master: int) -> "SeedBundle":
        children = np.random.SeedSequence(master).spawn(5)
        vals = [int(c.generate_state(1)[0]) for c in children]
        return cls(*vals)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainConfig:
    variant: GuidanceVariant = GuidanceVariant.DC_MIX
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    warmup_fraction: float = 0.05
    ema_decay: float = 0.999
    use_ema: bool = False  # evaluate/generate with EMA weights instead of raw
    ti_mix: TIMixConfig = field(default_factory=lambda: TIMixConfig(lambda_start=1.0, lambda_end=1.0))
    ratio: RatioConfig = field(default_factory=RatioConfig)
    seeds: SeedBundle = field(default_factory=SeedBundle)
    eval_interval: int = 10
    frechet_samples: int = 512
    sample_grid: int = 64
    decode_steps: int = 8
    discrete_decode_steps: int = 8
    diffusion_train_steps: int = 1000
    diffusion_sample_steps: int = 100
    head_width: int = 256
    head_depth: int = 3
    depth: int = 6
    embed_dim: int = 128
    num_heads: int = 4
    n_class_tokens: int = 4
    guidance_scale: float = 1.0
    class_dropout: float = 0.0  # train-time class-token dropout for CFG
    temperature: float = 1.0  # discrete sampling temperature

    def min_lambda(self) -> float:
        self.ti_mix.validate()
        return min(
            lambda_schedule(e, self.epochs, self.ti_mix) for e in range(self.epochs + 1)
        )

    def needs_discrete_model(self) -> bool:
        return self.min_lambda() < 1.0


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    val_loss_gt: float
    val_loss_gen: float
    frechet: float | None
    sample_grid: str | None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


class MixarModel(nn.Module):
    """Backbone + denoising head + the latent normalization statistics."""

    def __init__(self, backbone: GuidanceBackbone, head: DenoiserHead):
        super().__init__()
        self.backbone = backbone
        self.head = head
        d_c = backbone.cfg.continuous_dim
        self.register_buffer("latent_mean", torch.zeros(1, 1, d_c))
        self.register_buffer("latent_std", torch.ones(1, 1, d_c))

    @property
    def variant(self) -> GuidanceVariant:
        return self.backbone.variant

    def set_latent_stats(self, tokens: torch.Tensor) -> None:
        flat = tokens.reshape(-1, tokens.shape[-1])
        self.latent_mean.copy_(flat.mean(dim=0).reshape(1, 1, -1))
        self.latent_std.copy_(flat.std(dim=0).clamp_min(1e-6).reshape(1, 1, -1))

    def normalize(self, tokens: torch.Tensor) -> torch.Tensor:
        return (tokens - self.latent_mean) / self.latent_std

    def denormalize(self, tokens: torch.Tensor) -> torch.Tensor:
        return tokens * self.latent_std + self.latent_mean

    def conditioning(
        self,
        x_c_norm: torch.Tensor,
        mask: torch.Tensor,
        class_ids: torch.Tensor,
        guidance: torch.Tensor | None = None,
        guidance_ground_truth: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Assemble the variant's input and return z (B, N, d_b)."""
        v = self.variant
        if v is GuidanceVariant.DC_MIX:
            if guidance is None:
                raise ContractError("dc-mix conditioning requires discrete guidance")
            mixed = dc_mix(x_c_norm, guidance, mask, self.backbone, guidance_ground_truth)
            return self.backbone(class_ids, mixed=mixed).z
        if v is GuidanceVariant.MAR_BASELINE:
            return self.backbone(class_ids, x_c=x_c_norm, mask=mask).z
        return self.backbone(class_ids, x_c=x_c_norm, mask=mask, guidance=guidance).z


class Ema:
    """Exponential moving average of a model's parameters and buffers."""

    def __init__(self, model: nn.Module, decay: float):
        if not (0.0 <= decay < 1.0):
            raise ConfigError(f"EMA decay must lie in [0, 1), got {decay}")
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    @torch.no_grad()
    def update(self, model: nn.Module) -> None:
        for k, v in model.state_dict().items():
            if v.dtype.is_floating_point:
                self.shadow[k].mul_(self.decay).add_(v, alpha=1.0 - self.decay)
            else:
                self.shadow[k].copy_(v)

    def copy_to(self, model: nn.Module) -> None:
        model.load_state_dict(self.shadow)


@dataclass
class MixarTrainResult:
    model: MixarModel
    ema: Ema
    metrics: list[MetricsRecord]
    gm_invocations: int
    schedule: DiffusionSchedule
    train_losses: list[float] = field(default_factory=list)


def lr_at(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    warmup = max(1, int(round(warmup_fraction * total_steps)))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def build_mixar_model(cfg: TrainConfig, n_positions: int, tokenizer_dims: dict, codebook: torch.Tensor | None) -> MixarModel:
    torch.manual_seed(cfg.seeds.init)
    backbone_cfg = BackboneConfig(
        variant=cfg.variant,
        n_positions=n_positions,
        n_class_tokens=cfg.n_class_tokens,
        n_classes=tokenizer_dims["n_classes"],
        continuous_dim=tokenizer_dims["continuous_dim"],
        codeword_dim=tokenizer_dims["codeword_dim"],
        embed_dim=cfg.embed_dim,
        depth=cfg.depth,
        num_heads=cfg.num_heads,
        codebook_size=tokenizer_dims["codebook_size"],
    )
    backbone = GuidanceBackbone(backbone_cfg, codebook=codebook)
    head = DenoiserHead(
        token_dim=backbone_cfg.continuous_dim,
        cond_dim=cfg.embed_dim,
        width=cfg.head_width,
        depth=cfg.head_depth,
    )
    return MixarModel(backbone, head)


def _pretokenize(
    cont: ContinuousTokenizer, vq: VQTokenizer, images: ImageBatch, batch: int = 256
) -> tuple[torch.Tensor, torch.Tensor]:
    xs, ds = [], []
    with torch.no_grad():
        for start in range(0, len(images), batch):
            px = images.pixels[start : start + batch]
            xs.append(cont.encode(px))
            ds.append(vq.encode(px))
    return torch.cat(xs), torch.cat(ds)


def _guidance_for_batch(
    variant: GuidanceVariant,
    gt_tokens: torch.Tensor,
    mask: torch.Tensor,
    class_ids: torch.Tensor,
    lam: float,
    gm: DiscreteARModel | None,
    ti_rng: np.random.Generator,
    ti_gen: torch.Generator,
    temperature: float,
    counter: list[int],
) -> tuple[torch.Tensor | None, torch.Tensor | None]:
    """Ground-truth/generated guidance mix for one batch (None for MAR)."""
    if not variant.uses_discrete_guidance:
        return None, None
    if lam >= 1.0:
        return gt_tokens, mask
    if gm is None:
        raise ConfigError("TI-Mix with lambda < 1 requires the discrete generator")
    masked_seq = mask_discrete_sequence(gt_tokens, mask, gm.mask_id)
    generated = infill_discrete(gm, masked_seq, class_ids, ti_gen, temperature)
    counter[0] += 1
    mixed = ti_mix(gt_tokens, generated, mask, lam, ti_rng)
    return mixed.tokens, mixed.ground_truth


def train_mixar(
    cfg: TrainConfig,
    cont: ContinuousTokenizer,
    vq: VQTokenizer,
    gm: DiscreteARModel | None,
    dataset: ToyDataset,
    run_dir: str | Path | None = None,
    model: MixarModel | None = None,
    probe: ProbeClassifier | None = None,
) -> MixarTrainResult:
    """Train the guided continuous model; returns model + EMA + metrics.

    Pass `model` to continue training an existing checkpointed model (the
    second-phase protocol); otherwise a fresh one is built from cfg.seeds.
    """
    if cfg.needs_discrete_model() and gm is None:
        raise ConfigError("config enables TI-Mix (lambda < 1) but no discrete model given")
    train_imgs = dataset.train
    if len(train_imgs) == 0:
        raise ContractError("empty training split")

    x_c_all, x_d_all = _pretokenize(cont, vq, train_imgs)
    n_positions = x_c_all.shape[1]
    dims = {
        "n_classes": dataset.spec.n_classes,
        "continuous_dim": cont.cfg.continuous_dim,
        "codeword_dim": vq.cfg.codeword_dim,
        "codebook_size": vq.cfg.codebook_size,
    }
    if model is None:
        codebook = vq.codebook.detach() if cfg.variant is GuidanceVariant.DC_MIX else None
        model = build_mixar_model(cfg, n_positions, dims, codebook)
        model.set_latent_stats(x_c_all)
    x_norm_all = model.normalize(x_c_all)
    labels_all = train_imgs.labels

    schedule = DiffusionSchedule(
        alpha_bar=DiffusionSchedule.cosine(cfg.diffusion_train_steps).alpha_bar,
        n_sample_steps=cfg.diffusion_sample_steps,
    )
    if gm is not None:
        gm.eval()
        for p in gm.parameters():
            p.requires_grad_(False)

    data_rng = np.random.default_rng(cfg.seeds.data)
    mask_rng = np.random.default_rng(cfg.seeds.masking)
    diff_gen = torch.Generator().manual_seed(cfg.seeds.diffusion)
    ti_rng = np.random.default_rng(cfg.seeds.ti_mix)
    ti_gen = torch.Generator().manual_seed(cfg.seeds.ti_mix)
    cls_drop_rng = np.random.default_rng(cfg.seeds.ti_mix + 1)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    ema = Ema(model, cfg.ema_decay)
    result = MixarTrainResult(model=model, ema=ema, metrics=[], gm_invocations=0, schedule=schedule)
    gm_counter = [0]

    n = len(train_imgs)
    bs = min(cfg.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0

    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "samples").mkdir(parents=True, exist_ok=True)
        metrics_path = run_dir / "metrics.jsonl"
        metrics_path.write_text("")

    for epoch in range(cfg.epochs):
        lam = lambda_schedule(epoch, cfg.epochs, cfg.ti_mix)
        order = data_rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            x_norm = x_norm_all[idx]
            gt_tokens = x_d_all[idx]
            class_ids = labels_all[idx].clone()
            if cfg.class_dropout > 0.0:
                drop = cls_drop_rng.random(len(idx)) < cfg.class_dropout
                class_ids[torch.from_numpy(drop)] = model.backbone.null_class_id
            mask = build_mask_batch(len(idx), n_positions, cfg.ratio, mask_rng)
            guidance, gt_flags = _guidance_for_batch(
                cfg.variant, gt_tokens, mask, class_ids, lam, gm,
                ti_rng, ti_gen, cfg.temperature, gm_counter,
            )
            z = model.conditioning(x_norm, mask, class_ids, guidance, gt_flags)
            loss = denoise_loss(model.head, z[mask], x_norm[mask], schedule, diff_gen)
            if not torch.isfinite(loss):
                raise NumericsError(f"training loss non-finite at epoch {epoch}")
            for group in opt.param_groups:
                group["lr"] = lr_at(step, total_steps, cfg.lr, cfg.warmup_fraction)
            opt.zero_grad()
            loss.backward()
            opt.step()
            ema.update(model)
            epoch_loss += float(loss.detach())
            n_batches += 1
            step += 1
        result.train_losses.append(epoch_loss / n_batches)

        last_epoch = epoch == cfg.epochs - 1
        if cfg.eval_interval > 0 and ((epoch + 1) % cfg.eval_interval == 0 or last_epoch):
            record = _eval_point(
                cfg, model, ema, cont, vq, gm, dataset, schedule, epoch,
                result.train_losses[-1], run_dir, probe,
            )
            result.metrics.append(record)
            if run_dir is not None:
                with open(run_dir / "metrics.jsonl", "a") as fh:
                    fh.write(record.to_json() + "\n")

    result.gm_invocations = gm_counter[0]
    return result


def _eval_model(cfg: TrainConfig, model: MixarModel, ema: Ema) -> MixarModel:
    if not cfg.use_ema:
        return model
    clone = build_mixar_model(
        cfg,
        model.backbone.cfg.n_positions,
        {
            "n_classes": model.backbone.cfg.n_classes,
            "continuous_dim": model.backbone.cfg.continuous_dim,
            "codeword_dim": model.backbone.cfg.codeword_dim,
            "codebook_size": model.backbone.cfg.codebook_size,
        },
        model.backbone.codebook if model.variant is GuidanceVariant.DC_MIX else None,
    )
    ema.copy_to(clone)
    return clone


def _eval_point(
    cfg: TrainConfig,
    model: MixarModel,
    ema: Ema,
    cont: ContinuousTokenizer,
    vq: VQTokenizer,
    gm: DiscreteARModel | None,
    dataset: ToyDataset,
    schedule: DiffusionSchedule,
    epoch: int,
    train_loss: float,
    run_dir: Path | None,
    probe: ProbeClassifier | None,
) -> MetricsRecord:
    eval_model = _eval_model(cfg, model, ema)
    val = dataset.val if len(dataset.val) > 0 else dataset.train
    loss_gt, loss_gen = train_eval_gap(eval_model, cont, vq, gm, val, schedule, seed=1234)

    frechet = None
    sample_rel = None
    if cfg.frechet_samples > 0:
        if probe is None:
            probe, _ = train_probe(dataset.train, seed=0)
        generated, _ = generate_images(
            gm, eval_model, cont, vq,
            labels=_balanced_labels(dataset.spec.n_classes, cfg.frechet_samples),
            cfg=cfg, schedule=schedule, seed=4321,
        )
        real = dataset.train.pixels[: cfg.frechet_samples]
        frechet = frechet_surrogate(
            probe_features(probe, real), probe_features(probe, generated.pixels)
        )
        if run_dir is not None and cfg.sample_grid > 0:
            from .plots import save_image_grid

            sample_rel = f"samples/epoch_{epoch + 1:04d}.png"
            save_image_grid(generated.pixels[: cfg.sample_grid], run_dir / sample_rel)
    return MetricsRecord(
        epoch=epoch + 1,
        train_loss=train_loss,
        val_loss_gt=loss_gt,
        val_loss_gen=loss_gen,
        frechet=frechet,
        sample_grid=sample_rel,
    )


def _balanced_labels(n_classes: int, count: int) -> torch.Tensor:
    return torch.arange(count, dtype=torch.long) % n_classes


@torch.no_grad()
def train_eval_gap(
    model: MixarModel,
    cont: ContinuousTokenizer,
    vq: VQTokenizer,
    gm: DiscreteARModel | None,
    images: ImageBatch,
    schedule: DiffusionSchedule,
    seed: int = 0,
    n_batches: int = 4,
    batch_size: int = 128,
    ratio: RatioConfig = RatioConfig(),
) -> tuple[float, float]:
    """Held-out diffusion loss under ground-truth vs generated guidance.

    Both arms see identical masks and identical noise draws; only the
    discrete guidance differs. For the baseline variant the arms coincide.
    """
    x_c, x_d = _pretokenize(cont, vq, images)
    x_norm = model.normalize(x_c)
    labels = images.labels
    n = len(images)
    mask_rng = np.random.default_rng(seed)
    losses = {"gt": 0.0, "gen": 0.0}
    count = 0
    for b in range(min(n_batches, math.ceil(n / batch_size))):
        idx = slice(b * batch_size, min(n, (b + 1) * batch_size))
        xb, db, lb = x_norm[idx], x_d[idx], labels[idx]
        if xb.shape[0] == 0:
            break
        mask = build_mask_batch(xb.shape[0], xb.shape[1], ratio, mask_rng)
        if model.variant.uses_discrete_guidance and gm is not None:
            masked_seq = mask_discrete_sequence(db, mask, gm.mask_id)
            gen_tokens = infill_discrete(
                gm, masked_seq, lb, torch.Generator().manual_seed(seed + b)
            )
        else:
            gen_tokens = db
        for arm, guidance in (("gt", db), ("gen", gen_tokens)):
            if model.variant.uses_discrete_guidance:
                flags = mask if arm == "gt" else torch.zeros_like(mask)
                z = model.conditioning(xb, mask, lb, guidance, flags)
            else:
                z = model.conditioning(xb, mask, lb)
            noise_gen = torch.Generator().manual_seed(seed + 1000 + b)
            losses[arm] += float(
                denoise_loss(model.head, z[mask], xb[mask], schedule, noise_gen)
            )
        count += 1
    if count == 0:
        raise ContractError("no evaluation batches")
    return losses["gt"] / count, losses["gen"] / count


@torch.no_grad()
def generate_images(
    gm: DiscreteARModel | None,
    model: MixarModel,
    cont: ContinuousTokenizer,
    vq: VQTokenizer,
    labels: torch.Tensor,
    cfg: TrainConfig,
    schedule: DiffusionSchedule | None = None,
    seed: int = 0,
    batch_size: int = 256,
) -> tuple[ImageBatch, torch.Tensor]:
    """Full pipeline: discrete prior -> guided continuous decoding -> pixels.

    Returns the decoded batch plus the final per-position provenance flags
    (all CONTINUOUS once decoding has covered every position).
    """
    if model.variant.uses_discrete_guidance and gm is None:
        raise ConfigError(f"variant {model.variant.value} requires the discrete generator")
    if schedule is None:
        schedule = DiffusionSchedule.cosine(cfg.diffusion_train_steps, cfg.diffusion_sample_steps)
    n_positions = model.backbone.cfg.n_positions
    torch_gen = torch.Generator().manual_seed(seed)
    pos_rng = np.random.default_rng(seed + 1)
    decode = build_decode_schedule(n_positions, min(cfg.decode_steps, n_positions), "cosine")
    d_decode = build_decode_schedule(
        n_positions, min(cfg.discrete_decode_steps, n_positions), "cosine"
    )

    pixels_out = []
    provenance_out = []
    for start in range(0, len(labels), batch_size):
        lb = labels[start : start + batch_size]
        b = lb.shape[0]
        guidance = None
        if model.variant.uses_discrete_guidance:
            guidance = generate_discrete(
                gm, lb, d_decode, cfg.temperature, torch_gen, pos_rng
            )
        x = torch.zeros(b, n_positions, model.backbone.cfg.continuous_dim)
        still = torch.ones(b, n_positions, dtype=torch.bool)
        provenance = torch.full(
            (b, n_positions),
            int(Provenance.DISCRETE_GEN if guidance is not None else Provenance.CONTINUOUS),
            dtype=torch.int8,
        )
        for count in decode.counts:
            if model.variant.uses_discrete_guidance:
                gt_flags = torch.zeros_like(still)  # all guidance is generated
                z = model.conditioning(x, still, lb, guidance, gt_flags)
            else:
                z = model.conditioning(x, still, lb)
            z_null = None
            if cfg.guidance_scale != 1.0:
                null_ids = torch.full_like(lb, model.backbone.null_class_id)
                if model.variant.uses_discrete_guidance:
                    z_null = model.conditioning(x, still, null_ids, guidance, gt_flags)
                else:
                    z_null = model.conditioning(x, still, null_ids)
            rows, cols = [], []
            for i in range(b):
                picks = choose_step_positions(still[i].numpy(), count, pos_rng)
                rows.extend([i] * len(picks))
                cols.extend(picks.tolist())
            rows_t, cols_t = torch.tensor(rows), torch.tensor(cols)
            sampled = sample_token(
                model.head,
                z[rows_t, cols_t],
                schedule,
                torch_gen,
                guidance_scale=cfg.guidance_scale,
                z_null=None if z_null is None else z_null[rows_t, cols_t],
                temperature=1.0,
            )
            x[rows_t, cols_t] = sampled
            still[rows_t, cols_t] = False
            provenance[rows_t, cols_t] = int(Provenance.CONTINUOUS)
        if bool(still.any()):
            raise ContractError("decode schedule left positions uncovered")
        pixels = cont.decode(model.denormalize(x))
        pixels_out.append(pixels)
        provenance_out.append(provenance)
    return ImageBatch(torch.cat(pixels_out), labels.clone()), torch.cat(provenance_out)
