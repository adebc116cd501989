"""Per-token denoising head: forward noising, the noise-prediction
objective, and ancestral sampling conditioned on a backbone vector.

The signal schedule is the usual cumulative-product form: a noised token is
sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, with abar_0 = 1 and abar
strictly decreasing. Sampling walks a strided sub-chain of the training
schedule so that exactly `n_sample_steps` head evaluations happen per token
(twice that under classifier-free guidance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ContractError, NumericsError


def cosine_alpha_bar(n_train_steps: int, offset: float = 0.008) -> np.ndarray:
    """Cosine cumulative-signal curve over t = 0..n_train_steps (abar_0 = 1)."""
    t = np.arange(n_train_steps + 1, dtype=np.float64)
    f = np.cos((t / n_train_steps + offset) / (1.0 + offset) * math.pi / 2.0) ** 2
    abar = f / f[0]
    # cap per-step noise like the usual cosine parameterization
    betas = np.clip(1.0 - abar[1:] / abar[:-1], 0.0, 0.999)
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


@dataclass
class DiffusionSchedule:
    alpha_bar: np.ndarray  # length n_train_steps + 1, alpha_bar[0] == 1
    n_sample_steps: int = 100

    def __post_init__(self) -> None:
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab[0] != 1.0:
            raise ConfigError("alpha_bar[0] must be exactly 1")
        if not (np.diff(ab) < 0).all():
            raise ConfigError("alpha_bar must be strictly decreasing")
        if not ((ab > 0) & (ab <= 1)).all():
            raise ConfigError("alpha_bar must lie in (0, 1]")
        if not (1 <= self.n_sample_steps <= self.n_train_steps):
            raise ConfigError("need 1 <= n_sample_steps <= n_train_steps")
        self.alpha_bar = ab

    @property
    def n_train_steps(self) -> int:
        return len(self.alpha_bar) - 1

    @classmethod
    def cosine(cls, n_train_steps: int = 1000, n_sample_steps: int = 100) -> "DiffusionSchedule":
        return cls(alpha_bar=cosine_alpha_bar(n_train_steps), n_sample_steps=n_sample_steps)

    def sample_timesteps(self) -> np.ndarray:
        """Strictly decreasing sub-chain of n_sample_steps + 1 timesteps.

        The top point is T * K / (K + 1), not T itself: the cumulative signal
        at the very end of a capped cosine schedule is vanishingly small, and
        a stride ending there would divide by a near-zero per-step alpha and
        amplify prediction error catastrophically. For (T=1000, K=100) this
        yields the usual {0, 10, ..., 990} set.
        """
        top = self.n_train_steps * self.n_sample_steps / (self.n_sample_steps + 1.0)
        ts = np.round(np.linspace(0.0, top, self.n_sample_steps + 1)).astype(int)
        if len(np.unique(ts)) != len(ts):
            raise ConfigError("sampling sub-chain has duplicate timesteps")
        return ts[::-1]


def forward_noising(
    x0: torch.Tensor, t: int | torch.Tensor, eps: torch.Tensor, schedule: DiffusionSchedule
) -> torch.Tensor:
    """Mix clean tokens with caller-supplied unit noise at timestep t."""
    t_arr = torch.as_tensor(t, dtype=torch.long)
    if t_arr.numel() and (
        int(t_arr.min()) < 0 or int(t_arr.max()) > schedule.n_train_steps
    ):
        raise ContractError(f"t outside [0, {schedule.n_train_steps}]")
    abar = torch.from_numpy(schedule.alpha_bar).to(x0.dtype)[t_arr]
    while abar.ndim < x0.ndim:
        abar = abar.unsqueeze(-1)
    return torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * eps


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.dtype)
    args = t[:, None].to(freqs.dtype) * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class AdaResBlock(nn.Module):
    """Residual MLP block modulated (shift/scale/gate) by the conditioning."""

    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width, eps=1e-6, elementwise_affine=False)
        self.ada = nn.Linear(width, 3 * width)
        nn.init.zeros_(self.ada.weight)
        nn.init.zeros_(self.ada.bias)
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)
        self.act = nn.SiLU()

    def forward(self, h: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        shift, scale, gate = self.ada(cond).chunk(3, dim=-1)
        out = self.norm(h) * (1.0 + scale) + shift
        out = self.fc2(self.act(self.fc1(out)))
        return h + gate * out


class DenoiserHead(nn.Module):
    """Lightweight MLP predicting the injected noise from (x_t, t, z)."""

    def __init__(self, token_dim: int = 8, cond_dim: int = 128, width: int = 256, depth: int = 3):
        super().__init__()
        if min(token_dim, cond_dim, width, depth) <= 0:
            raise ConfigError("all head dims must be positive")
        self.token_dim = token_dim
        self.cond_dim = cond_dim
        self.width = width
        self.x_proj = nn.Linear(token_dim, width)
        self.t_embed = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width))
        self.z_proj = nn.Linear(cond_dim, width)
        self.blocks = nn.ModuleList(AdaResBlock(width) for _ in range(depth))
        self.out_norm = nn.LayerNorm(width, eps=1e-6, elementwise_affine=False)
        self.out_ada = nn.Linear(width, 2 * width)
        nn.init.zeros_(self.out_ada.weight)
        nn.init.zeros_(self.out_ada.bias)
        # zero-init output: a fresh head predicts exactly zero noise
        self.out = nn.Linear(width, token_dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        self.eval_calls = 0

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if x_t.shape[-1] != self.token_dim or z.shape[-1] != self.cond_dim:
            raise ContractError("denoiser input widths do not match configuration")
        self.eval_calls += 1
        cond = self.t_embed(
            timestep_embedding(t.to(x_t.dtype), self.width).to(x_t.dtype)
        ) + self.z_proj(z)
        h = self.x_proj(x_t)
        for block in self.blocks:
            h = block(h, cond)
        shift, scale = self.out_ada(cond).chunk(2, dim=-1)
        return self.out(self.out_norm(h) * (1.0 + scale) + shift)


def draw_noising(
    x0: torch.Tensor, schedule: DiffusionSchedule, generator: torch.Generator | None
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Sample (x_t, t, eps) with t uniform on [1, n_train_steps]."""
    t = torch.randint(
        1, schedule.n_train_steps + 1, (x0.shape[0],), generator=generator
    )
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    return forward_noising(x0, t, eps, schedule), t, eps


def denoise_loss(
    head: DenoiserHead,
    z: torch.Tensor,
    x0: torch.Tensor,
    schedule: DiffusionSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Mean squared noise-prediction error, summed over token channels."""
    if z.shape[0] != x0.shape[0]:
        raise ContractError("conditioning/target batch mismatch")
    x_t, t, eps = draw_noising(x0, schedule, generator)
    eps_hat = head(x_t, t, z)
    loss = (eps - eps_hat).pow(2).sum(dim=-1).mean()
    if not torch.isfinite(loss):
        raise NumericsError(f"denoising loss is non-finite: {loss.item()}")
    return loss


@torch.no_grad()
def sample_token(
    head: DenoiserHead,
    z: torch.Tensor,
    schedule: DiffusionSchedule,
    generator: torch.Generator | None = None,
    guidance_scale: float = 1.0,
    z_null: torch.Tensor | None = None,
    temperature: float = 1.0,
) -> torch.Tensor:
    """Ancestral sampling of continuous tokens conditioned on z.

    With guidance_scale != 1 the head is evaluated twice per step and the
    noise prediction is extrapolated from the null-conditioned one.
    """
    if guidance_scale != 1.0 and z_null is None:
        raise ContractError("guidance_scale != 1 requires z_null")
    batch = z.shape[0]
    abar = schedule.alpha_bar
    x = torch.randn((batch, head.token_dim), generator=generator, dtype=z.dtype)
    ts = schedule.sample_timesteps()
    for i in range(len(ts) - 1):
        t_cur, t_prev = int(ts[i]), int(ts[i + 1])
        t_tensor = torch.full((batch,), t_cur, dtype=torch.long)
        eps_hat = head(x, t_tensor, z)
        if guidance_scale != 1.0:
            eps_null = head(x, t_tensor, z_null)
            eps_hat = eps_null + guidance_scale * (eps_hat - eps_null)
        ab_cur, ab_prev = abar[t_cur], abar[t_prev]
        alpha = ab_cur / ab_prev
        beta = 1.0 - alpha
        mean = (x - beta / math.sqrt(1.0 - ab_cur) * eps_hat) / math.sqrt(alpha)
        if t_prev > 0:
            sigma = math.sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_cur))
            noise = torch.randn(x.shape, generator=generator, dtype=x.dtype)
            x = mean + temperature * sigma * noise
        else:
            x = mean
    return x
