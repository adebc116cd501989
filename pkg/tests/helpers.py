"""Shared test utilities, most importantly the independent gradient oracle:
central finite differences over model parameters at float64, compared
against backprop gradients.
"""

from __future__ import annotations

import numpy as np
import torch


def finite_difference_check(
    loss_fn,
    params: list[torch.nn.Parameter],
    h: float = 1e-5,
    rel_tol: float = 1e-4,
    tiny: float = 1e-7,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare autograd gradients of loss_fn() against central differences.

    loss_fn must be deterministic and differentiable in `params` (re-running
    it must consume no fresh randomness). Coordinates whose analytic and
    numeric gradients are both below `tiny` are checked absolutely; the rest
    must agree to `rel_tol` relative error. Returns the worst relative error
    among the non-tiny coordinates.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for param, grad in zip(params, grads):
        flat = param.detach().reshape(-1)
        gflat = grad.detach().reshape(-1)
        coords = range(flat.numel())
        if max_coords_per_param is not None and flat.numel() > max_coords_per_param:
            coords = rng.choice(flat.numel(), size=max_coords_per_param, replace=False)
        for i in coords:
            orig = flat[i].item()
            step = h * max(1.0, abs(orig))
            with torch.no_grad():
                flat[i] = orig + step
            loss_plus = loss_fn().item()
            with torch.no_grad():
                flat[i] = orig - step
            loss_minus = loss_fn().item()
            with torch.no_grad():
                flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            analytic = gflat[i].item()
            scale = max(abs(numeric), abs(analytic))
            if scale < tiny:
                assert abs(numeric - analytic) < 1e-6, (
                    f"tiny-gradient coordinate differs: {analytic} vs {numeric}"
                )
                continue
            rel = abs(numeric - analytic) / scale
            worst = max(worst, rel)
            assert rel < rel_tol, (
                f"gradient mismatch at {param.shape} coord {i}: "
                f"analytic={analytic:.10g} numeric={numeric:.10g} rel={rel:.3g}"
            )
    return worst


def total_variation(a: torch.Tensor, b: torch.Tensor, n_bins: int) -> float:
    """TV distance between the empirical distributions of two index arrays."""
    ha = torch.bincount(a.reshape(-1), minlength=n_bins).double()
    hb = torch.bincount(b.reshape(-1), minlength=n_bins).double()
    return float(0.5 * torch.abs(ha / ha.sum() - hb / hb.sum()).sum())
