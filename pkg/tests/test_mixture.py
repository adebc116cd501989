import math

import numpy as np
import pytest
import torch

from mixar.errors import ConfigError, ContractError
from mixar.mixture import (
    MixedSequence,
    Provenance,
    TIMixConfig,
    dc_mix,
    lambda_schedule,
    ti_mix,
)


class ToyEmbedders:
    """Marker embeddings: continuous -> value, discrete -> -(index + 1)."""

    def embed_continuous(self, tokens):
        return tokens.clone()

    def embed_discrete(self, indices):
        return -(indices.unsqueeze(-1).float() + 1.0).expand(*indices.shape, 2).clone()


def test_dc_mix_substitutes_masked_positions():
    x_c = torch.arange(8, dtype=torch.float32).reshape(1, 4, 2)
    x_d = torch.tensor([[3, 1, 0, 2]])
    mask = torch.tensor([[False, True, True, False]])
    mixed = dc_mix(x_c, x_d, mask, ToyEmbedders())
    assert torch.equal(mixed.embeddings[0, 0], x_c[0, 0])
    assert torch.equal(mixed.embeddings[0, 3], x_c[0, 3])
    assert torch.equal(mixed.embeddings[0, 1], torch.tensor([-2.0, -2.0]))
    assert torch.equal(mixed.embeddings[0, 2], torch.tensor([-1.0, -1.0]))
    expect = [Provenance.CONTINUOUS, Provenance.DISCRETE_GT, Provenance.DISCRETE_GT, Provenance.CONTINUOUS]
    assert mixed.provenance[0].tolist() == [int(p) for p in expect]


def test_dc_mix_all_zero_mask_is_pure_continuous():
    x_c = torch.randn(2, 6, 2)
    x_d = torch.zeros(2, 6, dtype=torch.long)
    mask = torch.zeros(2, 6, dtype=torch.bool)
    mixed = dc_mix(x_c, x_d, mask, ToyEmbedders())
    assert torch.equal(mixed.embeddings, x_c)
    assert (mixed.provenance == int(Provenance.CONTINUOUS)).all()


def test_dc_mix_all_ones_mask_is_pure_discrete():
    x_c = torch.randn(1, 5, 2)
    x_d = torch.arange(5).reshape(1, 5)
    mask = torch.ones(1, 5, dtype=torch.bool)
    mixed = dc_mix(x_c, x_d, mask, ToyEmbedders())
    assert (mixed.provenance != int(Provenance.CONTINUOUS)).all()
    assert torch.equal(mixed.embeddings, ToyEmbedders().embed_discrete(x_d))


def test_dc_mix_length_mismatch_contract():
    with pytest.raises(ContractError):
        dc_mix(torch.randn(1, 4, 2), torch.zeros(1, 5, dtype=torch.long),
               torch.zeros(1, 4, dtype=torch.bool), ToyEmbedders())


def test_dc_mix_composition_law_random_cases():
    rng = np.random.default_rng(11)
    emb = ToyEmbedders()
    for _ in range(200):
        n = int(rng.integers(1, 40))
        x_c = torch.from_numpy(rng.normal(size=(1, n, 2))).float()
        x_d = torch.from_numpy(rng.integers(0, 9, size=(1, n)))
        mask = torch.from_numpy(rng.random((1, n)) < rng.random())
        mixed = dc_mix(x_c, x_d, mask, emb)
        cont = mixed.provenance == int(Provenance.CONTINUOUS)
        assert torch.equal(cont, ~mask)
        assert torch.equal(mixed.embeddings[~mask], x_c[~mask])
        assert torch.equal(mixed.embeddings[mask], emb.embed_discrete(x_d)[mask])


def test_mixed_sequence_provenance_invariant_enforced():
    with pytest.raises(ContractError):
        MixedSequence(
            embeddings=torch.zeros(1, 3, 2),
            provenance=torch.tensor([[0, 0, 1]], dtype=torch.int8),
            mask=torch.tensor([[False, True, True]]),
        )


def test_ti_mix_lambda_one_keeps_ground_truth():
    rng = np.random.default_rng(0)
    gt = torch.arange(10)
    gen = torch.where(torch.arange(10) % 2 == 0, gt, gt + 7)
    mask = torch.ones(10, dtype=torch.bool)
    out = ti_mix(gt, gen, mask, 1.0, rng)
    assert torch.equal(out.tokens, gt)
    assert torch.equal(out.ground_truth, mask)


def test_ti_mix_lambda_zero_uses_generated_in_mask():
    rng = np.random.default_rng(0)
    gt = torch.arange(10)
    gen = gt + 3
    mask = torch.ones(10, dtype=torch.bool)
    out = ti_mix(gt, gen, mask, 0.0, rng)
    assert torch.equal(out.tokens, gen)
    assert not out.ground_truth.any()


def test_ti_mix_monte_carlo_half():
    rng = np.random.default_rng(42)
    n = 10_000
    gt = torch.zeros(n, dtype=torch.long)
    gen = torch.ones(n, dtype=torch.long)
    mask = torch.ones(n, dtype=torch.bool)
    out = ti_mix(gt, gen, mask, 0.5, rng)
    frac_gt = float((out.tokens == 0).float().mean())
    assert abs(frac_gt - 0.5) < 0.02


def test_ti_mix_unmasked_positions_always_ground_truth():
    rng = np.random.default_rng(1)
    gt = torch.arange(20)
    gen = gt.clone()
    mask = torch.zeros(20, dtype=torch.bool)
    mask[:11] = True
    gen[mask] = gt[mask] + 5
    out = ti_mix(gt, gen, mask, 0.3, rng)
    assert torch.equal(out.tokens[~mask], gt[~mask])


def test_ti_mix_rejects_generated_mismatch_off_mask():
    rng = np.random.default_rng(1)
    gt = torch.arange(6)
    gen = gt + 1  # differs everywhere, incl. unmasked
    mask = torch.tensor([True, True, True, False, False, False])
    with pytest.raises(ContractError):
        ti_mix(gt, gen, mask, 0.5, rng)


def test_ti_mix_invalid_lambda_contract():
    rng = np.random.default_rng(1)
    gt = torch.zeros(4, dtype=torch.long)
    mask = torch.ones(4, dtype=torch.bool)
    with pytest.raises(ContractError):
        ti_mix(gt, gt, mask, 1.5, rng)


def test_lambda_schedule_origin_terminus_midpoint():
    cfg = TIMixConfig(lambda_start=1.0, lambda_end=0.0, decay="linear", start_epoch=100)
    assert lambda_schedule(0, 200, cfg) == 1.0
    assert lambda_schedule(200, 200, cfg) == 0.0
    assert lambda_schedule(150, 200, cfg) == pytest.approx(0.5)


def test_lambda_schedule_monotone_nonincreasing():
    for decay in ("linear", "cosine"):
        cfg = TIMixConfig(lambda_start=0.9, lambda_end=0.1, decay=decay, start_epoch=7)
        vals = [lambda_schedule(e, 50, cfg) for e in range(51)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert vals[0] == 0.9
        assert vals[-1] == pytest.approx(0.1)


def test_lambda_schedule_cosine_midpoint():
    cfg = TIMixConfig(lambda_start=1.0, lambda_end=0.0, decay="cosine", start_epoch=0)
    assert lambda_schedule(5, 10, cfg) == pytest.approx(0.5 * (1 + math.cos(math.pi / 2)))


def test_ti_mix_config_validation():
    with pytest.raises(ConfigError):
        TIMixConfig(lambda_start=0.2, lambda_end=0.5).validate()
    with pytest.raises(ConfigError):
        TIMixConfig(decay="exp").validate()
    with pytest.raises(ContractError):
        lambda_schedule(3, 2, TIMixConfig())
