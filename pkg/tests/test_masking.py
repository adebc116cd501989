import math

import numpy as np
import pytest

from mixar.errors import ConfigError, ContractError
from mixar.masking import (
    DecodeSchedule,
    RatioConfig,
    build_decode_schedule,
    build_mask,
    choose_step_positions,
    sample_mask_ratio,
)


def test_degenerate_interval_returns_constant():
    rng = np.random.default_rng(0)
    cfg = RatioConfig(r_min=1.0, r_max=1.0)
    assert all(sample_mask_ratio(rng, cfg) == 1.0 for _ in range(20))


def test_ratio_monte_carlo_mean():
    rng = np.random.default_rng(123)
    cfg = RatioConfig(0.7, 1.0)
    draws = np.array([sample_mask_ratio(rng, cfg) for _ in range(100_000)])
    assert abs(draws.mean() - 0.85) < 0.01
    assert draws.min() >= 0.7 and draws.max() <= 1.0


def test_invalid_bounds_raise_config_error():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        sample_mask_ratio(rng, RatioConfig(r_min=0.9, r_max=0.8))
    with pytest.raises(ConfigError):
        sample_mask_ratio(rng, RatioConfig(r_min=0.0, r_max=0.5))
    with pytest.raises(ConfigError):
        sample_mask_ratio(rng, RatioConfig(r_min=0.5, r_max=1.2))


def test_build_mask_exact_counts():
    rng = np.random.default_rng(0)
    assert build_mask(4, 0.5, rng).n_masked == 2
    assert build_mask(16, 1.0, rng).n_masked == 16


def test_build_mask_monte_carlo_uniformity():
    rng = np.random.default_rng(7)
    n, r, draws = 16, 0.7, 100_000
    counts = np.zeros(n)
    for _ in range(draws):
        counts += build_mask(n, r, rng).mask
    freq = counts / draws
    assert np.all(np.abs(freq - 12 / 16) < 0.01)


def test_build_mask_reproducible_and_popcount_property():
    rng = np.random.default_rng(99)
    cases = [(int(rng.integers(1, 64)), float(rng.uniform(0.01, 1.0)), int(rng.integers(1 << 30)))
             for _ in range(300)]
    for n, r, seed in cases:
        a = build_mask(n, r, np.random.default_rng(seed))
        b = build_mask(n, r, np.random.default_rng(seed))
        assert np.array_equal(a.mask, b.mask)
        assert int(a.mask.sum()) == math.ceil(r * n)


def test_build_mask_contract_violations():
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        build_mask(0, 0.5, rng)
    with pytest.raises(ContractError):
        build_mask(8, 0.0, rng)
    with pytest.raises(ContractError):
        build_mask(8, 1.5, rng)


def test_schedule_single_step_boundary():
    assert build_decode_schedule(10, 1).counts == [10]


def test_schedule_fully_sequential_boundary():
    assert build_decode_schedule(7, 7).counts == [1] * 7


def test_schedule_cosine_16_4_matches_quota_formula():
    # independent oracle: remaining quota floor(n*cos(pi/2 * t/T)), then diff
    n, steps = 16, 4
    remaining = [n] + [math.floor(n * math.cos(math.pi / 2 * t / steps)) for t in range(1, steps + 1)]
    expected = [remaining[t - 1] - remaining[t] for t in range(1, steps + 1)]
    got = build_decode_schedule(n, steps, "cosine").counts
    assert got == expected
    assert sum(got) == n
    assert all(b >= a for a, b in zip(got, got[1:]))  # early steps commit fewer


def test_schedule_partition_property_random_cases():
    rng = np.random.default_rng(5)
    for _ in range(300)  :
        n = int(rng.integers(1, 128))
        steps = int(rng.integers(1, n + 1))
        shape = "cosine" if rng.random() < 0.5 else "linear"
        sched = build_decode_schedule(n, steps, shape)
        assert sched.total == n
        assert sched.steps == steps
        assert min(sched.counts) >= 1


def test_schedule_contract_errors():
    with pytest.raises(ContractError):
        build_decode_schedule(4, 5)
    with pytest.raises(ConfigError):
        build_decode_schedule(8, 2, "quadratic")
    with pytest.raises(ContractError):
        DecodeSchedule(counts=[2, 0, 1])


def test_choose_step_positions_partitions_masked_set():
    rng = np.random.default_rng(3)
    still = np.ones(16, dtype=bool)
    seen: set[int] = set()
    for count in build_decode_schedule(16, 5).counts:
        picks = choose_step_positions(still, count, rng)
        assert not (set(picks.tolist()) & seen)
        seen.update(picks.tolist())
        still[picks] = False
    assert seen == set(range(16))
    with pytest.raises(ContractError):
        choose_step_positions(still, 1, rng)
