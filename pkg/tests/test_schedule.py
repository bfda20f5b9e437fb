import math

import pytest
import torch

from core.errors import ContractError, RangeError
from core.models import SdeditConfig
from core.schedule import (
    add_noise,
    cosine_schedule,
    denoise_step,
    recover,
    sampling_steps,
    sdedit_start,
    v_target,
)


@pytest.mark.parametrize("steps", [1, 4, 30, 1000])
def test_cosine_schedule_is_variance_preserving(steps):
    sched = cosine_schedule(steps)
    assert torch.all((sched.alpha**2 + sched.sigma**2 - 1).abs() <= 1e-9)
    assert torch.all(sched.alpha[1:] < sched.alpha[:-1])
    assert torch.all(sched.sigma[1:] > sched.sigma[:-1])
    assert sched.coefficients(0) == (1.0, 0.0)
    assert sched.coefficients(steps) == (0.0, 1.0)


def test_schedule_rejects_out_of_range_steps():
    sched = cosine_schedule(10)
    with pytest.raises(RangeError):
        sched.coefficients(11)
    with pytest.raises(RangeError):
        cosine_schedule(0)


def test_add_noise_at_last_step_is_pure_noise():
    sched = cosine_schedule(30)
    z0, eps = torch.randn(2, 3, 4, 4, 4), torch.randn(2, 3, 4, 4, 4)
    assert (add_noise(z0, eps, 30, sched) - eps).abs().max() <= 1e-6


def test_add_noise_at_quarter_turn():
    # T=4, t=2 puts the angle at pi/4
    sched = cosine_schedule(4)
    out = add_noise(torch.ones(2, 4, 4, 1, dtype=torch.float64), torch.zeros(2, 4, 4, 1, dtype=torch.float64), 2, sched)
    assert (out - math.sqrt(2) / 2).abs().max() <= 1e-9


def test_shape_mismatch_is_a_contract_error():
    sched = cosine_schedule(4)
    with pytest.raises(ContractError):
        add_noise(torch.zeros(2, 3), torch.zeros(3, 2), 1, sched)


@pytest.mark.parametrize("t", [1, 7, 15, 29])
def test_recover_inverts_add_noise(t):
    sched = cosine_schedule(30)
    gen = torch.Generator().manual_seed(t)
    z0, eps = torch.randn(1, 4, 4, 8, 8, generator=gen), torch.randn(1, 4, 4, 8, 8, generator=gen)
    z0_hat, eps_hat = recover(add_noise(z0, eps, t, sched), v_target(z0, eps, t, sched), t, sched)
    assert (z0_hat - z0).abs().max() <= 1e-6
    assert (eps_hat - eps).abs().max() <= 1e-6


@pytest.mark.parametrize("iterations", [None, 1, 7])
def test_oracle_trajectory_recovers_z0(iterations):
    sched = cosine_schedule(30)
    z0, eps = torch.randn(1, 4, 4, 8, 8), torch.randn(1, 4, 4, 8, 8)
    steps = sampling_steps(30, iterations)
    assert steps[0] == 30 and steps[-1] == 0
    z = add_noise(z0, eps, 30, sched)
    for t, t_next in zip(steps, steps[1:]):
        z = denoise_step(z, v_target(z0, eps, t, sched), t, t_next, sched)
    assert (z - z0).abs().max() <= 1e-5


def test_denoise_step_must_move_towards_zero():
    sched = cosine_schedule(10)
    z = torch.zeros(1, 2, 4, 4)
    with pytest.raises(RangeError):
        denoise_step(z, z, 3, 3, sched)


@pytest.mark.parametrize(
    "strength,total,expected",
    [(0.6, 30, 18), (1.0, 30, 30), (0.5, 10, 5), (0.01, 30, 1)],
)
def test_sdedit_remaining_steps(strength, total, expected):
    assert SdeditConfig(strength, total).remaining_steps == expected


def test_sdedit_start_noises_to_the_remaining_step():
    sched = cosine_schedule(30)
    latent = torch.randn(1, 4, 4, 8, 8)
    z, t_start = sdedit_start(latent, SdeditConfig(0.6, 30), sched, torch.Generator().manual_seed(0))
    assert t_start == 18
    assert z.shape == latent.shape
    with pytest.raises(ContractError):
        sdedit_start(latent, SdeditConfig(0.6, 20), sched, torch.Generator())
    with pytest.raises(RangeError):
        sdedit_start(latent, SdeditConfig(0.0, 30), sched, torch.Generator())
