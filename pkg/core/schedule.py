"""Noise schedule, v-prediction algebra and deterministic stepping.

The network predicts ``v = alpha_t * eps - sigma_t * z0``. The written
objective in the source material uses ``z_t`` in place of ``z0``; with ``z_t``
the recovery identities below do not close, so the ``z0`` form is the one
implemented here.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch

from core.errors import ContractError, RangeError, require_same_shape
from core.models import SdeditConfig


@dataclass(frozen=True)
class NoiseSchedule:
    num_steps: int
    alpha: torch.Tensor
    sigma: torch.Tensor
    timestep_embed_values: torch.Tensor

    def check_step(self, t: int) -> int:
        t = int(t)
        if t < 0 or t > self.num_steps:
            raise RangeError(f"step index {t} outside [0, {self.num_steps}]")
        return t

    def coefficients(self, t: int) -> Tuple[float, float]:
        t = self.check_step(t)
        return float(self.alpha[t]), float(self.sigma[t])

    def embed_value(self, t: int) -> float:
        return float(self.timestep_embed_values[self.check_step(t)])


def cosine_schedule(num_steps: int) -> NoiseSchedule:
    if num_steps < 1:
        raise RangeError(f"num_steps must be >= 1, got {num_steps}")
    t = torch.arange(num_steps + 1, dtype=torch.float64)
    angle = t * (math.pi / (2 * num_steps))
    alpha = torch.cos(angle)
    sigma = torch.sin(angle)
    alpha[0], sigma[0] = 1.0, 0.0
    alpha[num_steps], sigma[num_steps] = 0.0, 1.0
    # cos(pi/2) is ~6e-17 in floating point; the clamp makes the last step pure noise
    assert torch.all((alpha**2 + sigma**2 - 1).abs() <= 1e-9)
    assert torch.all(alpha[1:] < alpha[:-1]) and torch.all(sigma[1:] > sigma[:-1])
    return NoiseSchedule(
        num_steps=num_steps,
        alpha=alpha,
        sigma=sigma,
        timestep_embed_values=t / num_steps,
    )


def add_noise(z0: torch.Tensor, eps: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    require_same_shape(z0, eps, "add_noise")
    a, s = sched.coefficients(t)
    return a * z0 + s * eps


def v_target(z0: torch.Tensor, eps: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    require_same_shape(z0, eps, "v_target")
    a, s = sched.coefficients(t)
    return a * eps - s * z0


def recover(z_t: torch.Tensor, v: torch.Tensor, t: int, sched: NoiseSchedule) -> Tuple[torch.Tensor, torch.Tensor]:
    """Return (z0_hat, eps_hat) from a noisy latent and a v prediction."""
    require_same_shape(z_t, v, "recover")
    a, s = sched.coefficients(t)
    return a * z_t - s * v, s * z_t + a * v


def denoise_step(z_t: torch.Tensor, v_pred: torch.Tensor, t: int, t_next: int, sched: NoiseSchedule) -> torch.Tensor:
    t = sched.check_step(t)
    t_next = sched.check_step(t_next)
    if t_next >= t:
        raise RangeError(f"denoise_step needs t_next < t, got t={t}, t_next={t_next}")
    z0_hat, eps_hat = recover(z_t, v_pred, t, sched)
    if t_next == 0:
        return z0_hat
    a, s = sched.coefficients(t_next)
    return a * z0_hat + s * eps_hat


def sampling_steps(start: int, iterations: Optional[int] = None) -> List[int]:
    """Descending step indices from ``start`` to 0, evenly spaced."""
    if start < 0:
        raise RangeError(f"start step must be >= 0, got {start}")
    if iterations is None or iterations >= start:
        return list(range(start, -1, -1))
    if iterations < 1:
        raise RangeError("iterations must be >= 1")
    points = torch.linspace(start, 0, iterations + 1).round().long().tolist()
    out: List[int] = []
    for p in points:
        if not out or p < out[-1]:
            out.append(int(p))
    return out


def sdedit_start(
    lq_latent: torch.Tensor,
    cfg: SdeditConfig,
    sched: NoiseSchedule,
    rng: torch.Generator,
) -> Tuple[torch.Tensor, int]:
    cfg.validate()
    if cfg.total_steps != sched.num_steps:
        raise ContractError(f"sdedit total_steps={cfg.total_steps} != schedule num_steps={sched.num_steps}")
    t_start = cfg.remaining_steps
    eps = torch.randn(lq_latent.shape, generator=rng, dtype=lq_latent.dtype).to(lq_latent.device)
    return add_noise(lq_latent, eps, t_start, sched), t_start
