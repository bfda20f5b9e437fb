"""Stage-wise training with exact trainability masks.

Stages, in the order a full run executes them:

* ``vae``  - reconstruction training of the toy VAE (decoder adapter excluded)
* ``base`` - v-prediction pretraining of the denoiser and reference encoder,
  no ControlNet; ends by cloning the ControlNet and copying forward W_v/W_o
  into the backward role
* ``sr``   - TinySRNet on degraded/GT frame pairs
* ``1``    - ControlNet only, v-prediction loss
* ``2``    - backward-role temporal W_v/W_o only, loss against the
  frame-reversed v target with rotated forward attention injected
* ``3``    - VAE decoder adapter and discriminator, L2 + perceptual + GAN on
  decoded few-step samples
"""
import copy
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F
from tqdm import tqdm

from core.errors import RangeError, TrainingDivergedError
from core.data import TrainingPair
from core.losses import gan_losses, perceptual_loss, v_prediction_loss
from core.models import SamplerOptions, StageConfig
from core.network import ModelBundle, Reference
from core.rng import generator
from core.sampling import (
    backward_generation,
    forward_generation,
    model_prediction,
    reverse_frames,
    sample_clip,
    upsample_clip,
)
from core.schedule import NoiseSchedule, add_noise, cosine_schedule, v_target

logger = logging.getLogger(__name__)


def _is_backward_projection(name: str) -> bool:
    return ".to_v.bwd." in name or ".to_out.bwd." in name


def _is_adapter(name: str) -> bool:
    return ".down." in name or ".up." in name


# stage -> predicate over bundle parameter names
STAGE_MASKS: Dict[str, Callable[[str], bool]] = {
    "vae": lambda n: n.startswith("vae.") and not _is_adapter(n),
    "base": lambda n: (n.startswith("denoiser.") and not _is_backward_projection(n)) or n.startswith("reference_encoder."),
    "sr": lambda n: n.startswith("sr_net."),
    "1": lambda n: n.startswith("controlnet."),
    "2": lambda n: n.startswith("denoiser.") and _is_backward_projection(n),
    "3": lambda n: (n.startswith("vae.") and _is_adapter(n)) or n.startswith("discriminator."),
}


def stage_mask(bundle: ModelBundle, stage: str) -> Dict[str, bool]:
    if stage not in STAGE_MASKS:
        raise RangeError(f"unknown stage {stage!r}")
    rule = STAGE_MASKS[stage]
    return {name: rule(name) for name, _ in bundle.named_parameters()}


def apply_mask(bundle: ModelBundle, stage: str) -> List[torch.nn.Parameter]:
    mask = stage_mask(bundle, stage)
    params = []
    for name, param in bundle.named_parameters():
        param.requires_grad_(mask[name])
        if mask[name]:
            params.append(param)
    return params


@dataclass
class TrainingResult:
    stage: str
    losses: List[float] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def window_mean(self, fraction: float = 0.1, last: bool = True) -> float:
        if not self.losses:
            return float("nan")
        size = max(1, int(len(self.losses) * fraction))
        window = self.losses[-size:] if last else self.losses[:size]
        return sum(window) / len(window)


@dataclass
class DiffusionBatch:
    z0: torch.Tensor
    eps: torch.Tensor
    t: int
    z_t: torch.Tensor
    v: torch.Tensor
    cond: torch.Tensor
    ref_first: Reference
    ref_last: Reference


def sample_batch(pairs: List[TrainingPair], cfg: StageConfig, step: int) -> Tuple[torch.Tensor, torch.Tensor]:
    gen = generator(cfg.seed, "batch", cfg.stage, step)
    idx = torch.randint(len(pairs), (cfg.batch_size,), generator=gen).tolist()
    return torch.stack([pairs[i].gt for i in idx]), torch.stack([pairs[i].lq for i in idx])


def diffusion_batch(
    bundle: ModelBundle,
    gt: torch.Tensor,
    lq: torch.Tensor,
    sched: NoiseSchedule,
    gen: torch.Generator,
    reference_source: str = "gt",
    t: Optional[int] = None,
) -> DiffusionBatch:
    """Encode a (gt, lq) batch and draw a timestep and noise for it.

    The reference frames come from ``gt`` or from the upsampled ``lq`` clip;
    ``lq`` trains the model without appearance disentanglement.
    """
    cond = upsample_clip(lq, tuple(gt.shape[-2:]))
    source = gt if reference_source == "gt" else cond
    with torch.no_grad():
        z0 = bundle.vae_encode(gt)
    if t is None:
        t = int(torch.randint(1, sched.num_steps + 1, (1,), generator=gen))
    eps = torch.randn(z0.shape, generator=gen, dtype=z0.dtype).to(z0.device)
    return DiffusionBatch(
        z0=z0,
        eps=eps,
        t=t,
        z_t=add_noise(z0, eps, t, sched),
        v=v_target(z0, eps, t, sched),
        cond=cond,
        ref_first=bundle.encode_reference(source[:, 0]),
        ref_last=bundle.encode_reference(source[:, -1]),
    )


def base_loss(bundle: ModelBundle, batch: DiffusionBatch, sched: NoiseSchedule) -> torch.Tensor:
    pred = model_prediction(bundle, batch.z_t, batch.t, batch.ref_first, batch.cond, sched, use_control=False)
    return v_prediction_loss(pred, batch.v)


def forward_loss(bundle: ModelBundle, batch: DiffusionBatch, sched: NoiseSchedule) -> torch.Tensor:
    pred = model_prediction(bundle, batch.z_t, batch.t, batch.ref_first, batch.cond, sched)
    return v_prediction_loss(pred, batch.v)


def backward_loss(bundle: ModelBundle, batch: DiffusionBatch, sched: NoiseSchedule) -> torch.Tensor:
    with torch.no_grad():
        _, record = forward_generation(batch.z_t, batch.t, batch.ref_first, batch.cond, bundle, sched)
    p_b = backward_generation(batch.z_t, batch.t, batch.ref_last, batch.cond, record, bundle, sched)
    return v_prediction_loss(p_b, reverse_frames(batch.v))


def _check_finite(loss: torch.Tensor, stage: str, step: int, history: List[float]) -> None:
    value = float(loss.detach())
    if not math.isfinite(value):
        logger.error("Stage %s diverged at step %d (loss=%s)", stage, step, value)
        raise TrainingDivergedError(stage, step, history + [value])


def _optimize(
    bundle: ModelBundle,
    cfg: StageConfig,
    loss_fn: Callable[[int], torch.Tensor],
    progress: bool,
) -> TrainingResult:
    cfg.validate()
    params = apply_mask(bundle, cfg.stage)
    optimizer = torch.optim.AdamW(params, lr=cfg.learning_rate)
    result = TrainingResult(cfg.stage)
    logger.info("Stage %s: %d iterations, %d trainable tensors", cfg.stage, cfg.iterations, len(params))
    try:
        for step in tqdm(range(cfg.iterations), desc=f"stage {cfg.stage}", disable=not progress):
            loss = loss_fn(step)
            _check_finite(loss, cfg.stage, step, result.losses)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            result.losses.append(float(loss.detach()))
            if cfg.log_every and (step + 1) % cfg.log_every == 0:
                logger.info("Stage %s step %d/%d loss %.5f", cfg.stage, step + 1, cfg.iterations, result.losses[-1])
    finally:
        bundle.requires_grad_(True)
    if result.losses:
        logger.info("Stage %s finished: last-window loss %.5f", cfg.stage, result.window_mean())
    return result


def train_vae(pairs: List[TrainingPair], bundle: ModelBundle, cfg: StageConfig, progress: bool = False) -> TrainingResult:
    def loss_fn(step: int) -> torch.Tensor:
        gt, _ = sample_batch(pairs, cfg, step)
        recon = bundle.vae_decode(bundle.vae_encode(gt), adapter_on=False)
        return F.l1_loss(recon, gt) + F.mse_loss(recon, gt)

    return _optimize(bundle, cfg, loss_fn, progress)


def train_base(pairs: List[TrainingPair], bundle: ModelBundle, cfg: StageConfig, progress: bool = False) -> TrainingResult:
    sched = cosine_schedule(cfg.train_timesteps)

    def loss_fn(step: int) -> torch.Tensor:
        gt, lq = sample_batch(pairs, cfg, step)
        batch = diffusion_batch(bundle, gt, lq, sched, generator(cfg.seed, "noise", cfg.stage, step), "gt")
        return base_loss(bundle, batch, sched)

    result = _optimize(bundle, cfg, loss_fn, progress)
    bundle.reclone_controlnet()
    bundle.denoiser.sync_backward_from_forward()
    return result


def train_sr(pairs: List[TrainingPair], bundle: ModelBundle, cfg: StageConfig, scale: int, progress: bool = False) -> TrainingResult:
    def loss_fn(step: int) -> torch.Tensor:
        gt, lq = sample_batch(pairs, cfg, step)
        gt_frames, lq_frames = gt.flatten(0, 1), lq.flatten(0, 1)
        out = bundle.sr_net(lq_frames, scale)
        return F.l1_loss(out, gt_frames) + F.mse_loss(out, gt_frames)

    return _optimize(bundle, cfg, loss_fn, progress)


def train_stage1(pairs: List[TrainingPair], bundle: ModelBundle, cfg: StageConfig, progress: bool = False) -> TrainingResult:
    sched = cosine_schedule(cfg.train_timesteps)

    def loss_fn(step: int) -> torch.Tensor:
        gt, lq = sample_batch(pairs, cfg, step)
        batch = diffusion_batch(bundle, gt, lq, sched, generator(cfg.seed, "noise", cfg.stage, step), cfg.reference_source)
        return forward_loss(bundle, batch, sched)

    return _optimize(bundle, cfg, loss_fn, progress)


def train_stage2(pairs: List[TrainingPair], bundle: ModelBundle, cfg: StageConfig, progress: bool = False) -> TrainingResult:
    sched = cosine_schedule(cfg.train_timesteps)

    def loss_fn(step: int) -> torch.Tensor:
        gt, lq = sample_batch(pairs, cfg, step)
        batch = diffusion_batch(bundle, gt, lq, sched, generator(cfg.seed, "noise", cfg.stage, step), cfg.reference_source)
        return backward_loss(bundle, batch, sched)

    return _optimize(bundle, cfg, loss_fn, progress)


class CollapseMonitor:
    """Warns when discriminator accuracy sits at chance for a whole window."""

    def __init__(self, window: int, epsilon: float):
        self.history = deque(maxlen=max(window, 1))
        self.epsilon = epsilon

    def update(self, accuracy: float) -> bool:
        self.history.append(accuracy)
        if len(self.history) < self.history.maxlen:
            return False
        collapsed = all(abs(a - 0.5) <= self.epsilon for a in self.history)
        if collapsed:
            self.history.clear()
        return collapsed


def sample_latents(bundle: ModelBundle, gt: torch.Tensor, lq: torch.Tensor, cfg: StageConfig, step: int) -> torch.Tensor:
    """Few-step bidirectional samples used as stage-3 decoder inputs (no gradient)."""
    sched = cosine_schedule(cfg.sample_steps)
    source = gt if cfg.reference_source == "gt" else upsample_clip(lq, tuple(gt.shape[-2:]))
    opts = SamplerOptions(steps=cfg.sample_steps, sdedit_strength=1.0, bidirectional=True, seed=cfg.seed + step)
    return sample_clip(lq, source[:, 0], source[:, -1], bundle, sched, opts, decode=False).latent


def train_stage3(pairs: List[TrainingPair], bundle: ModelBundle, cfg: StageConfig, progress: bool = False) -> TrainingResult:
    cfg.validate()
    params = apply_mask(bundle, "3")
    adapter = [p for p in params if not any(p is d for d in bundle.discriminator.parameters())]
    opt_g = torch.optim.AdamW(adapter, lr=cfg.learning_rate)
    opt_d = torch.optim.AdamW(bundle.discriminator.parameters(), lr=cfg.learning_rate * cfg.disc_lr_multiplier)
    monitor = CollapseMonitor(cfg.collapse_window, cfg.collapse_epsilon)
    result = TrainingResult("3")
    logger.info("Stage 3: %d iterations, %d-step samples, weights percept=%s gan=%s",
                cfg.iterations, cfg.sample_steps, cfg.perceptual_weight, cfg.gan_weight)
    try:
        for step in tqdm(range(cfg.iterations), desc="stage 3", disable=not progress):
            gt, lq = sample_batch(pairs, cfg, step)
            z = sample_latents(bundle, gt, lq, cfg, step)
            pred = bundle.vae_decode(z, adapter_on=True)
            g_loss, d_loss, accuracy = gan_losses(bundle.discriminator, gt, pred)
            loss = F.mse_loss(pred, gt) + cfg.perceptual_weight * perceptual_loss(pred, gt) + cfg.gan_weight * g_loss
            _check_finite(loss, "3", step, result.losses)
            _check_finite(d_loss, "3", step, result.losses)

            opt_g.zero_grad(set_to_none=True)
            loss.backward()
            opt_g.step()
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

            result.losses.append(float(loss.detach()))
            if monitor.update(accuracy):
                message = f"discriminator accuracy stuck at 0.5 +/- {cfg.collapse_epsilon} for {cfg.collapse_window} steps (step {step + 1})"
                logger.warning("Stage 3 GAN collapse: %s", message)
                result.warnings.append(message)
            if cfg.log_every and (step + 1) % cfg.log_every == 0:
                logger.info("Stage 3 step %d/%d loss %.5f d_loss %.5f", step + 1, cfg.iterations, result.losses[-1], float(d_loss))
    finally:
        bundle.requires_grad_(True)
    return result


def train_stage(stage: str, pairs: List[TrainingPair], bundle: ModelBundle, cfg: StageConfig, scale: int = 4, progress: bool = False) -> TrainingResult:
    if not pairs:
        raise RangeError("training needs at least one clip")
    runners = {
        "vae": train_vae,
        "base": train_base,
        "1": train_stage1,
        "2": train_stage2,
        "3": train_stage3,
    }
    if stage == "sr":
        return train_sr(pairs, bundle, cfg, scale, progress)
    if stage not in runners:
        raise RangeError(f"unknown stage {stage!r}")
    return runners[stage](pairs, bundle, cfg, progress)


def gradient_check(
    bundle: ModelBundle,
    gt: torch.Tensor,
    lq: torch.Tensor,
    samples: int = 20,
    step_size: float = 1e-6,
    seed: int = 0,
    timesteps: int = 1000,
) -> List[Tuple[str, int, float, float, float]]:
    """Compare the ControlNet v-prediction loss gradient with central differences.

    Runs on a float64 copy. Zero-initialised projections are randomised first
    so every ControlNet parameter receives gradient. Entries are drawn among
    those whose gradient is at least 1e-3 of the largest one. Returns
    (name, flat index, analytic, numeric, relative error) tuples.
    """
    model = copy.deepcopy(bundle).double()
    gen = generator(seed, "gradient-check")
    with torch.no_grad():
        for conv in model.controlnet.zero_convs:
            conv.weight.copy_(0.1 * torch.randn(conv.weight.shape, generator=gen, dtype=torch.float64))
            conv.bias.copy_(0.1 * torch.randn(conv.bias.shape, generator=gen, dtype=torch.float64))
    sched = cosine_schedule(timesteps)
    batch = diffusion_batch(model, gt.double(), lq.double(), sched, gen, "gt")
    batch = DiffusionBatch(
        **{**batch.__dict__, "ref_first": Reference(batch.ref_first.embed.detach(), batch.ref_first.latent.detach()),
           "ref_last": Reference(batch.ref_last.embed.detach(), batch.ref_last.latent.detach())}
    )

    params = dict(model.controlnet.named_parameters())
    apply_mask(model, "1")
    model.zero_grad(set_to_none=True)
    forward_loss(model, batch, sched).backward()

    candidates = []
    largest = max(float(p.grad.abs().max()) for p in params.values() if p.grad is not None)
    for name, p in params.items():
        if p.grad is None:
            continue
        flat = p.grad.flatten()
        for idx in torch.nonzero(flat.abs() >= 1e-3 * largest).flatten().tolist():
            candidates.append((name, idx))
    picks = torch.randperm(len(candidates), generator=gen)[:samples].tolist()

    out = []
    with torch.no_grad():
        for pick in picks:
            name, idx = candidates[pick]
            flat = params[name].data.view(-1)
            analytic = float(params[name].grad.view(-1)[idx])
            original = float(flat[idx])
            flat[idx] = original + step_size
            up = float(forward_loss(model, batch, sched))
            flat[idx] = original - step_size
            down = float(forward_loss(model, batch, sched))
            flat[idx] = original
            numeric = (up - down) / (2 * step_size)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
            out.append((name, idx, analytic, numeric, rel))
    return out
