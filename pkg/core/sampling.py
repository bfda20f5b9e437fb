"""Forward/backward generation and the bidirectional sampling loop.

The forward pass is conditioned on the enhanced first frame and captures the
temporal attention of every site. The backward pass runs on frame-reversed
latents and condition, is conditioned on the enhanced last frame, and has the
captured maps rotated by 180 degrees injected in place of its own. The two
predictions are averaged (after re-reversing the backward one) each step.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import torch
import torch.nn.functional as F
from einops import rearrange, repeat

from core.attention import AttentionControl, AttentionRecord
from core.errors import ContractError, StructureError, require_same_shape
from core.models import Rect, SamplerOptions, SdeditConfig, TilePlan
from core.network import ModelBundle, Reference
from core.rng import generator
from core.schedule import NoiseSchedule, denoise_step, sampling_steps, sdedit_start
from core.tiling import crop, default_overlap, plan_tiles, tiled_prediction, tiled_vae_decode

logger = logging.getLogger(__name__)


def rotate_attention(record: AttentionRecord) -> AttentionRecord:
    for site, m in record.maps.items():
        if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
            raise StructureError(f"site {site}: cannot rotate non-square map {tuple(m.shape)}")
    return record.map(lambda m: torch.flip(m, dims=(-2, -1)))


def reverse_frames(x: torch.Tensor) -> torch.Tensor:
    """Flip the frame axis of a (batch, frames, ...) tensor."""
    if x.ndim < 2 or x.shape[1] < 1:
        raise ContractError(f"expected a (batch, frames, ...) tensor, got {tuple(x.shape)}")
    return torch.flip(x, dims=(1,))


def blend(p_b: torch.Tensor, p_f: torch.Tensor) -> torch.Tensor:
    """Mean of the re-reversed backward prediction and the forward prediction."""
    require_same_shape(p_b, p_f, "blend")
    return 0.5 * (p_b + p_f)


def upsample_clip(clip: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    if tuple(clip.shape[-2:]) == tuple(size):
        return clip
    batch = clip.shape[0]
    flat = rearrange(clip, "b f c h w -> (b f) c h w")
    up = F.interpolate(flat, size=size, mode="bicubic", align_corners=False).clamp(0.0, 1.0)
    return rearrange(up, "(b f) c h w -> b f c h w", b=batch)


def as_reference(bundle: ModelBundle, frame: Union[torch.Tensor, Reference]) -> Reference:
    if isinstance(frame, Reference):
        return frame
    return bundle.encode_reference(frame)


def model_prediction(
    bundle: ModelBundle,
    z_t: torch.Tensor,
    t: int,
    reference: Reference,
    clip: torch.Tensor,
    sched: NoiseSchedule,
    attention: Optional[AttentionControl] = None,
    role: str = "fwd",
    use_control: bool = True,
) -> torch.Tensor:
    """One ControlNet + denoiser evaluation; ``clip`` is the condition at target resolution."""
    batch, frames = z_t.shape[:2]
    if reference.latent.shape[-2:] != z_t.shape[-2:]:
        raise ContractError(
            f"reference latent {tuple(reference.latent.shape[-2:])} does not match latent {tuple(z_t.shape[-2:])}"
        )
    ref_latent = repeat(reference.latent, "b c h w -> b f c h w", f=frames)
    z_in = torch.cat([z_t, ref_latent], dim=2)
    timesteps = torch.full((batch,), sched.embed_value(t), dtype=z_t.dtype, device=z_t.device)
    residuals = bundle.controlnet(z_in, clip, timesteps, reference.embed, attention) if use_control else None
    return bundle.denoiser(z_in, timesteps, reference.embed, residuals, attention, role)


def forward_generation(
    z_t: torch.Tensor,
    t: int,
    h1: Union[torch.Tensor, Reference],
    clip: torch.Tensor,
    bundle: ModelBundle,
    sched: NoiseSchedule,
) -> Tuple[torch.Tensor, AttentionRecord]:
    if clip.shape[1] != z_t.shape[1]:
        raise ContractError(f"condition has {clip.shape[1]} frames, latent has {z_t.shape[1]}")
    control = AttentionControl.capture()
    p_f = model_prediction(bundle, z_t, t, as_reference(bundle, h1), clip, sched, control, "fwd")
    return p_f, control.captured


def backward_generation(
    z_t: torch.Tensor,
    t: int,
    hk: Union[torch.Tensor, Reference],
    clip: torch.Tensor,
    record: AttentionRecord,
    bundle: ModelBundle,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """Backward-role prediction, returned in reversed frame order."""
    control = AttentionControl.inject(rotate_attention(record))
    return model_prediction(
        bundle, reverse_frames(z_t), t, as_reference(bundle, hk), reverse_frames(clip), sched, control, "bwd"
    )


def bidirectional_prediction(z_t, t, ref_first, ref_last, clip, bundle, sched) -> torch.Tensor:
    p_f, record = forward_generation(z_t, t, ref_first, clip, bundle, sched)
    p_b = backward_generation(z_t, t, ref_last, clip, record, bundle, sched)
    return blend(reverse_frames(p_b), p_f)


@dataclass
class SampleResult:
    video: torch.Tensor
    latent: torch.Tensor
    steps: List[int] = field(default_factory=list)
    tiles: int = 1


def _crop_reference(reference: Reference, rect: Rect) -> Reference:
    return Reference(reference.embed, crop(reference.latent, rect))


def _tile_plan(opts: SamplerOptions, latent_h: int, latent_w: int, alignment: int) -> Optional[TilePlan]:
    if opts.tile_size <= 0 or opts.tile_size >= max(latent_h, latent_w):
        return None
    tile = opts.tile_size
    overlap = default_overlap(tile, alignment) if opts.tile_overlap is None else opts.tile_overlap
    for name, value in (("tile size", tile), ("tile overlap", overlap)):
        if value % alignment:
            raise ContractError(f"{name} {value} must be a multiple of the latent alignment {alignment}")
    return plan_tiles(latent_h, latent_w, tile, tile, overlap)


@torch.no_grad()
def sample_clip(
    lq_clip: torch.Tensor,
    h1: torch.Tensor,
    hk: Optional[torch.Tensor],
    bundle: ModelBundle,
    sched: NoiseSchedule,
    opts: SamplerOptions,
    workers: int = 1,
    decode: bool = True,
) -> SampleResult:
    """Super-resolve one clip. ``lq_clip`` is (B, k, 3, h, w); ``h1``/``hk`` are (B, 3, H, W)."""
    opts.validate()
    if opts.steps != sched.num_steps:
        raise ContractError(f"sampler steps={opts.steps} but schedule has {sched.num_steps} steps")
    if lq_clip.ndim != 5:
        raise ContractError(f"expected (batch, frames, 3, h, w) clip, got {tuple(lq_clip.shape)}")
    if h1.ndim == 3:
        h1 = h1[None]
    if hk is not None and hk.ndim == 3:
        hk = hk[None]
    height, width = h1.shape[-2:]
    cfg = bundle.config
    cfg.check_frame_size(height, width)
    if opts.bidirectional and hk is None:
        raise ContractError("bidirectional sampling needs the enhanced last frame")

    cond = upsample_clip(lq_clip, (height, width))
    ref_first = bundle.encode_reference(h1)
    ref_last = bundle.encode_reference(hk) if opts.bidirectional else None
    z_lq = bundle.vae_encode(cond)
    z, t_start = sdedit_start(z_lq, SdeditConfig(opts.sdedit_strength, opts.steps), sched, generator(opts.seed, "sdedit"))

    f = cfg.latent_downscale
    plan = _tile_plan(opts, z.shape[-2], z.shape[-1], cfg.latent_alignment)

    def predict(z_t: torch.Tensor, t: int, rect: Optional[Rect]) -> torch.Tensor:
        if rect is None:
            z_tile, c_tile, r1, rk = z_t, cond, ref_first, ref_last
        else:
            z_tile = crop(z_t, rect)
            c_tile = crop(cond, rect.scaled(f))
            r1 = _crop_reference(ref_first, rect)
            rk = _crop_reference(ref_last, rect) if ref_last is not None else None
        if opts.bidirectional:
            return bidirectional_prediction(z_tile, t, r1, rk, c_tile, bundle, sched)
        return forward_generation(z_tile, t, r1, c_tile, bundle, sched)[0]

    steps: List[int] = []
    schedule_points = sampling_steps(t_start)
    for t, t_next in zip(schedule_points[:-1], schedule_points[1:]):
        if plan is None:
            p_t = predict(z, t, None)
        else:
            p_t = tiled_prediction(z, lambda r, z=z, t=t: predict(z, t, r), plan, workers)
        z = denoise_step(z, p_t, t, t_next, sched)
        steps.append(t)

    tiles = len(plan.rects) if plan else 1
    if not decode:
        return SampleResult(video=z.new_zeros(0), latent=z, steps=steps, tiles=tiles)
    def decode_latent(latent: torch.Tensor) -> torch.Tensor:
        return bundle.vae_decode(latent, opts.use_vae_adapter)

    if plan is None:
        video = decode_latent(z)
    else:
        video = tiled_vae_decode(z, decode_latent, plan, f, opts.decode_feather, workers)
    logger.debug("Sampled clip: %d steps from t=%d, %d tile(s)", len(steps), t_start, tiles)
    return SampleResult(video=video.clamp(0.0, 1.0), latent=z, steps=steps, tiles=tiles)


def bidirectional_sample(lq_clip, h1, hk, bundle, sched, opts: SamplerOptions, workers: int = 1) -> torch.Tensor:
    return sample_clip(lq_clip, h1, hk, bundle, sched, opts, workers).video


def unidirectional_sample(lq_clip, h1, bundle, sched, opts: SamplerOptions, workers: int = 1) -> torch.Tensor:
    uni = SamplerOptions(**{**opts.__dict__, "bidirectional": False})
    return sample_clip(lq_clip, h1, None, bundle, sched, uni, workers).video
