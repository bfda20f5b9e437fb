"""Procedural toy videos with exact optical flow, and the LQ degradation chain.

A toy video is a sum of coloured sinusoid gratings seen through a panning
camera, with a textured rectangle moving on top. Flow is stored per frame
pair as ``(2, H, W)`` (channel 0 = dx, channel 1 = dy, pixels) in the
coordinates of the later frame: ``frame[t+1](p) == frame[t](p - flow[t](p))``.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn.functional as F

from core.errors import ContractError, RangeError
from core.models import DegradationConfig, MotionSpec
from core.rng import generator

logger = logging.getLogger(__name__)


@dataclass
class ToyVideo:
    video_id: str
    frames: torch.Tensor  # (k, 3, H, W)
    flows: torch.Tensor  # (k - 1, 2, H, W)


@dataclass
class TrainingPair:
    gt: torch.Tensor  # (k, 3, H, W)
    lq: torch.Tensor  # (k, 3, H / factor, W / factor)


def _uniform(gen: torch.Generator, lo: float, hi: float, shape=()) -> torch.Tensor:
    return lo + (hi - lo) * torch.rand(shape, generator=gen, dtype=torch.float64)


class _Texture:
    """Sum of a few oriented gratings, evaluated at arbitrary (x, y)."""

    def __init__(self, gen: torch.Generator, waves: int = 3):
        self.freq = _uniform(gen, 0.15, 0.9, (waves,))
        self.angle = _uniform(gen, 0.0, math.pi, (waves,))
        self.phase = _uniform(gen, 0.0, 2 * math.pi, (waves,))
        self.colour = _uniform(gen, 0.1, 0.9, (waves, 3))
        self.base = _uniform(gen, 0.25, 0.75, (3,))

    def __call__(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        out = self.base[:, None, None].expand(3, *x.shape).clone()
        for i in range(len(self.freq)):
            u = x * torch.cos(self.angle[i]) + y * torch.sin(self.angle[i])
            wave = torch.sin(self.freq[i] * u + self.phase[i])
            out = out + 0.5 / len(self.freq) * wave[None] * (self.colour[i][:, None, None] - 0.5)
        return out.clamp(0.0, 1.0)


def _velocity(spec: MotionSpec, gen: torch.Generator, which: str) -> Tuple[float, float]:
    if spec.kind == "static":
        return 0.0, 0.0
    if spec.kind == "translate":
        return spec.camera_velocity if which == "camera" else spec.object_velocity
    if spec.kind == "random":
        v = _uniform(gen, -spec.max_speed, spec.max_speed, (2,))
        return float(v[0]), float(v[1])
    raise RangeError(f"unknown motion kind {spec.kind!r}; expected static, translate or random")


def render_toy_video(k: int, size: int, spec: MotionSpec, gen: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    background = _Texture(gen)
    sprite = _Texture(gen)
    cam = _velocity(spec, gen, "camera")
    obj = _velocity(spec, gen, "object")
    box = int(size // 3)
    top = int(_uniform(gen, 0, size - box))
    left = int(_uniform(gen, 0, size - box))

    ys, xs = torch.meshgrid(
        torch.arange(size, dtype=torch.float64), torch.arange(size, dtype=torch.float64), indexing="ij"
    )
    frames, flows = [], []
    for t in range(k):
        bg = background(xs - t * cam[0], ys - t * cam[1])
        ox, oy = xs - left - t * obj[0], ys - top - t * obj[1]
        inside = (ox >= 0) & (ox < box) & (oy >= 0) & (oy < box)
        frame = torch.where(inside[None], sprite(ox, oy), bg)
        frames.append(frame)
        if t > 0:
            flow = torch.empty(2, size, size, dtype=torch.float64)
            flow[0] = torch.where(inside, torch.tensor(obj[0], dtype=torch.float64), torch.tensor(cam[0], dtype=torch.float64))
            flow[1] = torch.where(inside, torch.tensor(obj[1], dtype=torch.float64), torch.tensor(cam[1], dtype=torch.float64))
            flows.append(flow)
    video = torch.stack(frames).float()
    flow_field = torch.stack(flows).float() if flows else torch.zeros(0, 2, size, size)
    return video, flow_field


def synthesize_toy_videos(
    count: int,
    k: int,
    size: int,
    motion: Optional[MotionSpec] = None,
    seed: int = 0,
    alignment: int = 1,
) -> List[ToyVideo]:
    if count < 1 or k < 1:
        raise RangeError(f"count and k must be >= 1, got count={count}, k={k}")
    if size < 4 or size % alignment:
        raise ContractError(f"frame size {size} must be >= 4 and divisible by {alignment}")
    motion = motion or MotionSpec()
    videos = []
    for idx in range(count):
        frames, flows = render_toy_video(k, size, motion, generator(seed, "toy-video", idx))
        videos.append(ToyVideo(f"{idx + 1:06d}", frames, flows))
    logger.info("Synthesized %d toy videos (%d frames, %dx%d, motion=%s)", count, k, size, size, motion.kind)
    return videos


def gaussian_kernel(sigma: float, dtype=torch.float32) -> torch.Tensor:
    radius = max(1, int(math.ceil(3 * sigma)))
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    kernel = torch.exp(-0.5 * (x / sigma) ** 2)
    return (kernel / kernel.sum()).to(dtype)


def gaussian_blur(frames: torch.Tensor, sigma: float) -> torch.Tensor:
    kernel = gaussian_kernel(sigma, frames.dtype).to(frames.device)
    radius = kernel.numel() // 2
    channels = frames.shape[1]
    kx = kernel.view(1, 1, 1, -1).expand(channels, 1, 1, -1)
    ky = kernel.view(1, 1, -1, 1).expand(channels, 1, -1, 1)
    out = F.conv2d(F.pad(frames, (radius, radius, 0, 0), mode="reflect"), kx, groups=channels)
    return F.conv2d(F.pad(out, (0, 0, radius, radius), mode="reflect"), ky, groups=channels)


def degrade(hq: torch.Tensor, cfg: DegradationConfig, rng: torch.Generator) -> torch.Tensor:
    """blur -> downsample -> noise -> quantise; one parameter draw per clip."""
    cfg.validate()
    if hq.ndim != 4:
        raise ContractError(f"expected (frames, 3, H, W) clip, got {tuple(hq.shape)}")
    blur_sigma = float(_uniform(rng, *cfg.blur_sigma_range))
    noise_sigma = float(_uniform(rng, *cfg.noise_sigma_range)) / 255.0

    out = hq
    if blur_sigma > 0:
        out = gaussian_blur(out, blur_sigma)
    if cfg.downscale_factor > 1:
        out = F.avg_pool2d(out, cfg.downscale_factor)
    if noise_sigma > 0:
        noise = torch.randn(out.shape, generator=rng, dtype=out.dtype)
        out = (out + noise_sigma * noise).clamp(0.0, 1.0)
    if cfg.quant_levels is not None:
        levels = cfg.quant_levels - 1
        out = torch.round(out * levels) / levels
    return out


def make_training_pairs(videos: List[ToyVideo], cfg: DegradationConfig) -> List[TrainingPair]:
    return [TrainingPair(v.frames, degrade(v.frames, cfg, generator(cfg.seed, "degrade", i))) for i, v in enumerate(videos)]
