"""Reference image enhancers: the single-image SR step that produces keyframes."""
import logging
from abc import ABC, abstractmethod
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from core.errors import ContractError, EnhancerError, VsrError

logger = logging.getLogger(__name__)


def bicubic(frames: torch.Tensor, scale: int) -> torch.Tensor:
    if scale == 1:
        return frames
    return F.interpolate(frames, scale_factor=scale, mode="bicubic", align_corners=False).clamp(0.0, 1.0)


class ReferenceEnhancer(ABC):
    """Upscales one low-quality frame by ``target_scale``.

    ``enhance`` takes ``(3, h, w)`` or ``(N, 3, h, w)`` in [0, 1] and returns the
    same layout at ``h * target_scale`` by ``w * target_scale``. ``index`` is the
    0-based frame position in the video, used by enhancers that look frames up.
    """

    name = "base"

    def __init__(self, target_scale: int):
        if target_scale < 1:
            raise ContractError(f"target_scale must be >= 1, got {target_scale}")
        self.target_scale = target_scale

    @abstractmethod
    def _enhance(self, frames: torch.Tensor, index: Optional[int]) -> torch.Tensor:
        ...

    def enhance(self, frame: torch.Tensor, index: Optional[int] = None) -> torch.Tensor:
        single = frame.ndim == 3
        frames = frame[None] if single else frame
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ContractError(f"enhancer '{self.name}' expects RGB frames, got {tuple(frame.shape)}")
        try:
            out = self._enhance(frames, index)
        except EnhancerError:
            raise
        except (VsrError, RuntimeError, OSError) as exc:
            raise EnhancerError(self.name, str(exc)) from exc
        expected = (frames.shape[-2] * self.target_scale, frames.shape[-1] * self.target_scale)
        if tuple(out.shape[-2:]) != expected or out.shape[:2] != frames.shape[:2]:
            raise EnhancerError(self.name, f"returned {tuple(out.shape)}, expected spatial size {expected}")
        return out[0] if single else out


class IdentityUpscaler(ReferenceEnhancer):
    """Plain bicubic resize; no appearance enhancement."""

    name = "identity"

    def _enhance(self, frames, index):
        return bicubic(frames, self.target_scale)


class OracleEnhancer(ReferenceEnhancer):
    """Returns stored ground-truth frames by index. Indices past the end map to the last frame."""

    name = "oracle"

    def __init__(self, gt_frames: torch.Tensor, target_scale: int):
        super().__init__(target_scale)
        if gt_frames.ndim != 4:
            raise ContractError(f"oracle needs (frames, 3, H, W) ground truth, got {tuple(gt_frames.shape)}")
        self.gt_frames = gt_frames

    def _enhance(self, frames, index):
        if index is None:
            raise EnhancerError(self.name, "oracle lookups need a frame index")
        index = min(int(index), self.gt_frames.shape[0] - 1)
        return self.gt_frames[index][None].expand(frames.shape[0], -1, -1, -1).to(frames.dtype)


class TinySRNet(nn.Module):
    """Residual conv refiner on top of a bicubic upsample; starts as exact bicubic."""

    def __init__(self, width: int = 32, depth: int = 4):
        super().__init__()
        layers = [nn.Conv2d(3, width, 3, padding=1), nn.SiLU()]
        for _ in range(depth - 2):
            layers += [nn.Conv2d(width, width, 3, padding=1), nn.SiLU()]
        tail = nn.Conv2d(width, 3, 3, padding=1)
        nn.init.zeros_(tail.weight)
        nn.init.zeros_(tail.bias)
        layers.append(tail)
        self.body = nn.Sequential(*layers)

    def forward(self, lq: torch.Tensor, scale: int) -> torch.Tensor:
        up = bicubic(lq, scale)
        return up + self.body(up)


class NetEnhancer(ReferenceEnhancer):
    name = "net"

    def __init__(self, net: TinySRNet, target_scale: int):
        super().__init__(target_scale)
        self.net = net

    @torch.no_grad()
    def _enhance(self, frames, index):
        return self.net(frames, self.target_scale).clamp(0.0, 1.0)


def enhance_video(video: torch.Tensor, enhancer: ReferenceEnhancer) -> torch.Tensor:
    """Enhance every frame on its own (the frame-by-frame ablation)."""
    if video.ndim != 4:
        raise ContractError(f"expected (frames, 3, h, w) video, got {tuple(video.shape)}")
    return torch.stack([enhancer.enhance(video[i], index=i) for i in range(video.shape[0])])

