from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from core.errors import ContractError, RangeError


@dataclass
class ModelConfig:
    frames: int = 14
    latent_channels: int = 4
    base_width: int = 32
    num_heads: int = 4
    latent_downscale: int = 4
    ref_embed_dim: int = 64
    resolutions: Tuple[int, ...] = (32, 64)
    adapter_rank: int = 4

    def validate(self) -> None:
        if self.frames < 2:
            raise ContractError(f"frames must be >= 2, got {self.frames}")
        if not self.resolutions:
            raise ContractError("resolutions must list at least one level width")
        for width in (self.base_width, *self.resolutions):
            if width < self.num_heads or width % self.num_heads:
                raise ContractError(f"width {width} must be a multiple of num_heads={self.num_heads}")
        f = self.latent_downscale
        if f < 1 or f & (f - 1):
            raise ContractError(f"latent_downscale must be a power of two, got {f}")
        if self.adapter_rank < 0:
            raise ContractError("adapter_rank must be >= 0")

    @property
    def levels(self) -> int:
        return len(self.resolutions)

    @property
    def latent_alignment(self) -> int:
        # every UNet level halves the latent grid once except the last
        return 2 ** (self.levels - 1)

    @property
    def pixel_alignment(self) -> int:
        return self.latent_downscale * self.latent_alignment

    def check_frame_size(self, height: int, width: int) -> None:
        a = self.pixel_alignment
        if height % a or width % a:
            raise ContractError(f"frame size {height}x{width} must be divisible by {a} (VAE factor x UNet levels)")


@dataclass
class SdeditConfig:
    strength: float = 0.6
    total_steps: int = 30

    def validate(self) -> None:
        if not 0.0 < self.strength <= 1.0:
            raise RangeError(f"sdedit strength must be in (0, 1], got {self.strength}")
        if self.total_steps < 1:
            raise RangeError(f"total_steps must be >= 1, got {self.total_steps}")

    @property
    def remaining_steps(self) -> int:
        # round half up: 30 x 0.6 -> 18, 10 x 0.5 -> 5
        steps = int(self.strength * self.total_steps + 0.5 + 1e-9)
        return min(max(steps, 1), self.total_steps)


@dataclass
class SamplerOptions:
    steps: int = 30
    sdedit_strength: float = 0.6
    bidirectional: bool = True
    tile_size: int = 0
    tile_overlap: Optional[int] = None
    decode_feather: Optional[int] = None
    use_vae_adapter: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 1:
            raise RangeError(f"steps must be >= 1, got {self.steps}")
        SdeditConfig(self.sdedit_strength, self.steps).validate()


@dataclass
class ClipPlan:
    n: int
    k: int
    clips: List[Tuple[int, int]]
    pad_count: int = 0

    @property
    def m(self) -> int:
        return len(self.clips)

    @property
    def padded_length(self) -> int:
        return self.n + self.pad_count

    def boundaries(self) -> List[int]:
        seen: List[int] = []
        for start, end in self.clips:
            for idx in (start, end):
                if idx not in seen:
                    seen.append(idx)
        return seen


@dataclass(frozen=True)
class Rect:
    top: int
    left: int
    height: int
    width: int

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def right(self) -> int:
        return self.left + self.width

    def scaled(self, factor: int) -> "Rect":
        return Rect(self.top * factor, self.left * factor, self.height * factor, self.width * factor)


@dataclass
class TilePlan:
    height: int
    width: int
    tile_h: int
    tile_w: int
    overlap: int
    rects: List[Rect]

    @property
    def is_single(self) -> bool:
        return len(self.rects) == 1

    def scaled(self, factor: int) -> "TilePlan":
        return TilePlan(
            height=self.height * factor,
            width=self.width * factor,
            tile_h=self.tile_h * factor,
            tile_w=self.tile_w * factor,
            overlap=self.overlap * factor,
            rects=[r.scaled(factor) for r in self.rects],
        )


@dataclass
class DegradationConfig:
    blur_sigma_range: Tuple[float, float] = (0.2, 1.5)
    downscale_factor: int = 4
    noise_sigma_range: Tuple[float, float] = (0.0, 10.0)
    quant_levels: Optional[int] = None
    seed: int = 0

    def validate(self) -> None:
        for name, (lo, hi) in (("blur_sigma_range", self.blur_sigma_range), ("noise_sigma_range", self.noise_sigma_range)):
            if lo > hi or lo < 0:
                raise RangeError(f"{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
        if self.downscale_factor < 1:
            raise RangeError(f"downscale_factor must be >= 1, got {self.downscale_factor}")
        if self.quant_levels is not None and self.quant_levels < 2:
            raise RangeError(f"quant_levels must be >= 2, got {self.quant_levels}")


@dataclass
class MotionSpec:
    kind: str = "random"  # static | translate | random
    camera_velocity: Tuple[float, float] = (0.0, 0.0)
    object_velocity: Tuple[float, float] = (0.0, 0.0)
    max_speed: float = 2.0


STAGES = ("vae", "base", "sr", "1", "2", "3")


@dataclass
class StageConfig:
    stage: str = "1"
    iterations: int = 200
    learning_rate: float = 8e-5
    batch_size: int = 2
    perceptual_weight: float = 1.0
    gan_weight: float = 0.025
    sample_steps: int = 8
    train_timesteps: int = 1000
    reference_source: str = "gt"  # gt | lq
    disc_lr_multiplier: float = 2.0
    collapse_window: int = 50
    collapse_epsilon: float = 0.02
    log_every: int = 25
    seed: int = 0

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise RangeError(f"unknown stage {self.stage!r}; expected one of {', '.join(STAGES)}")
        if self.iterations < 0 or self.batch_size < 1:
            raise RangeError("iterations must be >= 0 and batch_size >= 1")
        if self.reference_source not in {"gt", "lq"}:
            raise RangeError(f"reference_source must be gt or lq, got {self.reference_source!r}")


@dataclass
class VideoMetrics:
    clip_id: str
    psnr: float
    ssim: float
    e_warp: Optional[float] = None
    extra: Dict[str, float] = field(default_factory=dict)


@dataclass
class MetricReport:
    videos: List[VideoMetrics]
    metadata: Dict[str, str] = field(default_factory=dict)

    def aggregate(self) -> Dict[str, Optional[float]]:
        out: Dict[str, Optional[float]] = {}
        if not self.videos:
            return out
        out["psnr"] = sum(v.psnr for v in self.videos) / len(self.videos)
        out["ssim"] = sum(v.ssim for v in self.videos) / len(self.videos)
        warps = [v.e_warp for v in self.videos if v.e_warp is not None]
        out["e_warp"] = sum(warps) / len(warps) if warps else None
        for key in sorted({k for v in self.videos for k in v.extra}):
            vals = [v.extra[key] for v in self.videos if key in v.extra]
            out[key] = sum(vals) / len(vals)
        return out
