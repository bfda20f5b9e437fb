"""Miniature image-to-video denoiser, video ControlNet, reference encoder and VAE.

Layout conventions: videos and latents are ``(batch, frames, channels, H, W)``;
inside the networks frames are folded into the batch axis so every layer
except :class:`TemporalAttention` acts on one frame at a time. There are no
temporal convolutions; temporal attention is the only cross-frame path.
"""
import logging
import math
from typing import Dict, List, NamedTuple, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange, repeat

from core.attention import AttentionControl, SiteGeometry
from core.enhancer import TinySRNet
from core.errors import ContractError
from core.losses import PatchDiscriminator
from core.models import ModelConfig
from core.rng import seeded

logger = logging.getLogger(__name__)

ROLES = ("fwd", "bwd")
REFERENCE_GRID = 2


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


def conv3(n_in: int, n_out: int, **kwargs) -> nn.Conv2d:
    return nn.Conv2d(n_in, n_out, 3, padding=1, **kwargs)


def sinusoidal(values: torch.Tensor, dim: int, scale: float = 1000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=values.device) / max(half, 1))
    args = values.to(torch.float64)[:, None] * scale * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb.to(values.dtype if values.is_floating_point() else torch.float32)


def frame_positions(frames: int, dim: int, dtype: torch.dtype, device) -> torch.Tensor:
    idx = torch.arange(frames, device=device, dtype=torch.float64)
    return sinusoidal(idx, dim, scale=1.0).to(dtype)


class TimestepEmbedding(nn.Module):
    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, out_dim), nn.SiLU(), nn.Linear(out_dim, out_dim))

    def forward(self, values: torch.Tensor) -> torch.Tensor:
        return self.mlp(sinusoidal(values, self.dim))


class ResBlock(nn.Module):
    def __init__(self, n_in: int, n_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(n_in), n_in)
        self.conv1 = conv3(n_in, n_out)
        self.temb = nn.Linear(temb_dim, n_out)
        self.norm2 = nn.GroupNorm(_groups(n_out), n_out)
        self.conv2 = conv3(n_out, n_out)
        self.skip = nn.Conv2d(n_in, n_out, 1, bias=False) if n_in != n_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class TemporalAttention(nn.Module):
    """Self-attention across the frame axis at every spatial location.

    Queries and keys see a frame-position encoding; values do not, so values
    stay a per-frame function of the features. The value and output
    projections exist once per role (``fwd``/``bwd``) in the denoiser and once
    in the ControlNet.
    """

    def __init__(self, channels: int, heads: int, level: int, dual_role: bool = True):
        super().__init__()
        self.heads = heads
        self.level = level
        self.site = "temporal"
        self.norm = nn.LayerNorm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(channels, channels, bias=False)
        roles = ROLES if dual_role else ROLES[:1]
        self.to_v = nn.ModuleDict({r: nn.Linear(channels, channels, bias=False) for r in roles})
        self.to_out = nn.ModuleDict({r: nn.Linear(channels, channels) for r in roles})

    def forward(
        self,
        x: torch.Tensor,
        frames: int,
        attention: Optional[AttentionControl] = None,
        role: str = "fwd",
    ) -> torch.Tensor:
        bf, channels, height, width = x.shape
        batch = bf // frames
        tokens = rearrange(x, "(b f) c h w -> (b h w) f c", f=frames)
        normed = self.norm(tokens)
        geometry: SiteGeometry = (batch, self.heads, height, width, frames)

        if attention is not None and attention.injecting:
            probs = attention.lookup(self.site, geometry, tokens.dtype)
        else:
            pos = frame_positions(frames, channels, tokens.dtype, tokens.device)
            q = rearrange(self.to_q(normed + pos), "n f (h d) -> n h f d", h=self.heads)
            k = rearrange(self.to_k(normed + pos), "n f (h d) -> n h f d", h=self.heads)
            scores = torch.einsum("nhid,nhjd->nhij", q, k) / math.sqrt(q.shape[-1])
            probs = scores.softmax(dim=-1)
            if attention is not None:
                attention.store(self.site, geometry, probs)

        v = rearrange(self.to_v[role](normed), "n f (h d) -> n h f d", h=self.heads)
        out = torch.einsum("nhij,nhjd->nhid", probs, v)
        out = rearrange(out, "n h f d -> n f (h d)")
        tokens = tokens + self.to_out[role](out)
        return rearrange(tokens, "(b h w) f c -> (b f) c h w", b=batch, h=height, w=width)


class ReferenceAttention(nn.Module):
    """Cross-attention from spatial tokens to the reference embedding tokens."""

    def __init__(self, channels: int, ref_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(ref_dim, channels, bias=False)
        self.to_v = nn.Linear(ref_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        _, _, height, width = x.shape
        tokens = rearrange(x, "n c h w -> n (h w) c")
        q = rearrange(self.to_q(self.norm(tokens)), "n t (h d) -> n h t d", h=self.heads)
        k = rearrange(self.to_k(context), "n s (h d) -> n h s d", h=self.heads)
        v = rearrange(self.to_v(context), "n s (h d) -> n h s d", h=self.heads)
        probs = (torch.einsum("nhtd,nhsd->nhts", q, k) / math.sqrt(q.shape[-1])).softmax(dim=-1)
        out = rearrange(torch.einsum("nhts,nhsd->nhtd", probs, v), "n h t d -> n t (h d)")
        tokens = tokens + self.to_out(out)
        return rearrange(tokens, "n (h w) c -> n c h w", h=height, w=width)


class LevelBlock(nn.Module):
    def __init__(self, n_in: int, n_out: int, cfg: ModelConfig, temb_dim: int, level: int, dual_role: bool):
        super().__init__()
        self.res = ResBlock(n_in, n_out, temb_dim)
        self.temporal = TemporalAttention(n_out, cfg.num_heads, level, dual_role)
        self.reference = ReferenceAttention(n_out, cfg.ref_embed_dim, cfg.num_heads)

    def forward(self, x, temb, context, frames, attention, role):
        x = self.res(x, temb)
        x = self.temporal(x, frames, attention, role)
        return self.reference(x, context)


class VideoEncoder(nn.Module):
    """The down path shared in structure by the denoiser and the ControlNet."""

    def __init__(self, cfg: ModelConfig, dual_role: bool):
        super().__init__()
        temb_dim = 4 * cfg.base_width
        self.time_embed = TimestepEmbedding(cfg.base_width, temb_dim)
        self.conv_in = conv3(2 * cfg.latent_channels, cfg.base_width)
        self.levels = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = cfg.base_width
        for level, width in enumerate(cfg.resolutions):
            self.levels.append(LevelBlock(prev, width, cfg, temb_dim, level, dual_role))
            if level != cfg.levels - 1:
                self.downs.append(nn.Conv2d(width, width, 3, stride=2, padding=1))
            prev = width
        self.mid = LevelBlock(prev, prev, cfg, temb_dim, cfg.levels - 1, dual_role)

    def forward(
        self,
        x: torch.Tensor,
        timesteps: torch.Tensor,
        ref_embed: torch.Tensor,
        frames: int,
        attention: Optional[AttentionControl],
        role: str,
        extra: Optional[torch.Tensor] = None,
    ):
        temb = repeat(self.time_embed(timesteps), "b d -> (b f) d", f=frames)
        if ref_embed.ndim == 2:
            ref_embed = ref_embed[:, None]
        context = repeat(ref_embed, "b s d -> (b f) s d", f=frames)
        h = self.conv_in(x)
        if extra is not None:
            h = h + extra
        skips: List[torch.Tensor] = []
        for level, block in enumerate(self.levels):
            h = block(h, temb, context, frames, attention, role)
            skips.append(h)
            if level < len(self.downs):
                h = self.downs[level](h)
        h = self.mid(h, temb, context, frames, attention, role)
        return h, skips, temb, context


def _name_sites(module: nn.Module, prefix: str) -> None:
    for name, child in module.named_modules():
        if isinstance(child, TemporalAttention):
            child.site = f"{prefix}.{name}"


def _check_latent_input(z_in: torch.Tensor, cfg: ModelConfig) -> Tuple[int, int]:
    if z_in.ndim != 5:
        raise ContractError(f"expected (batch, frames, channels, h, w) input, got {tuple(z_in.shape)}")
    batch, frames, channels, height, width = z_in.shape
    if channels != 2 * cfg.latent_channels:
        raise ContractError(f"denoiser input needs {2 * cfg.latent_channels} channels (noise + reference latent), got {channels}")
    a = cfg.latent_alignment
    if height % a or width % a:
        raise ContractError(f"latent size {height}x{width} must be divisible by {a}")
    return batch, frames


class VideoDenoiser(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.encoder = VideoEncoder(cfg, dual_role=True)
        temb_dim = 4 * cfg.base_width
        self.ups = nn.ModuleList()
        self.decoder_levels = nn.ModuleList()
        prev = cfg.resolutions[-1]
        for idx, level in enumerate(reversed(range(cfg.levels))):
            width = cfg.resolutions[level]
            if idx > 0:
                self.ups.append(nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), conv3(prev, prev)))
            self.decoder_levels.append(LevelBlock(prev + width, width, cfg, temb_dim, level, dual_role=True))
            prev = width
        self.norm_out = nn.GroupNorm(_groups(prev), prev)
        self.conv_out = conv3(prev, cfg.latent_channels)
        _name_sites(self, "unet")

    def forward(
        self,
        z_in: torch.Tensor,
        timesteps: torch.Tensor,
        ref_embed: torch.Tensor,
        control_residuals: Optional[List[torch.Tensor]] = None,
        attention: Optional[AttentionControl] = None,
        role: str = "fwd",
    ) -> torch.Tensor:
        batch, frames = _check_latent_input(z_in, self.config)
        x = rearrange(z_in, "b f c h w -> (b f) c h w")
        h, skips, temb, context = self.encoder(x, timesteps, ref_embed, frames, attention, role)

        if control_residuals is not None:
            expected = [tuple(s.shape) for s in skips] + [tuple(h.shape)]
            got = [tuple(r.shape) for r in control_residuals]
            if got != expected:
                raise ContractError(f"control residual shapes {got} do not match skip shapes {expected}")
            skips = [s + r for s, r in zip(skips, control_residuals)]
            h = h + control_residuals[-1]

        for idx, level in enumerate(reversed(range(len(skips)))):
            if idx > 0:
                h = self.ups[idx - 1](h)
            h = torch.cat([h, skips[level]], dim=1)
            h = self.decoder_levels[idx](h, temb, context, frames, attention, role)

        out = self.conv_out(F.silu(self.norm_out(h)))
        if attention is not None:
            attention.finish("unet")
        return rearrange(out, "(b f) c h w -> b f c h w", b=batch)

    def temporal_sites(self) -> List[TemporalAttention]:
        return [m for m in self.modules() if isinstance(m, TemporalAttention)]

    @torch.no_grad()
    def sync_backward_from_forward(self) -> None:
        for site in self.temporal_sites():
            site.to_v["bwd"].load_state_dict(site.to_v["fwd"].state_dict())
            site.to_out["bwd"].load_state_dict(site.to_out["fwd"].state_dict())

    def role_state_dict(self, role: str) -> Dict[str, torch.Tensor]:
        """Effective parameters of one role, with role tags dropped from the names."""
        other = [r for r in ROLES if r != role]
        out: Dict[str, torch.Tensor] = {}
        for name, param in self.named_parameters():
            if any(f".{r}." in name for r in other):
                continue
            out[name.replace(f".{role}.", ".")] = param
        return out


def zero_conv(channels: int) -> nn.Conv2d:
    conv = nn.Conv2d(channels, channels, 1)
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    return conv


class VideoEmbedding(nn.Module):
    """Per-frame encoder of the (upsampled) low-quality clip down to the latent grid."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        width = cfg.base_width
        layers: List[nn.Module] = [conv3(3, width), nn.SiLU()]
        for _ in range(int(math.log2(cfg.latent_downscale))):
            layers += [nn.Conv2d(width, width, 3, stride=2, padding=1), nn.SiLU()]
        layers.append(conv3(width, width))
        self.net = nn.Sequential(*layers)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.net(frames)


class VideoControlNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.encoder = VideoEncoder(cfg, dual_role=False)
        self.video_embed = VideoEmbedding(cfg)
        widths = list(cfg.resolutions) + [cfg.resolutions[-1]]
        self.zero_convs = nn.ModuleList([zero_conv(w) for w in widths])
        _name_sites(self, "control")

    @classmethod
    def from_denoiser(cls, denoiser: VideoDenoiser) -> "VideoControlNet":
        net = cls(denoiser.config)
        net.clone_encoder(denoiser)
        return net

    @torch.no_grad()
    def clone_encoder(self, denoiser: VideoDenoiser) -> None:
        source = {k: v for k, v in denoiser.encoder.state_dict().items() if ".bwd." not in k}
        self.encoder.load_state_dict(source)
        for conv in self.zero_convs:
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    def forward(
        self,
        z_in: torch.Tensor,
        cond_frames: torch.Tensor,
        timesteps: torch.Tensor,
        ref_embed: torch.Tensor,
        attention: Optional[AttentionControl] = None,
    ) -> List[torch.Tensor]:
        batch, frames = _check_latent_input(z_in, self.config)
        if cond_frames.ndim != 5 or cond_frames.shape[:2] != z_in.shape[:2]:
            raise ContractError(
                f"condition clip {tuple(cond_frames.shape)} must have batch/frames {tuple(z_in.shape[:2])}"
            )
        f = self.config.latent_downscale
        if (cond_frames.shape[-2], cond_frames.shape[-1]) != (z_in.shape[-2] * f, z_in.shape[-1] * f):
            raise ContractError(f"condition frames {tuple(cond_frames.shape[-2:])} do not match latent grid x{f}")
        x = rearrange(z_in, "b f c h w -> (b f) c h w")
        extra = self.video_embed(rearrange(cond_frames, "b f c h w -> (b f) c h w"))
        h, skips, _, _ = self.encoder(x, timesteps, ref_embed, frames, attention, "fwd", extra=extra)
        residuals = [conv(s) for conv, s in zip(self.zero_convs, skips + [h])]
        if attention is not None:
            attention.finish("control")
        return residuals


class ReferenceEncoder(nn.Module):
    """Small conv encoder producing the reference conditioning tokens.

    One global token (mean and max pooled) followed by a ``grid x grid`` set of
    region tokens, so cross-attention weights depend on the query location.
    """

    def __init__(self, cfg: ModelConfig, grid: int = REFERENCE_GRID):
        super().__init__()
        width = cfg.base_width
        self.grid = grid
        self.net = nn.Sequential(
            conv3(3, width), nn.SiLU(),
            nn.Conv2d(width, width, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(width, width, 3, stride=2, padding=1), nn.SiLU(),
            conv3(width, width), nn.SiLU(),
        )
        self.proj = nn.Linear(2 * width, cfg.ref_embed_dim)
        self.region_proj = nn.Linear(width, cfg.ref_embed_dim)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        h = self.net(image)
        pooled = torch.cat([h.mean(dim=(-2, -1)), h.amax(dim=(-2, -1))], dim=-1)
        regions = rearrange(F.adaptive_avg_pool2d(h, self.grid), "b c h w -> b (h w) c")
        return torch.cat([self.proj(pooled)[:, None], self.region_proj(regions)], dim=1)


class LowRankConv2d(nn.Module):
    """3x3 conv with an optional low-rank residual adapter (up projection zero-initialised)."""

    def __init__(self, n_in: int, n_out: int, rank: int):
        super().__init__()
        self.base = conv3(n_in, n_out, padding_mode="replicate")
        self.rank = rank
        if rank > 0:
            self.down = nn.Conv2d(n_in, rank, 3, padding=1, padding_mode="replicate", bias=False)
            self.up = nn.Conv2d(rank, n_out, 1, bias=False)
            nn.init.zeros_(self.up.weight)

    def forward(self, x: torch.Tensor, adapter_on: bool = True) -> torch.Tensor:
        out = self.base(x)
        if adapter_on and self.rank > 0:
            out = out + self.up(self.down(x))
        return out


class Clamp(nn.Module):
    def forward(self, x):
        return torch.tanh(x / 3) * 3


class VideoVae(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.factor = cfg.latent_downscale
        width = cfg.base_width
        n_scale = int(math.log2(cfg.latent_downscale))
        enc: List[nn.Module] = [conv3(3, width, padding_mode="replicate"), nn.SiLU()]
        for _ in range(n_scale):
            enc += [nn.Conv2d(width, width, 3, stride=2, padding=1, padding_mode="replicate"), nn.SiLU()]
        enc += [conv3(width, cfg.latent_channels, padding_mode="replicate"), Clamp()]
        self.encoder = nn.Sequential(*enc)

        rank = cfg.adapter_rank
        self.decoder = nn.ModuleList([LowRankConv2d(cfg.latent_channels, width, rank)])
        for _ in range(n_scale):
            self.decoder.append(LowRankConv2d(width, width, rank))
        self.decoder.append(LowRankConv2d(width, 3, rank))

    def encode_frames(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ContractError(f"expected (N, 3, H, W) frames, got {tuple(x.shape)}")
        if x.shape[-2] % self.factor or x.shape[-1] % self.factor:
            raise ContractError(f"frame size {tuple(x.shape[-2:])} is not divisible by VAE factor {self.factor}")
        return self.encoder(x)

    def decode_frames(self, z: torch.Tensor, adapter_on: bool = True) -> torch.Tensor:
        h = z
        last = len(self.decoder) - 1
        for idx, layer in enumerate(self.decoder):
            if 0 < idx < last:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = layer(h, adapter_on)
            if idx < last:
                h = F.silu(h)
        return h

    def encode(self, video: torch.Tensor) -> torch.Tensor:
        batch = video.shape[0]
        z = self.encode_frames(rearrange(video, "b f c h w -> (b f) c h w"))
        return rearrange(z, "(b f) c h w -> b f c h w", b=batch)

    def decode(self, z: torch.Tensor, adapter_on: bool = True) -> torch.Tensor:
        batch = z.shape[0]
        x = self.decode_frames(rearrange(z, "b f c h w -> (b f) c h w"), adapter_on)
        return rearrange(x, "(b f) c h w -> b f c h w", b=batch)

    def adapter_parameters(self) -> List[nn.Parameter]:
        return [p for name, p in self.named_parameters() if ".down." in name or ".up." in name]


class Reference(NamedTuple):
    embed: torch.Tensor
    latent: torch.Tensor


class ModelBundle(nn.Module):
    """Every network the pipeline needs, checkpointed together."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.config = cfg
        self.denoiser = VideoDenoiser(cfg)
        self.controlnet = VideoControlNet.from_denoiser(self.denoiser)
        self.vae = VideoVae(cfg)
        self.reference_encoder = ReferenceEncoder(cfg)
        self.discriminator = PatchDiscriminator(cfg.base_width)
        self.sr_net = TinySRNet(cfg.base_width)
        self.denoiser.sync_backward_from_forward()

    @classmethod
    def build(cls, cfg: ModelConfig, seed: int = 0) -> "ModelBundle":
        with seeded(seed, "model-init"):
            bundle = cls(cfg)
        logger.info("Built model bundle: %d parameters", sum(p.numel() for p in bundle.parameters()))
        return bundle

    def encode_reference(self, image: torch.Tensor) -> Reference:
        if image.ndim == 3:
            image = image[None]
        f = self.config.latent_downscale
        if image.shape[-2] % f or image.shape[-1] % f:
            raise ContractError(f"reference image {tuple(image.shape[-2:])} is not divisible by VAE factor {f}")
        return Reference(self.reference_encoder(image), self.vae.encode_frames(image))

    def vae_encode(self, video: torch.Tensor) -> torch.Tensor:
        return self.vae.encode(video)

    def vae_decode(self, z: torch.Tensor, adapter_on: bool = True) -> torch.Tensor:
        return self.vae.decode(z, adapter_on)

    def reclone_controlnet(self) -> None:
        self.controlnet.clone_encoder(self.denoiser)


def attention_site_manifest(bundle: ModelBundle, batch: int, frames: int, latent_h: int, latent_w: int) -> Dict[str, SiteGeometry]:
    """Site -> geometry for a pass over a latent of the given size, computed from the config."""
    out: Dict[str, SiteGeometry] = {}
    for net in (bundle.controlnet, bundle.denoiser):
        for module in net.modules():
            if isinstance(module, TemporalAttention):
                scale = 2 ** module.level
                out[module.site] = (batch, module.heads, latent_h // scale, latent_w // scale, frames)
    return out
