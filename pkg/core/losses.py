"""Training losses: v-prediction MSE, fixed-feature perceptual distance, hinge GAN."""
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from core.errors import require_same_shape
from core.rng import seeded


def _frames(x: torch.Tensor) -> torch.Tensor:
    return rearrange(x, "b f c h w -> (b f) c h w") if x.ndim == 5 else x


def v_prediction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    require_same_shape(pred, target, "v_prediction_loss")
    return F.mse_loss(pred, target)


class FeatureNet(nn.Module):
    """Frozen, seeded random conv stack used as a perceptual feature extractor."""

    def __init__(self, width: int = 16, seed: int = 0):
        super().__init__()
        with seeded(seed, "perceptual-features"):
            self.layers = nn.ModuleList([
                nn.Conv2d(3, width, 3, padding=1),
                nn.Conv2d(width, width, 3, stride=2, padding=1),
                nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            ])
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        feats = []
        h = x
        for layer in self.layers:
            h = F.relu(layer(h))
            feats.append(h)
        return feats


_feature_nets: Dict[Tuple[str, torch.dtype], FeatureNet] = {}


def default_feature_net(like: torch.Tensor) -> FeatureNet:
    key = (str(like.device), like.dtype)
    if key not in _feature_nets:
        _feature_nets[key] = FeatureNet().to(device=like.device, dtype=like.dtype)
    return _feature_nets[key]


def perceptual_loss(a: torch.Tensor, b: torch.Tensor, net: Optional[FeatureNet] = None) -> torch.Tensor:
    require_same_shape(a, b, "perceptual_loss")
    a, b = _frames(a), _frames(b)
    net = net or default_feature_net(a)
    total = a.new_zeros(())
    for fa, fb in zip(net(a), net(b)):
        total = total + ((fa - fb) ** 2).mean()
    return total


class PatchDiscriminator(nn.Module):
    def __init__(self, width: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 4, stride=2, padding=1),
            nn.GroupNorm(8 if (2 * width) % 8 == 0 else 1, 2 * width),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 1, 3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(_frames(x))


def hinge_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return 0.5 * (F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean())


def hinge_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return -fake_scores.mean()


def discriminator_accuracy(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> float:
    hits = (real_scores > 0).float().mean() + (fake_scores < 0).float().mean()
    return float(hits) / 2


def gan_losses(disc: nn.Module, real: torch.Tensor, fake: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, float]:
    """Return (g_loss, d_loss, discriminator accuracy).

    ``d_loss`` sees ``fake`` detached so one backward on each loss updates the
    right parameters.
    """
    require_same_shape(real, fake, "gan_losses")
    real_scores = disc(real)
    fake_detached = disc(fake.detach())
    d_loss = hinge_d_loss(real_scores, fake_detached)
    g_loss = hinge_g_loss(disc(fake))
    return g_loss, d_loss, discriminator_accuracy(real_scores.detach(), fake_detached.detach())
