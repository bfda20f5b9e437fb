import os

import pytest
import torch
from hypothesis import HealthCheck, settings

from core.data import make_training_pairs, synthesize_toy_videos
from core.models import DegradationConfig, ModelConfig, MotionSpec
from core.network import ModelBundle

settings.register_profile("fast", max_examples=25, deadline=None)
settings.register_profile(
    "ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))

# 32 px frames -> 8x8 latents with two UNet levels
HQ_SIZE = 32
LQ_SIZE = 8


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(
        frames=4,
        latent_channels=4,
        base_width=8,
        num_heads=2,
        latent_downscale=4,
        ref_embed_dim=8,
        resolutions=(8, 16),
        adapter_rank=2,
    )


@pytest.fixture
def bundle(tiny_config) -> ModelBundle:
    return ModelBundle.build(tiny_config, seed=0)


@pytest.fixture
def live_bundle(bundle) -> ModelBundle:
    """Bundle whose ControlNet projections are non-zero, so the ControlNet path matters."""
    gen = torch.Generator().manual_seed(7)
    with torch.no_grad():
        for conv in bundle.controlnet.zero_convs:
            conv.weight.copy_(0.2 * torch.randn(conv.weight.shape, generator=gen))
            conv.bias.copy_(0.2 * torch.randn(conv.bias.shape, generator=gen))
    return bundle


@pytest.fixture
def pairs():
    motion = MotionSpec(kind="translate", camera_velocity=(1.0, 0.0), object_velocity=(1.0, 1.0))
    videos = synthesize_toy_videos(2, 4, HQ_SIZE, motion, seed=0, alignment=8)
    return make_training_pairs(videos, DegradationConfig(downscale_factor=4, seed=0))


@pytest.fixture
def runtime_env(tmp_path, monkeypatch):
    monkeypatch.setenv("DAMVSR_DB_PATH", str(tmp_path / "data" / "runs.db"))
    monkeypatch.setenv("DAMVSR_LOG_PATH", str(tmp_path / "logs" / "damvsr.log"))
    monkeypatch.setenv("DAMVSR_NO_PROGRESS", "1")
    for key in list(os.environ):
        if key.startswith("DAMVSR_") and key not in {"DAMVSR_DB_PATH", "DAMVSR_LOG_PATH", "DAMVSR_NO_PROGRESS"}:
            monkeypatch.delenv(key)
    return tmp_path
