import pytest
import torch
from einops import repeat

from core import sampling
from core.data import make_training_pairs, synthesize_toy_videos
from core.enhancer import IdentityUpscaler, OracleEnhancer
from core.errors import ContractError
from core.metrics import psnr
from core.models import DegradationConfig, MotionSpec, SamplerOptions
from core.sampling import (
    backward_generation,
    bidirectional_prediction,
    bidirectional_sample,
    forward_generation,
    reverse_frames,
    sample_clip,
    unidirectional_sample,
    upsample_clip,
)
from core.schedule import cosine_schedule


def _case(seed: int, frames: int = 5, palindrome: bool = False):
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(1, frames, 4, 8, 8, generator=gen)
    clip = torch.rand(1, frames, 3, 32, 32, generator=gen)
    if palindrome:
        clip = 0.5 * (clip + reverse_frames(clip))
    h = torch.rand(1, 3, 32, 32, generator=gen)
    return z, clip, h


@torch.no_grad()
def test_backward_pass_mirrors_forward_with_shared_weights(live_bundle):
    sched = cosine_schedule(20)
    for trial in range(8):
        z, clip, h = _case(trial)
        t = 1 + (trial * 7) % 20
        p_f, record = forward_generation(z, t, h, clip, live_bundle, sched)
        p_b = backward_generation(z, t, h, clip, record, live_bundle, sched)
        assert (reverse_frames(p_b) - p_f).abs().max() <= 1e-4


@torch.no_grad()
def test_backward_pass_differs_once_roles_diverge(live_bundle):
    sched = cosine_schedule(20)
    gen = torch.Generator().manual_seed(11)
    for site in live_bundle.denoiser.temporal_sites():
        weight = site.to_v["bwd"].weight
        weight.add_(0.5 * torch.randn(weight.shape, generator=gen))
    z, clip, h = _case(0)
    p_f, record = forward_generation(z, 10, h, clip, live_bundle, sched)
    p_b = backward_generation(z, 10, h, clip, record, live_bundle, sched)
    assert (reverse_frames(p_b) - p_f).abs().max() > 1e-4


@torch.no_grad()
def test_palindrome_blend_equals_forward(live_bundle):
    sched = cosine_schedule(20)
    z, clip, h = _case(3, palindrome=True)
    for t in (20, 11, 1):
        p_f, _ = forward_generation(z, t, h, clip, live_bundle, sched)
        blended = bidirectional_prediction(z, t, h, h, clip, live_bundle, sched)
        assert (blended - p_f).abs().max() <= 1e-4


def test_palindrome_sample_equals_unidirectional(live_bundle):
    sched = cosine_schedule(4)
    opts = SamplerOptions(steps=4, sdedit_strength=1.0, seed=5)
    _, _, h = _case(4)
    frames = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(9))
    lq = torch.stack([frames[0], frames[1], frames[1], frames[0]])[None]
    bi = bidirectional_sample(lq, h, h, live_bundle, sched, opts)
    uni = unidirectional_sample(lq, h, live_bundle, sched, opts)
    assert bi.shape == (1, 4, 3, 32, 32)
    assert (bi - uni).abs().max() <= 1e-3


def test_sdedit_runs_eighteen_iterations(bundle):
    sched = cosine_schedule(30)
    opts = SamplerOptions(steps=30, sdedit_strength=0.6)
    lq = torch.rand(1, 4, 3, 8, 8)
    h = torch.rand(1, 3, 32, 32)
    result = sample_clip(lq, h, h, bundle, sched, opts, decode=False)
    assert result.steps == list(range(18, 0, -1))
    assert result.latent.shape == (1, 4, 4, 8, 8)


def test_sampling_is_deterministic(live_bundle):
    sched = cosine_schedule(3)
    opts = SamplerOptions(steps=3, sdedit_strength=0.7, seed=11)
    lq = torch.rand(1, 4, 3, 8, 8, generator=torch.Generator().manual_seed(0))
    h1, hk = torch.rand(2, 1, 3, 32, 32, generator=torch.Generator().manual_seed(1))
    a = sample_clip(lq, h1, hk, live_bundle, sched, opts)
    b = sample_clip(lq, h1, hk, live_bundle, sched, opts)
    assert torch.equal(a.video, b.video)
    assert a.video.min() >= 0 and a.video.max() <= 1


def test_tiled_sampling_covers_the_frame(bundle):
    sched = cosine_schedule(2)
    opts = SamplerOptions(steps=2, sdedit_strength=1.0, tile_size=8, tile_overlap=4)
    lq = torch.rand(1, 4, 3, 16, 16)
    h = torch.rand(1, 3, 64, 64)
    result = sample_clip(lq, h, h, bundle, sched, opts)
    assert result.tiles == 9
    assert result.video.shape == (1, 4, 3, 64, 64)


def test_tile_geometry_must_follow_latent_alignment(bundle):
    sched = cosine_schedule(2)
    opts = SamplerOptions(steps=2, sdedit_strength=1.0, tile_size=5, tile_overlap=2)
    with pytest.raises(ContractError):
        sample_clip(torch.rand(1, 4, 3, 16, 16), torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64), bundle, sched, opts)


def test_sampler_contracts(bundle):
    lq, h = torch.rand(1, 4, 3, 8, 8), torch.rand(1, 3, 32, 32)
    with pytest.raises(ContractError):
        sample_clip(lq, h, h, bundle, cosine_schedule(10), SamplerOptions(steps=30))
    with pytest.raises(ContractError):
        sample_clip(lq, h, None, bundle, cosine_schedule(30), SamplerOptions(steps=30, bidirectional=True))
    with pytest.raises(ContractError):
        sample_clip(lq, torch.rand(1, 3, 36, 36), None, bundle, cosine_schedule(30), SamplerOptions(bidirectional=False))


def test_upsample_clip_matches_target_size():
    clip = torch.rand(2, 3, 3, 8, 8)
    assert upsample_clip(clip, (32, 32)).shape == (2, 3, 3, 32, 32)
    assert upsample_clip(clip, (8, 8)) is clip


def _copy_reference(bundle, z_t, t, reference, clip, sched, attention=None, role="fwd", use_control=True):
    """A denoiser whose clean estimate is always the reference latent."""
    a, s = sched.coefficients(t)
    ref = repeat(reference.latent, "b c h w -> b f c h w", f=z_t.shape[1])
    return (a * z_t - ref) / s


@torch.no_grad()
def test_keyframe_detail_reaches_the_middle_frames(bundle, monkeypatch):
    monkeypatch.setattr(sampling, "model_prediction", _copy_reference)
    toy = synthesize_toy_videos(1, 4, 32, MotionSpec(kind="static"), seed=0, alignment=8)[0]
    video = toy.frames
    lq = make_training_pairs([toy], DegradationConfig(downscale_factor=4, seed=0))[0].lq
    target = bundle.vae_decode(bundle.vae_encode(video[None]), adapter_on=True).clamp(0.0, 1.0)[:, 1:-1]
    opts = SamplerOptions(steps=4, sdedit_strength=1.0, seed=0)

    def middle_psnr(enhancer) -> float:
        h1, hk = enhancer.enhance(lq[0], 0), enhancer.enhance(lq[-1], 3)
        out = sample_clip(lq[None], h1, hk, bundle, cosine_schedule(4), opts).video
        return psnr(out[:, 1:-1], target)

    oracle, plain = middle_psnr(OracleEnhancer(video, 4)), middle_psnr(IdentityUpscaler(4))
    assert oracle > plain
    assert oracle >= 60.0
