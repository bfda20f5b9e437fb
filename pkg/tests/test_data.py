import math

import pytest
import torch

from core.data import degrade, gaussian_kernel, make_training_pairs, synthesize_toy_videos
from core.errors import ContractError, RangeError
from core.models import DegradationConfig, MotionSpec
from core.rng import generator


def test_toy_videos_have_frames_and_flows():
    videos = synthesize_toy_videos(3, 5, 16, seed=1)
    assert [v.video_id for v in videos] == ["000001", "000002", "000003"]
    for v in videos:
        assert v.frames.shape == (5, 3, 16, 16)
        assert v.flows.shape == (4, 2, 16, 16)
        assert v.frames.min() >= 0 and v.frames.max() <= 1


def test_synthesis_is_seeded():
    a = synthesize_toy_videos(2, 4, 16, seed=5)
    b = synthesize_toy_videos(2, 4, 16, seed=5)
    c = synthesize_toy_videos(2, 4, 16, seed=6)
    assert all(torch.equal(x.frames, y.frames) for x, y in zip(a, b))
    assert not torch.equal(a[0].frames, c[0].frames)


def test_static_motion_is_still():
    video = synthesize_toy_videos(1, 4, 16, MotionSpec(kind="static"), seed=0)[0]
    assert all(torch.equal(video.frames[0], frame) for frame in video.frames)
    assert not video.flows.any()


def test_translate_motion_reports_its_velocity():
    motion = MotionSpec(kind="translate", camera_velocity=(2.0, 0.0), object_velocity=(-1.0, 1.0))
    flows = synthesize_toy_videos(1, 3, 24, motion, seed=0)[0].flows
    dx = set(flows[:, 0].unique().tolist())
    assert dx <= {2.0, -1.0} and 2.0 in dx


def test_synthesis_arguments_are_checked():
    with pytest.raises(RangeError):
        synthesize_toy_videos(0, 4, 16)
    with pytest.raises(ContractError):
        synthesize_toy_videos(1, 4, 18, alignment=8)
    with pytest.raises(RangeError):
        synthesize_toy_videos(1, 4, 16, MotionSpec(kind="spiral"))


def test_degrade_downsamples_and_quantises():
    hq = synthesize_toy_videos(1, 3, 32, seed=0)[0].frames
    cfg = DegradationConfig(downscale_factor=4, quant_levels=256, seed=0)
    lq = degrade(hq, cfg, generator(0, "test"))
    assert lq.shape == (3, 3, 8, 8)
    assert lq.min() >= 0 and lq.max() <= 1
    torch.testing.assert_close(lq * 255, torch.round(lq * 255), atol=1e-4, rtol=0)
    assert torch.equal(lq, degrade(hq, cfg, generator(0, "test")))


def test_clean_degradation_is_average_pooling():
    hq = torch.rand(2, 3, 8, 8)
    cfg = DegradationConfig(blur_sigma_range=(0.0, 0.0), noise_sigma_range=(0.0, 0.0), downscale_factor=2)
    torch.testing.assert_close(degrade(hq, cfg, generator(0)), torch.nn.functional.avg_pool2d(hq, 2))


def test_degradation_config_is_validated():
    with pytest.raises(RangeError):
        degrade(torch.rand(1, 3, 8, 8), DegradationConfig(blur_sigma_range=(2.0, 1.0)), generator(0))


def test_gaussian_kernel_is_normalised():
    kernel = gaussian_kernel(1.2, torch.float64)
    assert kernel.numel() % 2 == 1
    assert abs(float(kernel.sum()) - 1.0) <= 1e-12


def test_pairs_follow_the_videos():
    videos = synthesize_toy_videos(2, 4, 16, seed=0)
    pairs = make_training_pairs(videos, DegradationConfig(downscale_factor=4))
    assert pairs[0].gt is videos[0].frames
    assert pairs[1].lq.shape == (4, 3, 4, 4)


def test_noise_only_degradation_has_the_expected_spread():
    hq = torch.full((1, 3, 256, 256), 0.5)
    cfg = DegradationConfig(blur_sigma_range=(0.0, 0.0), downscale_factor=1, noise_sigma_range=(10.0, 10.0))
    spread = float((degrade(hq, cfg, generator(0, "noise")) - hq).abs().mean())
    expected = 10.0 / 255.0 * math.sqrt(2.0 / math.pi)
    assert abs(spread - expected) <= 0.1 * expected
