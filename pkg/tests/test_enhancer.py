import pytest
import torch

import external_tools
from core.data import make_training_pairs, synthesize_toy_videos
from core.enhancer import (
    IdentityUpscaler,
    NetEnhancer,
    OracleEnhancer,
    ReferenceEnhancer,
    TinySRNet,
    bicubic,
    enhance_video,
)
from core.errors import ContractError, EnhancerError, PipelineError
from core.metrics import psnr
from core.models import DegradationConfig, MotionSpec, StageConfig
from core.training import train_stage
from external_tools import ExternalEnhancer, external_metric


class WrongSize(ReferenceEnhancer):
    name = "wrong-size"

    def _enhance(self, frames, index):
        return frames


def test_identity_shape_law():
    enhancer = IdentityUpscaler(4)
    assert enhancer.enhance(torch.rand(3, 8, 6)).shape == (3, 32, 24)
    assert enhancer.enhance(torch.rand(2, 3, 8, 6)).shape == (2, 3, 32, 24)
    with pytest.raises(ContractError):
        enhancer.enhance(torch.rand(1, 8, 8))


def test_oracle_returns_stored_frames():
    gt = torch.rand(5, 3, 16, 16)
    oracle = OracleEnhancer(gt, 2)
    assert torch.equal(oracle.enhance(torch.rand(3, 8, 8), index=3), gt[3])
    assert torch.equal(oracle.enhance(torch.rand(3, 8, 8), index=12), gt[4])
    with pytest.raises(EnhancerError):
        oracle.enhance(torch.rand(3, 8, 8))


def test_fresh_sr_net_is_bicubic():
    net = TinySRNet(width=8)
    lq = torch.rand(2, 3, 8, 8)
    assert (net(lq, 4) - bicubic(lq, 4)).abs().max() == 0
    assert NetEnhancer(net, 4).enhance(lq[0]).shape == (3, 32, 32)


def test_shape_violations_become_enhancer_errors():
    with pytest.raises(EnhancerError, match="wrong-size"):
        WrongSize(2).enhance(torch.rand(3, 4, 4))


def test_frame_by_frame_enhancement():
    video = torch.rand(3, 3, 4, 4)
    out = enhance_video(video, IdentityUpscaler(2))
    assert out.shape == (3, 3, 8, 8)
    torch.testing.assert_close(out[1], bicubic(video[1:2], 2)[0])


def test_external_enhancer_runs_a_command():
    out = ExternalEnhancer("cp {input} {output}", 1).enhance(torch.zeros(3, 4, 4))
    assert out.shape == (3, 4, 4)
    with pytest.raises(EnhancerError):
        ExternalEnhancer("cp {input} {output}", 2).enhance(torch.zeros(3, 4, 4))


def test_external_enhancer_failures(monkeypatch):
    monkeypatch.setattr(external_tools, "COMMAND_RETRIES", 0)
    with pytest.raises(EnhancerError, match="exit code"):
        ExternalEnhancer("false {input} {output}", 1).enhance(torch.zeros(3, 4, 4))
    with pytest.raises(EnhancerError, match="not found"):
        ExternalEnhancer("no-such-binary-damvsr {input} {output}", 1).enhance(torch.zeros(3, 4, 4))
    with pytest.raises(EnhancerError, match="placeholder"):
        ExternalEnhancer("cp {input} out.png", 1).enhance(torch.zeros(3, 4, 4))


def test_external_metric_parses_the_last_token(tmp_path, monkeypatch):
    monkeypatch.setattr(external_tools, "COMMAND_RETRIES", 0)
    assert external_metric("sh -c 'echo score 0.25' {frames}", tmp_path) == 0.25
    with pytest.raises(PipelineError):
        external_metric("sh -c 'echo nothing-numeric' {frames}", tmp_path)


def test_identity_keeps_a_constant_image_constant():
    out = IdentityUpscaler(4).enhance(torch.full((3, 8, 8), 0.3))
    torch.testing.assert_close(out, torch.full((3, 32, 32), 0.3), atol=1e-6, rtol=0)


def test_trained_sr_net_beats_bicubic(bundle):
    motion = MotionSpec(kind="random")
    train = make_training_pairs(
        synthesize_toy_videos(4, 4, 32, motion, seed=0, alignment=8), DegradationConfig(downscale_factor=4, seed=0)
    )
    held = make_training_pairs(
        synthesize_toy_videos(2, 4, 32, motion, seed=1, alignment=8), DegradationConfig(downscale_factor=4, seed=1)
    )
    cfg = StageConfig(stage="sr", iterations=150, learning_rate=1e-3, batch_size=2, log_every=0)
    train_stage("sr", train, bundle, cfg, scale=4)
    net, plain = NetEnhancer(bundle.sr_net, 4), IdentityUpscaler(4)
    net_psnr = sum(psnr(enhance_video(p.lq, net), p.gt) for p in held)
    bicubic_psnr = sum(psnr(enhance_video(p.lq, plain), p.gt) for p in held)
    assert net_psnr > bicubic_psnr
