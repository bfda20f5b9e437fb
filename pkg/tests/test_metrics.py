import math

import pytest
import torch

from core.data import synthesize_toy_videos
from core.errors import ContractError, RangeError
from core.metrics import PSNR_CAP, evaluate_video, flow_warp_error, psnr, read_report, ssim, write_report
from core.models import MetricReport, MotionSpec, VideoMetrics


def test_psnr_values():
    x = torch.rand(3, 3, 8, 8)
    assert psnr(x, x) == PSNR_CAP
    zeros = torch.zeros(2, 3, 8, 8, dtype=torch.float64)
    assert abs(psnr(zeros, torch.full_like(zeros, 0.1)) - 20.0) <= 1e-9
    gain = psnr(zeros, torch.full_like(zeros, 0.1 / math.sqrt(2))) - psnr(zeros, torch.full_like(zeros, 0.1))
    assert abs(gain - 10 * math.log10(2)) <= 1e-9


def test_psnr_shape_mismatch():
    with pytest.raises(ContractError):
        psnr(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 4))


def test_ssim_values():
    x = torch.rand(2, 3, 16, 16)
    y = torch.rand(2, 3, 16, 16)
    assert abs(ssim(x, x) - 1.0) <= 1e-9
    assert abs(ssim(x, y) - ssim(y, x)) <= 1e-12
    board = ((torch.arange(16)[:, None] + torch.arange(16)[None, :]) % 2).float().expand(1, 3, 16, 16)
    assert ssim(board, 1 - board) < 0
    with pytest.raises(RangeError):
        ssim(x, y, window=4)


def test_static_video_has_no_warp_error():
    video = synthesize_toy_videos(1, 4, 16, MotionSpec(kind="static"), seed=0)[0]
    assert flow_warp_error(video.frames, video.flows) <= 1e-12


def test_ground_truth_flow_inverts_translation():
    motion = MotionSpec(kind="translate", camera_velocity=(2.0, 1.0), object_velocity=(2.0, 1.0))
    video = synthesize_toy_videos(1, 4, 32, motion, seed=3)[0]
    with_flow = flow_warp_error(video.frames, video.flows)
    without = flow_warp_error(video.frames, torch.zeros_like(video.flows))
    assert with_flow <= 1e-6
    assert without > with_flow


def test_flow_count_must_match():
    with pytest.raises(ContractError):
        flow_warp_error(torch.zeros(4, 3, 8, 8), torch.zeros(4, 2, 8, 8))
    with pytest.raises(ContractError):
        flow_warp_error(torch.zeros(4, 3, 8, 8), torch.zeros(3, 2, 4, 4))


def test_report_round_trip(tmp_path):
    pred, gt = torch.rand(3, 3, 16, 16), torch.rand(3, 3, 16, 16)
    first = evaluate_video("000002", pred, gt, torch.zeros(2, 2, 16, 16))
    second = VideoMetrics("000001", 30.0, 0.9, None, {"external": 1.5})
    report = MetricReport([first, second], {"config_hash": "abc123"})
    path = write_report(report, tmp_path / "reports" / "metrics.csv")

    text = path.read_text(encoding="utf-8")
    assert text.startswith("# config_hash=abc123\n")
    assert text.strip().splitlines()[-1].startswith("mean,")

    loaded = read_report(path)
    assert loaded.metadata == {"config_hash": "abc123"}
    by_id = {v.clip_id: v for v in loaded.videos}
    assert list(by_id) == ["000001", "000002"]
    assert by_id["000001"].e_warp is None
    assert by_id["000001"].extra == {"external": 1.5}
    assert abs(by_id["000002"].psnr - first.psnr) <= 1e-6
    assert abs(loaded.aggregate()["psnr"] - (30.0 + first.psnr) / 2) <= 1e-6
