import pytest
import torch

from cli.media import read_flow, read_flows, read_frames, video_dirs, write_flow, write_flows, write_frames
from core.errors import ContractError, UsageError


def test_frames_round_trip_at_eight_bits(tmp_path):
    video = torch.rand(3, 3, 8, 12)
    paths = write_frames(video, tmp_path / "clip")
    assert [p.name for p in paths] == ["000001.png", "000002.png", "000003.png"]
    loaded = read_frames(tmp_path / "clip")
    assert loaded.shape == video.shape
    assert (loaded - video).abs().max() <= 0.5 / 255 + 1e-6


def test_flow_files_are_exact(tmp_path):
    flows = torch.randn(2, 2, 5, 7)
    write_flows(flows, tmp_path / "flows")
    assert torch.equal(read_flows(tmp_path / "flows"), flows)
    header = (tmp_path / "flows" / "000001.flo").read_bytes()[:16]
    assert header[:4] == b"FLW1"
    assert int.from_bytes(header[4:8], "little") == 5
    assert int.from_bytes(header[8:12], "little") == 7


def test_broken_flow_files(tmp_path):
    path = tmp_path / "bad.flo"
    write_flow(torch.zeros(2, 3, 3), path)
    data = path.read_bytes()
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ContractError):
        read_flow(path)
    path.write_bytes(data[:-4])
    with pytest.raises(ContractError):
        read_flow(path)


def test_video_dirs_layouts(tmp_path):
    write_frames(torch.rand(2, 3, 4, 4), tmp_path / "data" / "000001" / "gt")
    write_frames(torch.rand(2, 3, 4, 4), tmp_path / "data" / "000002" / "gt")
    write_frames(torch.rand(2, 3, 4, 4), tmp_path / "preds" / "000001")
    assert list(video_dirs(tmp_path / "data", "gt")) == ["000001", "000002"]
    assert video_dirs(tmp_path / "preds", "pred")["000001"] == tmp_path / "preds" / "000001"
    single = tmp_path / "preds" / "000001"
    assert video_dirs(single, "lq") == {"000001": single}
    with pytest.raises(UsageError):
        video_dirs(tmp_path / "data", "lq")
