"""Frame directories (8-bit RGB PNG), flow files and dataset layout.

Flow file layout (little endian): ``b"FLW1"``, uint32 height, uint32 width,
uint32 reserved (0), then float32 ``(2, height, width)`` with channel 0 = dx.
"""
import struct
from pathlib import Path
from typing import Dict, List

import numpy as np
import torch
from PIL import Image

from cli.constants import FLOW_MAGIC, FLOW_SUFFIX, FRAME_PATTERN
from core.errors import ContractError, UsageError

_HEADER = struct.Struct("<4sIII")


def frame_files(directory: Path) -> List[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")


def read_frames(directory) -> torch.Tensor:
    files = frame_files(Path(directory))
    if not files:
        raise UsageError(f"no PNG frames in {directory}")
    arrays = [np.asarray(Image.open(f).convert("RGB"), dtype=np.uint8) for f in files]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ContractError(f"frames in {directory} have mixed sizes: {sorted(shapes)}")
    stacked = np.stack(arrays).astype(np.float32) / 255.0
    return torch.from_numpy(stacked).permute(0, 3, 1, 2).contiguous()


def to_uint8(video: torch.Tensor) -> np.ndarray:
    clipped = video.detach().to("cpu", torch.float32).clamp(0.0, 1.0)
    return (clipped * 255.0).round().to(torch.uint8).permute(0, 2, 3, 1).numpy()


def write_frames(video: torch.Tensor, directory) -> List[Path]:
    """Write (frames, 3, H, W) in [0, 1] as 000001.png, 000002.png, ..."""
    if video.ndim != 4 or video.shape[1] != 3:
        raise ContractError(f"expected (frames, 3, H, W) video, got {tuple(video.shape)}")
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for idx, frame in enumerate(to_uint8(video), start=1):
        path = out_dir / FRAME_PATTERN.format(idx)
        Image.fromarray(frame).save(path, format="PNG")
        paths.append(path)
    return paths


def write_flow(flow: torch.Tensor, path) -> None:
    array = flow.detach().to("cpu", torch.float32).numpy()
    if array.ndim != 3 or array.shape[0] != 2:
        raise ContractError(f"flow must be (2, H, W), got {array.shape}")
    _, height, width = array.shape
    with open(path, "wb") as handle:
        handle.write(_HEADER.pack(FLOW_MAGIC, height, width, 0))
        handle.write(array.astype("<f4").tobytes(order="C"))


def read_flow(path) -> torch.Tensor:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ContractError(f"{path}: truncated flow header")
    magic, height, width, _ = _HEADER.unpack_from(data)
    if magic != FLOW_MAGIC:
        raise ContractError(f"{path}: bad flow magic {magic!r}")
    expected = 2 * height * width * 4
    if len(data) - _HEADER.size != expected:
        raise ContractError(f"{path}: expected {expected} payload bytes, got {len(data) - _HEADER.size}")
    array = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(2, height, width)
    return torch.from_numpy(array.astype(np.float32))


def write_flows(flows: torch.Tensor, directory) -> None:
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    for idx, flow in enumerate(flows, start=1):
        write_flow(flow, out_dir / f"{idx:06d}{FLOW_SUFFIX}")


def read_flows(directory) -> torch.Tensor:
    files = sorted(p for p in Path(directory).iterdir() if p.suffix == FLOW_SUFFIX)
    if not files:
        raise UsageError(f"no {FLOW_SUFFIX} files in {directory}")
    return torch.stack([read_flow(p) for p in files])


def video_dirs(root, kind: str) -> Dict[str, Path]:
    """Map clip id -> frame directory.

    ``root`` is either a frame directory itself (one clip named after it) or a
    dataset root whose subdirectories hold frames directly or under ``kind``.
    """
    root = Path(root)
    if frame_files(root):
        return {root.name: root}
    out: Dict[str, Path] = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        nested = sub / kind
        if nested.is_dir() and frame_files(nested):
            out[sub.name] = nested
        elif frame_files(sub):
            out[sub.name] = sub
    if not out:
        raise UsageError(f"no frame directories under {root}")
    return out


def flow_dir(root, clip_id: str) -> Path:
    root = Path(root)
    for candidate in (root / clip_id / "flows", root / clip_id, root):
        if candidate.is_dir() and any(p.suffix == FLOW_SUFFIX for p in candidate.iterdir()):
            return candidate
    raise UsageError(f"no flow files for clip {clip_id} under {root}")
