"""Reference metrics: PSNR, SSIM and flow-warping error, plus the CSV report."""
import csv
import logging
from pathlib import Path
from typing import Dict, Optional

import torch
import torch.nn.functional as F
from einops import rearrange

from core.errors import ContractError, RangeError, require_same_shape
from core.models import MetricReport, VideoMetrics

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
EWARP_SCALE = 1e3


def _per_frame(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 5:
        x = rearrange(x, "b f c h w -> (b f) c h w")
    if x.ndim != 4:
        raise ContractError(f"expected (frames, C, H, W) video, got {tuple(x.shape)}")
    return x.to(torch.float64)


def psnr(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> float:
    require_same_shape(a, b, "psnr")
    a, b = _per_frame(a), _per_frame(b)
    mse = ((a - b) ** 2).flatten(1).mean(dim=1)
    values = torch.where(
        mse > 0,
        10.0 * torch.log10(peak**2 / mse.clamp_min(1e-300)),
        torch.full_like(mse, PSNR_CAP),
    ).clamp(max=PSNR_CAP)
    return float(values.mean())


def _gaussian_window(size: int, sigma: float) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 7, sigma: float = 1.5, peak: float = 1.0) -> float:
    require_same_shape(a, b, "ssim")
    if window % 2 == 0 or window < 1:
        raise RangeError(f"ssim window must be odd, got {window}")
    a, b = _per_frame(a), _per_frame(b)
    if min(a.shape[-2:]) < window:
        raise RangeError(f"frames {tuple(a.shape[-2:])} smaller than ssim window {window}")
    channels = a.shape[1]
    kernel = _gaussian_window(window, sigma).to(a.device).expand(channels, 1, window, window)

    def filt(x):
        return F.conv2d(x, kernel, groups=channels)

    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float((num / den).flatten(1).mean(dim=1).mean())


def warp(frame: torch.Tensor, flow: torch.Tensor):
    """Sample ``frame`` at ``p - flow(p)``; returns (warped, in-bounds mask)."""
    _, height, width = frame.shape
    ys, xs = torch.meshgrid(
        torch.arange(height, dtype=torch.float64), torch.arange(width, dtype=torch.float64), indexing="ij"
    )
    sx = xs - flow[0].to(torch.float64)
    sy = ys - flow[1].to(torch.float64)
    valid = (sx >= 0) & (sx <= width - 1) & (sy >= 0) & (sy <= height - 1)
    grid = torch.stack([2 * sx / max(width - 1, 1) - 1, 2 * sy / max(height - 1, 1) - 1], dim=-1)
    warped = F.grid_sample(frame[None].to(torch.float64), grid[None], mode="bilinear", align_corners=True)
    return warped[0], valid


def flow_warp_error(video: torch.Tensor, flows: torch.Tensor) -> float:
    """Mean squared warp residual over consecutive pairs, scaled by 1e3."""
    if video.ndim != 4 or flows.ndim != 4 or flows.shape[1] != 2:
        raise ContractError(f"expected (F, C, H, W) video and (F-1, 2, H, W) flows, got {tuple(video.shape)}, {tuple(flows.shape)}")
    if flows.shape[0] != video.shape[0] - 1:
        raise ContractError(f"{video.shape[0]} frames need {video.shape[0] - 1} flow fields, got {flows.shape[0]}")
    if flows.shape[-2:] != video.shape[-2:]:
        raise ContractError(f"flow size {tuple(flows.shape[-2:])} does not match frames {tuple(video.shape[-2:])}")
    errors = []
    for t in range(flows.shape[0]):
        warped, valid = warp(video[t], flows[t])
        if not bool(valid.any()):
            continue
        sq = ((video[t + 1].to(torch.float64) - warped) ** 2).mean(dim=0)
        errors.append(sq[valid].mean())
    if not errors:
        return 0.0
    return float(torch.stack(errors).mean()) * EWARP_SCALE


def evaluate_video(
    clip_id: str,
    pred: torch.Tensor,
    gt: torch.Tensor,
    flows: Optional[torch.Tensor] = None,
) -> VideoMetrics:
    e_warp = flow_warp_error(pred, flows) if flows is not None else None
    return VideoMetrics(clip_id=clip_id, psnr=psnr(pred, gt), ssim=ssim(pred, gt), e_warp=e_warp)


def write_report(report: MetricReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extras = sorted({k for v in report.videos for k in v.extra})
    with path.open("w", newline="", encoding="utf-8") as handle:
        for key in sorted(report.metadata):
            handle.write(f"# {key}={report.metadata[key]}\n")
        writer = csv.writer(handle)
        writer.writerow(["clip_id", "psnr", "ssim", "e_warp", *extras])
        for v in sorted(report.videos, key=lambda item: item.clip_id):
            writer.writerow([v.clip_id, _fmt(v.psnr), _fmt(v.ssim), _fmt(v.e_warp), *[_fmt(v.extra.get(k)) for k in extras]])
        agg = report.aggregate()
        if agg:
            writer.writerow(["mean", _fmt(agg["psnr"]), _fmt(agg["ssim"]), _fmt(agg["e_warp"]), *[_fmt(agg.get(k)) for k in extras]])
    logger.info("Metric report written: %s (%d videos)", path, len(report.videos))
    return path


def read_report(path) -> MetricReport:
    metadata: Dict[str, str] = {}
    rows = []
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("# ") and "=" in line:
                key, value = line[2:].rstrip("\n").split("=", 1)
                metadata[key] = value
            else:
                rows.append(line)
    videos = []
    reader = csv.DictReader(rows)
    for row in reader:
        if row["clip_id"] == "mean":
            continue
        extra = {k: float(v) for k, v in row.items() if k not in {"clip_id", "psnr", "ssim", "e_warp"} and v}
        videos.append(
            VideoMetrics(row["clip_id"], float(row["psnr"]), float(row["ssim"]), float(row["e_warp"]) if row["e_warp"] else None, extra)
        )
    return MetricReport(videos, metadata)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"
