"""Overlapping spatial tiles for latent denoising and VAE decoding.

Latent predictions are combined with an unweighted mean over covering tiles.
Decoded pixels are combined with feathered linear ramps normalised to a
partition of unity. Both reductions run in fixed scan order (row-major over
tile origins) whatever order the tiles were computed in.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional

import torch

from core.errors import ContractError, RangeError
from core.models import Rect, TilePlan

logger = logging.getLogger(__name__)

TileFn = Callable[[Rect], torch.Tensor]


def _starts(size: int, tile: int, overlap: int) -> List[int]:
    if tile >= size:
        return [0]
    starts = list(range(0, size - tile + 1, tile - overlap))
    if starts[-1] != size - tile:
        starts.append(size - tile)
    return starts


def default_overlap(tile: int, alignment: int = 1) -> int:
    return (tile // 4) // alignment * alignment


def plan_tiles(height: int, width: int, tile_h: int, tile_w: int, overlap: Optional[int] = None) -> TilePlan:
    if min(height, width, tile_h, tile_w) < 1:
        raise RangeError(f"tile geometry must be positive: domain {height}x{width}, tile {tile_h}x{tile_w}")
    if overlap is None:
        overlap = default_overlap(min(tile_h, tile_w))
    if overlap < 0 or overlap >= min(tile_h, tile_w):
        raise RangeError(f"overlap {overlap} must be in [0, tile size {min(tile_h, tile_w)})")
    tile_h, tile_w = min(tile_h, height), min(tile_w, width)
    rects = [
        Rect(top, left, tile_h, tile_w)
        for top in _starts(height, tile_h, overlap)
        for left in _starts(width, tile_w, overlap)
    ]
    return TilePlan(height, width, tile_h, tile_w, overlap, rects)


def crop(x: torch.Tensor, rect: Rect) -> torch.Tensor:
    return x[..., rect.top:rect.bottom, rect.left:rect.right]


def coverage(plan: TilePlan) -> torch.Tensor:
    count = torch.zeros(plan.height, plan.width, dtype=torch.int64)
    for rect in plan.rects:
        count[rect.top:rect.bottom, rect.left:rect.right] += 1
    return count


def _evaluate(fn: TileFn, rects: List[Rect], workers: int) -> List[torch.Tensor]:
    if workers <= 1 or len(rects) == 1:
        return [fn(r) for r in rects]
    # grad mode is thread-local; carry the caller's into the workers
    grad_enabled = torch.is_grad_enabled()

    def run(rect: Rect) -> torch.Tensor:
        with torch.set_grad_enabled(grad_enabled):
            return fn(rect)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map() yields in submission order, so the reduction below is order-stable
        return list(pool.map(run, rects))


def tiled_prediction(z_t: torch.Tensor, predict: TileFn, plan: TilePlan, workers: int = 1) -> torch.Tensor:
    if (z_t.shape[-2], z_t.shape[-1]) != (plan.height, plan.width):
        raise ContractError(f"tile plan {plan.height}x{plan.width} does not match latent {tuple(z_t.shape[-2:])}")
    if plan.is_single:
        out = predict(plan.rects[0])
        if out.shape != z_t.shape:
            raise ContractError(f"tile prediction shape {tuple(out.shape)} != latent shape {tuple(z_t.shape)}")
        return out

    total = torch.zeros_like(z_t)
    count = torch.zeros(plan.height, plan.width, dtype=z_t.dtype, device=z_t.device)
    for rect, pred in zip(plan.rects, _evaluate(predict, plan.rects, workers)):
        expected = tuple(z_t.shape[:-2]) + (rect.height, rect.width)
        if tuple(pred.shape) != expected:
            raise ContractError(f"tile {rect} returned shape {tuple(pred.shape)}, expected {expected}")
        crop(total, rect).add_(pred)
        crop(count, rect).add_(1)
    return total / count


def _ramp(length: int, feather: int, ramp_start: bool, ramp_end: bool, dtype) -> torch.Tensor:
    w = torch.ones(length, dtype=dtype)
    width = min(feather, length // 2)
    if width <= 0:
        return w
    ramp = torch.arange(1, width + 1, dtype=dtype) / (width + 1)
    if ramp_start:
        w[:width] = ramp
    if ramp_end:
        w[length - width:] = ramp.flip(0)
    return w


def feather_weights(plan: TilePlan, feather: int, dtype=torch.float32) -> List[torch.Tensor]:
    """Per-tile blend weights; summed over tiles they are 1 at every pixel."""
    raw = []
    for rect in plan.rects:
        wy = _ramp(rect.height, feather, rect.top > 0, rect.bottom < plan.height, dtype)
        wx = _ramp(rect.width, feather, rect.left > 0, rect.right < plan.width, dtype)
        raw.append(wy[:, None] * wx[None, :])
    total = torch.zeros(plan.height, plan.width, dtype=dtype)
    for rect, w in zip(plan.rects, raw):
        crop(total, rect).add_(w)
    return [w / crop(total, rect) for rect, w in zip(plan.rects, raw)]


def tiled_vae_decode(
    z0: torch.Tensor,
    decode: Callable[[torch.Tensor], torch.Tensor],
    latent_plan: TilePlan,
    factor: int,
    feather: Optional[int] = None,
    workers: int = 1,
) -> torch.Tensor:
    if latent_plan.is_single:
        return decode(z0)
    pixel_plan = latent_plan.scaled(factor)
    if feather is None:
        feather = max(pixel_plan.overlap // 2, 1)
    weights = feather_weights(pixel_plan, feather, dtype=z0.dtype)
    blocks = _evaluate(lambda r: decode(crop(z0, r)), latent_plan.rects, workers)
    out = None
    for rect, weight, block in zip(pixel_plan.rects, weights, blocks):
        if out is None:
            out = block.new_zeros(tuple(block.shape[:-2]) + (pixel_plan.height, pixel_plan.width))
        crop(out, rect).add_(block * weight.to(block.device))
    logger.debug("Tiled decode: %d blocks, feather %d px", len(blocks), feather)
    return out
