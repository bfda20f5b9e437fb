"""Long videos: clips of k frames that share exactly one boundary keyframe.

Frame indices in a ClipPlan are 1-based and inclusive. Videos here are
unbatched ``(frames, 3, H, W)`` tensors.
"""
import logging
from typing import Dict, List, Optional

import torch
from tqdm import tqdm

from core.enhancer import ReferenceEnhancer
from core.errors import ContractError, PipelineError, RangeError, VsrError
from core.models import ClipPlan, SamplerOptions
from core.network import ModelBundle
from core.sampling import bidirectional_sample, unidirectional_sample
from core.schedule import NoiseSchedule

logger = logging.getLogger(__name__)


def plan_clips(n: int, k: int) -> ClipPlan:
    if n < 2 or k < 2:
        raise RangeError(f"long-video planning needs n >= 2 and k >= 2, got n={n}, k={k}")
    stride = k - 1
    pad = (-(n - 1)) % stride
    total = n + pad
    clips = [(start, start + stride) for start in range(1, total, stride)]
    return ClipPlan(n=n, k=k, clips=clips, pad_count=pad)


def pad_frames(video: torch.Tensor, count: int) -> torch.Tensor:
    if count <= 0:
        return video
    return torch.cat([video, video[-1:].expand(count, *video.shape[1:])], dim=0)


def enhance_keyframes(video: torch.Tensor, plan: ClipPlan, enhancer: ReferenceEnhancer) -> Dict[int, torch.Tensor]:
    """One enhanced frame per distinct boundary index, shared by the adjacent clips."""
    if video.shape[0] != plan.padded_length:
        raise ContractError(f"video has {video.shape[0]} frames, plan expects {plan.padded_length} after padding")
    keyframes: Dict[int, torch.Tensor] = {}
    for clip_idx, (start, end) in enumerate(plan.clips):
        for idx in (start, end):
            if idx in keyframes:
                continue
            try:
                keyframes[idx] = enhancer.enhance(video[idx - 1], index=idx - 1)
            except VsrError as exc:
                raise PipelineError("enhancer", f"clip {clip_idx + 1}, keyframe {idx}", exc) from exc
    logger.info("Enhanced %d keyframes with %s", len(keyframes), enhancer.name)
    return keyframes


def _sample(clip, first, last, bundle, sched, opts, workers):
    if opts.bidirectional:
        return bidirectional_sample(clip[None], first[None], last[None], bundle, sched, opts, workers)[0]
    return unidirectional_sample(clip[None], first[None], bundle, sched, opts, workers)[0]


def run_long_vsr(
    video: torch.Tensor,
    enhancer: ReferenceEnhancer,
    bundle: ModelBundle,
    sched: NoiseSchedule,
    opts: SamplerOptions,
    k: Optional[int] = None,
    workers: int = 1,
    progress: bool = False,
) -> torch.Tensor:
    n = video.shape[0]
    k = k or bundle.config.frames
    plan = plan_clips(n, k)
    padded = pad_frames(video, plan.pad_count)
    keyframes = enhance_keyframes(padded, plan, enhancer)
    logger.info("Long video: %d frames, %d clip(s) of %d, %d padding frame(s)", n, plan.m, k, plan.pad_count)

    pieces: List[torch.Tensor] = []
    for idx, (start, end) in enumerate(tqdm(plan.clips, desc="clips", disable=not progress)):
        try:
            out = _sample(padded[start - 1:end], keyframes[start], keyframes[end], bundle, sched, opts, workers)
        except VsrError as exc:
            raise PipelineError("longvideo", f"clip {idx + 1}/{plan.m} frames [{start}, {end}]", exc) from exc
        # the shared first frame was already emitted by the previous clip
        pieces.append(out if idx == 0 else out[1:])
    return torch.cat(pieces, dim=0)[:n]


def run_independent_vsr(
    video: torch.Tensor,
    enhancer: ReferenceEnhancer,
    bundle: ModelBundle,
    sched: NoiseSchedule,
    opts: SamplerOptions,
    k: Optional[int] = None,
    workers: int = 1,
) -> torch.Tensor:
    """Baseline: disjoint k-frame clips, each conditioned only on its own enhanced first frame."""
    n = video.shape[0]
    k = k or bundle.config.frames
    if n < 1 or k < 1:
        raise RangeError(f"need n >= 1 and k >= 1, got n={n}, k={k}")
    padded = pad_frames(video, (-n) % k)
    uni = SamplerOptions(**{**opts.__dict__, "bidirectional": False})
    pieces = []
    for idx, start in enumerate(range(0, padded.shape[0], k)):
        first = enhancer.enhance(padded[start], index=start)
        try:
            pieces.append(_sample(padded[start:start + k], first, first, bundle, sched, uni, workers))
        except VsrError as exc:
            raise PipelineError("longvideo", f"independent clip {idx + 1} at frame {start + 1}", exc) from exc
    return torch.cat(pieces, dim=0)[:n]


def long_seams(plan: ClipPlan) -> List[int]:
    """0-based output positions i where frames i and i+1 come from different clips."""
    return [end - 1 for _, end in plan.clips[:-1] if end < plan.n]


def independent_seams(n: int, k: int) -> List[int]:
    return [end - 1 for end in range(k, n, k)]


def seam_flicker(video: torch.Tensor, seams: List[int]) -> float:
    """Mean absolute difference between each seam frame and the frame after it."""
    if not seams:
        return 0.0
    diffs = [(video[i + 1] - video[i]).abs().mean() for i in seams if i + 1 < video.shape[0]]
    return float(torch.stack(diffs).mean()) if diffs else 0.0
