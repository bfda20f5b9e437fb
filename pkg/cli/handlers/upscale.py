import logging
from pathlib import Path
from typing import Dict, List, Optional

import torch

import db
from cli.context import AppContext
from cli.handlers.common import ledger_run, load_bundle, make_enhancer
from cli.media import read_frames, video_dirs, write_frames
from cli.utils import require_dir
from core.enhancer import enhance_video
from core.errors import UsageError
from core.longvideo import independent_seams, long_seams, plan_clips, run_independent_vsr, run_long_vsr, seam_flicker
from core.sampling import sample_clip
from core.schedule import cosine_schedule

logger = logging.getLogger(__name__)


def upscale_video(lq, enhancer, bundle, ctx: AppContext, mode: str = "auto") -> torch.Tensor:
    """``mode``: auto (clip planning only when n > k), long (always plan clips) or independent."""
    cfg = ctx.config
    if cfg.frame_by_frame:
        return enhance_video(lq, enhancer)
    sched = cosine_schedule(cfg.sampler.steps)
    n, k = lq.shape[0], cfg.model.frames
    if mode == "independent":
        return run_independent_vsr(lq, enhancer, bundle, sched, cfg.sampler, k, cfg.workers)
    if n > 1 and (mode == "long" or n > k):
        return run_long_vsr(lq, enhancer, bundle, sched, cfg.sampler, k, cfg.workers, ctx.progress)
    h1 = enhancer.enhance(lq[0], index=0)
    hk = enhancer.enhance(lq[-1], index=n - 1) if n > 1 else h1
    return sample_clip(lq[None], h1[None], hk[None], bundle, sched, cfg.sampler, cfg.workers).video[0]


def clip_seams(n: int, k: int, mode: str) -> List[int]:
    if mode == "independent":
        return independent_seams(n, k)
    if n > 1 and (mode == "long" or n > k):
        return long_seams(plan_clips(n, k))
    return []


def _matching_gt(clip_id: str, inputs: Dict[str, Path], gts: Dict[str, Path]) -> Path:
    if clip_id in gts:
        return gts[clip_id]
    if len(inputs) == 1 and len(gts) == 1:
        return next(iter(gts.values()))
    raise UsageError(f"no ground-truth frames for clip {clip_id}")


def cmd_upscale(args, ctx: AppContext) -> int:
    input_dir = require_dir(args.input, "input")
    if not args.output:
        raise UsageError("upscale needs --output")
    if args.long and args.independent:
        raise UsageError("--long and --independent are exclusive")
    cfg = ctx.config
    mode = "independent" if args.independent else "long" if args.long else "auto"
    inputs = video_dirs(input_dir, "lq")
    gts = video_dirs(require_dir(args.gt, "ground-truth"), "gt") if args.gt else {}
    gt_dirs: Dict[str, Optional[Path]] = {clip_id: None for clip_id in inputs}
    if gts and cfg.enhancer == "oracle":
        gt_dirs = {clip_id: _matching_gt(clip_id, inputs, gts) for clip_id in inputs}
    single = len(inputs) == 1 and input_dir.name in inputs and inputs[input_dir.name] == input_dir
    scale = cfg.degradation.downscale_factor
    flickers: List[float] = []

    with ledger_run(ctx, "upscale") as run_id:
        bundle, _ = load_bundle(ctx, args.checkpoint)
        bundle.eval()
        for clip_id, clip_dir in inputs.items():
            lq = read_frames(clip_dir)
            gt = read_frames(gt_dirs[clip_id]) if gt_dirs[clip_id] is not None else None
            enhancer = make_enhancer(cfg.enhancer, scale, bundle, gt)
            n, k = lq.shape[0], cfg.model.frames
            with torch.no_grad():
                out = upscale_video(lq, enhancer, bundle, ctx, mode)
            seams = [] if cfg.frame_by_frame else clip_seams(n, k, mode)
            if seams:
                flicker = seam_flicker(out, seams)
                flickers.append(flicker)
                db.record_metric(run_id, clip_id, None, None, None, {"seam_flicker": flicker, "seams": float(len(seams))})
                logger.info("Clip %s: %d seams, seam flicker %.6f (%s)", clip_id, len(seams), flicker, mode)
            target = Path(args.output) if single else Path(args.output) / clip_id
            write_frames(out, target)
            logger.info("Clip %s: %d frames -> %s", clip_id, out.shape[0], target)
    seam_note = f", mean seam flicker {sum(flickers) / len(flickers):.6f}" if flickers else ""
    print(f"upscaled {len(inputs)} clip(s) -> {args.output}{seam_note}")
    return 0
