import logging
import math
from pathlib import Path

from cli.context import AppContext
from cli.media import write_flows, write_frames
from core.data import make_training_pairs, synthesize_toy_videos
from core.errors import UsageError

logger = logging.getLogger(__name__)


def cmd_synth(args, ctx: AppContext) -> int:
    if not args.output:
        raise UsageError("synth needs --output")
    cfg = ctx.config
    out = Path(args.output)
    videos = synthesize_toy_videos(
        cfg.data_count,
        cfg.data_frames,
        cfg.data_size,
        cfg.motion,
        cfg.seed,
        alignment=math.lcm(cfg.model.pixel_alignment, cfg.degradation.downscale_factor),
    )
    pairs = make_training_pairs(videos, cfg.degradation)
    for video, pair in zip(videos, pairs):
        clip_dir = out / video.video_id
        write_frames(video.frames, clip_dir / "gt")
        write_frames(pair.lq, clip_dir / "lq")
        write_flows(video.flows, clip_dir / "flows")
    logger.info("Wrote %d clips to %s", len(videos), out)
    print(f"synthesized {len(videos)} clips -> {out}")
    return 0
