import logging
from pathlib import Path

import db
from cli.context import AppContext
from cli.handlers.common import ledger_run
from cli.media import flow_dir, read_flows, read_frames, video_dirs
from cli.utils import require_dir
from core.errors import UsageError
from core.metrics import evaluate_video, write_report
from core.models import MetricReport
from external_tools import external_metric

logger = logging.getLogger(__name__)


def cmd_eval(args, ctx: AppContext) -> int:
    preds = video_dirs(require_dir(args.pred, "prediction"), "pred")
    gts = video_dirs(require_dir(args.gt, "ground-truth"), "gt")
    flows_root = require_dir(args.flows, "flow") if args.flows else None
    if not args.report:
        raise UsageError("eval needs --report")
    if len(preds) == 1 and len(gts) == 1:
        pairs = [(next(iter(preds)), next(iter(preds.values())), next(iter(gts.values())))]
    else:
        missing = sorted(set(preds) - set(gts))
        if missing:
            raise UsageError(f"no ground truth for clip(s): {', '.join(missing)}")
        pairs = [(clip_id, preds[clip_id], gts[clip_id]) for clip_id in sorted(preds)]

    videos = []
    with ledger_run(ctx, "eval") as run_id:
        for clip_id, pred_dir, gt_dir in pairs:
            pred, gt = read_frames(pred_dir), read_frames(gt_dir)
            if pred.shape != gt.shape:
                raise UsageError(f"clip {clip_id}: prediction {tuple(pred.shape)} vs ground truth {tuple(gt.shape)}")
            flows = read_flows(flow_dir(flows_root, clip_id)) if flows_root else None
            metrics = evaluate_video(clip_id, pred, gt, flows)
            if args.external_metric:
                metrics.extra["external"] = external_metric(args.external_metric, pred_dir)
            videos.append(metrics)
            db.record_metric(run_id, clip_id, metrics.psnr, metrics.ssim, metrics.e_warp, metrics.extra)
            logger.info("Clip %s: PSNR %.3f SSIM %.4f E_warp %s", clip_id, metrics.psnr, metrics.ssim, metrics.e_warp)
        report = MetricReport(videos, {"config_hash": ctx.config_hash, "pred": str(args.pred), "gt": str(args.gt)})
        write_report(report, Path(args.report))

    agg = report.aggregate()
    e_warp = "n/a" if agg.get("e_warp") is None else f"{agg['e_warp']:.4f}"
    print(f"{len(videos)} clip(s): PSNR {agg['psnr']:.3f} SSIM {agg['ssim']:.4f} E_warp {e_warp} -> {args.report}")
    return 0
