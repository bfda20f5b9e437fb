import logging
from pathlib import Path

import db
from cli.context import AppContext
from cli.handlers.common import ledger_run, load_bundle, load_pairs
from cli.utils import require_dir
from core.checkpoint import record_stage, save_checkpoint
from core.errors import UsageError
from core.models import STAGES
from core.training import train_stage

logger = logging.getLogger(__name__)


def cmd_train(args, ctx: AppContext) -> int:
    stage = str(args.stage)
    if stage not in STAGES:
        raise UsageError(f"--stage must be one of {', '.join(STAGES)}")
    data_dir = require_dir(args.data, "training data")
    cfg = ctx.config
    stage_cfg = cfg.stages[stage]
    pairs = load_pairs(data_dir, cfg.model.frames)

    with ledger_run(ctx, "train", stage) as run_id:
        bundle, manifest = load_bundle(ctx, args.checkpoint, allow_new=True)
        result = train_stage(stage, pairs, bundle, stage_cfg, cfg.degradation.downscale_factor, ctx.progress)
        manifest = record_stage(
            manifest,
            stage,
            iterations=stage_cfg.iterations,
            final_loss=result.losses[-1] if result.losses else None,
            reference_source=stage_cfg.reference_source,
            config_hash=ctx.config_hash,
        )
        out = Path(args.output) if args.output else Path(cfg.checkpoint_dir) / f"stage-{stage}.safetensors"
        save_checkpoint(out, bundle, manifest)
        db.record_losses(run_id, result.losses)
        db.record_checkpoint(run_id, stage, str(out))
        ctx.warnings = len(result.warnings)
        for warning in result.warnings:
            logger.warning("Stage %s: %s", stage, warning)
    print(f"stage {stage}: {len(result.losses)} steps, final loss {result.losses[-1] if result.losses else float('nan'):.5f} -> {out}")
    return 0
