import logging
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional, Tuple

import torch

import db
from cli.context import AppContext
from cli.media import read_frames, video_dirs
from cli.utils import require_file
from core.checkpoint import load_checkpoint, new_manifest
from core.data import TrainingPair
from core.enhancer import IdentityUpscaler, NetEnhancer, OracleEnhancer, ReferenceEnhancer
from core.errors import UsageError
from core.network import ModelBundle
from external_tools import ExternalEnhancer

logger = logging.getLogger(__name__)


@contextmanager
def ledger_run(ctx: AppContext, command: str, stage: Optional[str] = None):
    run_id = db.start_run(command, ctx.config.values, ctx.config_hash, ctx.config.seed, stage)
    ctx.run_id = run_id
    ctx.warnings = 0
    try:
        yield run_id
    except BaseException as exc:
        db.finish_run(run_id, "failed", str(exc)[:500])
        raise
    else:
        db.finish_run(run_id, "ok", warnings=ctx.warnings)


def resolve_checkpoint(path: Optional[str]) -> Optional[str]:
    if path:
        return str(require_file(path, "checkpoint"))
    return db.latest_checkpoint()


def load_bundle(ctx: AppContext, path: Optional[str], allow_new: bool = False) -> Tuple[ModelBundle, dict]:
    resolved = resolve_checkpoint(path)
    if resolved is None:
        if not allow_new:
            raise UsageError("no checkpoint given and none recorded in the run ledger; run `train` first")
        logger.info("No checkpoint found, building a fresh model (seed %d)", ctx.config.seed)
        return ModelBundle.build(ctx.config.model, ctx.config.seed), new_manifest(ctx.config.model, ctx.config.seed)
    bundle, manifest = load_checkpoint(resolved)
    if manifest["config"] != new_manifest(ctx.config.model, 0)["config"]:
        logger.warning("Checkpoint %s was built with a different model config; using the checkpoint's", resolved)
    logger.info("Loaded checkpoint %s", resolved)
    return bundle, manifest


def load_pairs(data_dir: Path, frames: int) -> List[TrainingPair]:
    gts = video_dirs(data_dir, "gt")
    lqs = video_dirs(data_dir, "lq")
    pairs = []
    for clip_id, gt_dir in gts.items():
        if clip_id not in lqs or lqs[clip_id] == gt_dir:
            raise UsageError(f"clip {clip_id} has no lq frames under {data_dir}")
        gt, lq = read_frames(gt_dir), read_frames(lqs[clip_id])
        if gt.shape[0] < frames or lq.shape[0] < frames:
            raise UsageError(f"clip {clip_id} has fewer than {frames} frames")
        pairs.append(TrainingPair(gt[:frames], lq[:frames]))
    logger.info("Loaded %d training clips from %s", len(pairs), data_dir)
    return pairs


def make_enhancer(name: str, scale: int, bundle: ModelBundle, gt: Optional[torch.Tensor] = None) -> ReferenceEnhancer:
    if name == "identity":
        return IdentityUpscaler(scale)
    if name == "net":
        return NetEnhancer(bundle.sr_net, scale)
    if name == "oracle":
        if gt is None:
            raise UsageError("--enhancer oracle needs --gt with ground-truth frames")
        return OracleEnhancer(gt, scale)
    if name.startswith("external:"):
        return ExternalEnhancer(name[len("external:"):], scale)
    raise UsageError(f"unknown enhancer {name!r}; expected identity, oracle, net or external:<command>")
