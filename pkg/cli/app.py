import argparse
import logging
import sys
from typing import Dict, List, Optional

import db
from cli.config import build_run_config, config_hash, load_config, runtime_paths
from cli.constants import ENHANCER_CHOICES
from cli.context import AppContext
from cli.utils import progress_enabled, setup_logging
from core.errors import UsageError, VsrError

logger = logging.getLogger("damvsr")

# argparse dest -> config key
FLAG_KEYS = {
    "seed": "SEED",
    "steps": "STEPS",
    "sdedit_strength": "SDEDIT_STRENGTH",
    "bidirectional": "BIDIRECTIONAL",
    "tile_size": "TILE_SIZE",
    "tile_overlap": "TILE_OVERLAP",
    "enhancer": "ENHANCER",
    "vae_adapter": "VAE_ADAPTER",
    "frame_by_frame": "FRAME_BY_FRAME",
    "workers": "WORKERS",
    "iterations": "TRAIN_ITERATIONS",
    "learning_rate": "LEARNING_RATE",
    "batch_size": "BATCH_SIZE",
    "reference_source": "REFERENCE_SOURCE",
    "count": "DATA_COUNT",
    "frames": "DATA_FRAMES",
    "size": "DATA_SIZE",
    "motion": "MOTION",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="damvsr", description="Keyframe-conditioned video super-resolution at desk scale.")
    parser.add_argument("--config", help="KEY=VALUE config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthesize toy GT/LQ/flow clips")
    synth.add_argument("--output", required=True)
    synth.add_argument("--count", type=int)
    synth.add_argument("--frames", type=int)
    synth.add_argument("--size", type=int)
    synth.add_argument("--motion", choices=["static", "translate", "random"])

    train = sub.add_parser("train", help="run one training stage")
    train.add_argument("--stage", required=True, choices=["vae", "base", "sr", "1", "2", "3"])
    train.add_argument("--data", required=True)
    train.add_argument("--checkpoint", help="input checkpoint (default: latest in the run ledger)")
    train.add_argument("--output", help="output checkpoint path")
    train.add_argument("--iterations", type=int)
    train.add_argument("--learning-rate", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--reference-source", choices=["gt", "lq"])

    upscale = sub.add_parser("upscale", help="super-resolve LQ frame directories")
    upscale.add_argument("--input", required=True)
    upscale.add_argument("--output", required=True)
    upscale.add_argument("--checkpoint")
    upscale.add_argument("--gt", help="ground-truth frames (for --enhancer oracle)")
    upscale.add_argument("--long", action="store_true", help="plan shared-keyframe clips even when frames <= k (automatic when frames > k)")
    upscale.add_argument("--independent", action="store_true", help="baseline: disjoint clips, each from its own enhanced first frame")
    direction = upscale.add_mutually_exclusive_group()
    direction.add_argument("--bidirectional", dest="bidirectional", action="store_const", const="true")
    direction.add_argument("--unidirectional", dest="bidirectional", action="store_const", const="false")
    upscale.add_argument("--enhancer", help=" | ".join(ENHANCER_CHOICES))
    upscale.add_argument("--tile-size", type=int)
    upscale.add_argument("--tile-overlap", type=int)
    upscale.add_argument("--steps", type=int)
    upscale.add_argument("--sdedit-strength", type=float)
    upscale.add_argument("--no-vae-adapter", dest="vae_adapter", action="store_const", const="false")
    upscale.add_argument("--frame-by-frame", dest="frame_by_frame", action="store_const", const="true")
    upscale.add_argument("--workers", type=int)

    evaluate = sub.add_parser("eval", help="PSNR / SSIM / E_warp report")
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--flows")
    evaluate.add_argument("--report", required=True)
    evaluate.add_argument("--external-metric", help="command template with {frames}; last stdout token is the score")

    config = sub.add_parser("config", help="show the schema or emit the effective config")
    config.add_argument("--show", action="store_true")
    config.add_argument("--emit")

    runs = sub.add_parser("runs", help="list recent runs from the ledger")
    runs.add_argument("--limit", type=int, default=20)
    runs.add_argument("--losses", type=int, metavar="RUN_ID", help="print the loss curve of one run")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    out = {}
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            out[key] = str(value)
    return out


def _handlers():
    from cli.handlers.evaluate import cmd_eval
    from cli.handlers.ledger import cmd_runs
    from cli.handlers.settings import cmd_config
    from cli.handlers.synth import cmd_synth
    from cli.handlers.train import cmd_train
    from cli.handlers.upscale import cmd_upscale

    return {
        "synth": cmd_synth,
        "train": cmd_train,
        "upscale": cmd_upscale,
        "eval": cmd_eval,
        "config": cmd_config,
        "runs": cmd_runs,
    }


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    db_path, log_path = runtime_paths()
    setup_logging(log_path, args.verbose)
    try:
        values = load_config(args.config, _overrides(args))
        run_cfg = build_run_config(values)
        db.DB_PATH = db_path
        db.init_db()
        ctx = AppContext(
            config=run_cfg,
            config_hash=config_hash(values),
            db_path=db_path,
            log_path=log_path,
            progress=progress_enabled(),
        )
        return _handlers()[args.command](args, ctx)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (VsrError, RuntimeError) as exc:
        module = getattr(exc, "module", "runtime")
        logger.error("[%s] %s", module, exc)
        print(f"[{module}] {exc}", file=sys.stderr)
        return 1
