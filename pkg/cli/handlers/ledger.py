from datetime import datetime, timezone

import db
from cli.context import AppContext


def format_ts(ts) -> str:
    if not ts:
        return "-"
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S")


def _print_losses(run_id: int) -> int:
    curve = db.loss_curve(run_id)
    if not curve:
        print(f"no losses recorded for run #{run_id}")
        return 0
    for step, value in enumerate(curve):
        print(f"{step}\t{value:.6f}")
    return 0


def cmd_runs(args, ctx: AppContext) -> int:
    if args.losses is not None:
        return _print_losses(args.losses)
    rows = db.list_runs(args.limit)
    if not rows:
        print("no runs recorded")
        return 0
    for row in rows:
        last = "" if row["last_loss"] is None else f" last_loss={row['last_loss']:.5f}"
        stage = f" stage={row['stage']}" if row["stage"] else ""
        warnings = f" warnings={row['warnings']}" if row["warnings"] else ""
        print(
            f"#{row['id']} {row['command']}{stage} {row['status']} started={format_ts(row['started_at'])}"
            f" config={row['config_hash']}{last}{warnings}"
        )
    return 0
