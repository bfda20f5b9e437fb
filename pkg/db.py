import json
import os
import sqlite3
import time
from contextlib import contextmanager
from typing import Dict, Iterable, List, Optional

DB_PATH = os.getenv("DAMVSR_DB_PATH", "data/runs.db")


@contextmanager
def get_conn():
    db_dir = os.path.dirname(DB_PATH)
    if db_dir:
        os.makedirs(db_dir, exist_ok=True)
    conn = sqlite3.connect(DB_PATH)
    conn.row_factory = sqlite3.Row
    try:
        yield conn
        conn.commit()
    finally:
        conn.close()


def _ensure_column(conn: sqlite3.Connection, table: str, col: str, ddl: str) -> None:
    cols = [r["name"] for r in conn.execute(f"PRAGMA table_info({table})").fetchall()]
    if col not in cols:
        conn.execute(f"ALTER TABLE {table} ADD COLUMN {ddl}")


def now_ts() -> int:
    return int(time.time())


def init_db() -> None:
    with get_conn() as conn:
        conn.executescript(
            """
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                command TEXT NOT NULL,
                stage TEXT,
                config_hash TEXT NOT NULL,
                config_json TEXT NOT NULL,
                seed INTEGER NOT NULL DEFAULT 0,
                status TEXT NOT NULL DEFAULT 'running',
                message TEXT,
                started_at INTEGER NOT NULL,
                finished_at INTEGER
            );

            CREATE TABLE IF NOT EXISTS checkpoints (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                stage TEXT NOT NULL,
                path TEXT NOT NULL,
                created_at INTEGER NOT NULL
            );

            CREATE TABLE IF NOT EXISTS losses (
                run_id INTEGER NOT NULL,
                step INTEGER NOT NULL,
                value REAL NOT NULL,
                PRIMARY KEY (run_id, step)
            );

            CREATE TABLE IF NOT EXISTS metrics (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                clip_id TEXT NOT NULL,
                psnr REAL,
                ssim REAL,
                e_warp REAL,
                created_at INTEGER NOT NULL
            );
            """
        )
        _ensure_column(conn, "metrics", "extra_json", "extra_json TEXT")
        _ensure_column(conn, "runs", "warnings", "warnings INTEGER NOT NULL DEFAULT 0")


def start_run(command: str, config: Dict[str, str], config_hash: str, seed: int, stage: Optional[str] = None) -> int:
    with get_conn() as conn:
        cur = conn.execute(
            "INSERT INTO runs(command, stage, config_hash, config_json, seed, started_at) VALUES (?, ?, ?, ?, ?, ?)",
            (command, stage, config_hash, json.dumps(config, sort_keys=True), seed, now_ts()),
        )
        return int(cur.lastrowid)


def finish_run(run_id: int, status: str, message: str = "", warnings: int = 0) -> None:
    with get_conn() as conn:
        conn.execute(
            "UPDATE runs SET status=?, message=?, warnings=?, finished_at=? WHERE id=?",
            (status, message, warnings, now_ts(), run_id),
        )


def record_losses(run_id: int, losses: Iterable[float]) -> int:
    rows = [(run_id, step, float(value)) for step, value in enumerate(losses)]
    with get_conn() as conn:
        conn.executemany("INSERT OR REPLACE INTO losses(run_id, step, value) VALUES (?, ?, ?)", rows)
    return len(rows)


def record_checkpoint(run_id: int, stage: str, path: str) -> None:
    with get_conn() as conn:
        conn.execute(
            "INSERT INTO checkpoints(run_id, stage, path, created_at) VALUES (?, ?, ?, ?)",
            (run_id, stage, path, now_ts()),
        )


def record_metric(run_id: int, clip_id: str, psnr: Optional[float], ssim: Optional[float], e_warp: Optional[float], extra: Optional[Dict[str, float]] = None) -> None:
    with get_conn() as conn:
        conn.execute(
            "INSERT INTO metrics(run_id, clip_id, psnr, ssim, e_warp, extra_json, created_at) VALUES (?, ?, ?, ?, ?, ?, ?)",
            (run_id, clip_id, psnr, ssim, e_warp, json.dumps(extra or {}, sort_keys=True), now_ts()),
        )


def latest_checkpoint(stage: Optional[str] = None) -> Optional[str]:
    """Most recently written checkpoint path that still exists, optionally for one stage."""
    query = "SELECT path FROM checkpoints"
    params: tuple = ()
    if stage:
        query += " WHERE stage=?"
        params = (stage,)
    query += " ORDER BY created_at DESC, id DESC"
    with get_conn() as conn:
        for row in conn.execute(query, params).fetchall():
            if os.path.exists(row["path"]):
                return row["path"]
    return None


def list_runs(limit: int = 20) -> List[sqlite3.Row]:
    with get_conn() as conn:
        return conn.execute(
            """
            SELECT r.*, (SELECT COUNT(*) FROM losses l WHERE l.run_id = r.id) AS loss_count,
                   (SELECT l.value FROM losses l WHERE l.run_id = r.id ORDER BY l.step DESC LIMIT 1) AS last_loss
            FROM runs r ORDER BY r.id DESC LIMIT ?
            """,
            (limit,),
        ).fetchall()


def loss_curve(run_id: int) -> List[float]:
    with get_conn() as conn:
        rows = conn.execute("SELECT value FROM losses WHERE run_id=? ORDER BY step", (run_id,)).fetchall()
    return [float(r["value"]) for r in rows]
