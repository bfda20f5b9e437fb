import logging
import os
import sys
from pathlib import Path
from typing import Optional

from core.errors import UsageError

logger = logging.getLogger("damvsr")


def setup_logging(log_path: str, verbose: bool = False) -> None:
    log_dir = os.path.dirname(log_path)
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s | %(levelname)s | %(message)s",
        handlers=[logging.FileHandler(log_path), logging.StreamHandler()],
        force=True,
    )


def progress_enabled() -> bool:
    if os.getenv("DAMVSR_NO_PROGRESS", "") in {"1", "true", "yes"}:
        return False
    return sys.stderr.isatty()


def require_dir(path: Optional[str], what: str) -> Path:
    if not path:
        raise UsageError(f"missing {what} directory")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} directory not found: {path}")
    return p


def require_file(path: Optional[str], what: str) -> Path:
    if not path:
        raise UsageError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p
