"""Subprocess adapters: external reference enhancers and external metrics.

Commands are templates. An enhancer command gets ``{input}`` and ``{output}``
PNG paths and must write the enhanced frame to ``{output}`` and exit 0. A
metric command gets ``{frames}`` (a frame directory) and must print a number
as the last token on stdout.
"""
import logging
import os
import shlex
import subprocess
import tempfile
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from PIL import Image

from core.enhancer import ReferenceEnhancer
from core.errors import EnhancerError, PipelineError

logger = logging.getLogger(__name__)

COMMAND_TIMEOUT = float(os.getenv("DAMVSR_EXTERNAL_TIMEOUT", "300"))
COMMAND_RETRIES = int(os.getenv("DAMVSR_EXTERNAL_RETRIES", "1"))
RETRY_BACKOFF = float(os.getenv("DAMVSR_EXTERNAL_BACKOFF", "0.5"))


def _render(template: str, **paths: str) -> List[str]:
    missing = [name for name in paths if "{" + name + "}" not in template]
    if missing:
        raise ValueError(f"command template lacks placeholder(s): {', '.join('{' + m + '}' for m in missing)}")
    return shlex.split(template.format(**{k: shlex.quote(v) for k, v in paths.items()}))


def run_command(argv: List[str], timeout: Optional[float] = None) -> subprocess.CompletedProcess:
    """Run with retries; the last failure is re-raised as RuntimeError."""
    timeout = COMMAND_TIMEOUT if timeout is None else timeout
    last_error = ""
    for attempt in range(COMMAND_RETRIES + 1):
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout, check=False)
        except FileNotFoundError as exc:
            raise RuntimeError(f"command not found: {argv[0]}") from exc
        except subprocess.TimeoutExpired:
            last_error = f"timed out after {timeout:.0f}s"
        else:
            if proc.returncode == 0:
                return proc
            last_error = f"exit code {proc.returncode}: {proc.stderr.strip()[-500:]}"
        logger.warning("External command %s failed (attempt %d): %s", argv[0], attempt + 1, last_error)
        if attempt < COMMAND_RETRIES:
            time.sleep(RETRY_BACKOFF * (2**attempt))
    raise RuntimeError(last_error)


def _save_png(frame: torch.Tensor, path: Path) -> None:
    array = (frame.detach().to("cpu", torch.float32).clamp(0, 1) * 255).round().to(torch.uint8)
    Image.fromarray(array.permute(1, 2, 0).numpy()).save(path, format="PNG")


def _load_png(path: Path) -> torch.Tensor:
    array = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(array).permute(2, 0, 1).contiguous()


class ExternalEnhancer(ReferenceEnhancer):
    """Runs an external single-image SR program once per frame."""

    name = "external"

    def __init__(self, command: str, target_scale: int, timeout: Optional[float] = None):
        super().__init__(target_scale)
        if not command.strip():
            raise EnhancerError(self.name, "empty command")
        self.command = command
        self.timeout = timeout

    def _enhance(self, frames, index):
        outputs = []
        with tempfile.TemporaryDirectory(prefix="damvsr-enh-") as tmp:
            for i, frame in enumerate(frames):
                src, dst = Path(tmp) / f"in_{i}.png", Path(tmp) / f"out_{i}.png"
                _save_png(frame, src)
                try:
                    argv = _render(self.command, input=str(src), output=str(dst))
                    run_command(argv, self.timeout)
                except (ValueError, RuntimeError) as exc:
                    raise EnhancerError(self.name, f"{self.command!r}: {exc}") from exc
                if not dst.is_file():
                    raise EnhancerError(self.name, f"{self.command!r} exited 0 but wrote no output frame")
                outputs.append(_load_png(dst))
        logger.debug("External enhancer produced %d frame(s) for index %s", len(outputs), index)
        return torch.stack(outputs).to(frames.dtype)


def external_metric(command: str, frames_dir: Path, timeout: Optional[float] = None) -> float:
    try:
        proc = run_command(_render(command, frames=str(frames_dir)), timeout)
        tokens = proc.stdout.split()
        if not tokens:
            raise RuntimeError("printed nothing")
        return float(tokens[-1])
    except (ValueError, RuntimeError) as exc:
        raise PipelineError("metrics", f"external metric on {frames_dir}", exc) from exc
