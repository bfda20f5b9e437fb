"""Checkpoint container: safetensors parameters plus a JSON manifest in the header."""
import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Tuple

import torch
from safetensors import safe_open
from safetensors.torch import load_file, save_file

from core.errors import ContractError
from core.models import ModelConfig
from core.network import ModelBundle

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def new_manifest(cfg: ModelConfig, seed: int) -> Dict[str, Any]:
    return {"format": FORMAT_VERSION, "config": asdict(cfg), "seed": int(seed), "stages": []}


def record_stage(manifest: Dict[str, Any], stage: str, **details: Any) -> Dict[str, Any]:
    out = json.loads(json.dumps(manifest))
    out["stages"].append({"stage": stage, **details})
    return out


def completed_stages(manifest: Dict[str, Any]):
    return [entry["stage"] for entry in manifest.get("stages", [])]


def config_from_manifest(manifest: Dict[str, Any]) -> ModelConfig:
    values = dict(manifest["config"])
    values["resolutions"] = tuple(values["resolutions"])
    return ModelConfig(**values)


def save_checkpoint(path, bundle: ModelBundle, manifest: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {name: t.detach().to("cpu").contiguous() for name, t in bundle.state_dict().items()}
    save_file(tensors, str(path), metadata={"manifest": json.dumps(manifest, sort_keys=True)})
    logger.info("Checkpoint written: %s (stages: %s)", path, ", ".join(completed_stages(manifest)) or "none")
    return path


def read_manifest(path) -> Dict[str, Any]:
    with safe_open(str(path), framework="pt") as handle:
        metadata = handle.metadata() or {}
    if "manifest" not in metadata:
        raise ContractError(f"{path} is not a checkpoint written by this tool (no manifest)")
    return json.loads(metadata["manifest"])


def load_checkpoint(path, device: str = "cpu") -> Tuple[ModelBundle, Dict[str, Any]]:
    manifest = read_manifest(path)
    if manifest.get("format") != FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint format {manifest.get('format')!r}")
    bundle = ModelBundle(config_from_manifest(manifest))
    state = load_file(str(path), device=device)
    bundle.load_state_dict(state)
    bundle.to(device)
    return bundle, manifest
