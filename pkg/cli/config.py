import hashlib
import os
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from cli.constants import CONFIG_FIELDS, CONFIG_KEYS, DEFAULT_DB_PATH, DEFAULT_LOG_PATH, ENV_PREFIX
from cli.context import RunConfig
from core.errors import UsageError, VsrError
from core.models import STAGES, DegradationConfig, ModelConfig, MotionSpec, SamplerOptions, StageConfig

_KINDS = {key: kind for key, kind, _, _ in CONFIG_FIELDS}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _read_pairs(path: Path) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        raw = line.strip()
        if not raw or raw.startswith("#"):
            continue
        if "=" not in raw:
            raise UsageError(f"{path}:{lineno}: expected KEY=VALUE, got {raw!r}")
        key, value = raw.split("=", 1)
        values[key.strip().upper()] = value.strip()
    return values


def defaults() -> Dict[str, str]:
    return {key: default for key, _, default, _ in CONFIG_FIELDS}


def _check_keys(values: Dict[str, str], origin: str) -> None:
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise UsageError(f"unknown config key(s) in {origin}: {', '.join(unknown)}")


def env_overrides() -> Dict[str, str]:
    out = {}
    for key in CONFIG_KEYS:
        value = os.getenv(ENV_PREFIX + key)
        if value is not None:
            out[key] = value.strip()
    return out


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> Dict[str, str]:
    """Flat string values: defaults < config file < DAMVSR_* environment < overrides."""
    values = defaults()
    if path:
        cfg_path = Path(path)
        if not cfg_path.is_file():
            raise UsageError(f"config file not found: {path}")
        from_file = _read_pairs(cfg_path)
        _check_keys(from_file, str(cfg_path))
        values.update(from_file)
    values.update(env_overrides())
    if overrides:
        clean = {k.upper(): str(v) for k, v in overrides.items() if v is not None}
        _check_keys(clean, "command-line flags")
        values.update(clean)
    for key, raw in values.items():
        parse_value(key, raw)
    return values


def save_config(path, values: Dict[str, str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={values[key]}" for key in sorted(values)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def config_hash(values: Dict[str, str]) -> str:
    text = "\n".join(f"{k}={values[k]}" for k in sorted(values))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def parse_value(key: str, raw: str):
    kind = _KINDS.get(key)
    if kind is None:
        raise UsageError(f"unknown config key {key}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if kind == "optint":
            return int(raw) if raw else None
        if kind == "bool":
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "ints":
            return tuple(int(part) for part in raw.split(",") if part.strip())
        if kind == "range":
            lo, hi = (float(part) for part in raw.split(","))
            return lo, hi
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r} as {kind}") from None
    raise UsageError(f"{key}: unsupported kind {kind}")


def _typed(values: Dict[str, str]) -> Dict[str, object]:
    return {key: parse_value(key, raw) for key, raw in values.items()}


def build_run_config(values: Dict[str, str]) -> RunConfig:
    v = _typed(values)
    model = ModelConfig(
        frames=v["FRAMES"],
        latent_channels=v["LATENT_CHANNELS"],
        base_width=v["BASE_WIDTH"],
        num_heads=v["NUM_HEADS"],
        latent_downscale=v["LATENT_DOWNSCALE"],
        ref_embed_dim=v["REF_EMBED_DIM"],
        resolutions=v["RESOLUTIONS"],
        adapter_rank=v["ADAPTER_RANK"],
    )
    sampler = SamplerOptions(
        steps=v["STEPS"],
        sdedit_strength=v["SDEDIT_STRENGTH"],
        bidirectional=v["BIDIRECTIONAL"],
        tile_size=v["TILE_SIZE"],
        tile_overlap=v["TILE_OVERLAP"],
        decode_feather=v["DECODE_FEATHER"],
        use_vae_adapter=v["VAE_ADAPTER"],
        seed=v["SEED"],
    )
    degradation = DegradationConfig(
        blur_sigma_range=v["BLUR_SIGMA"],
        downscale_factor=v["DOWNSCALE_FACTOR"],
        noise_sigma_range=v["NOISE_SIGMA"],
        quant_levels=v["QUANT_LEVELS"],
        seed=v["SEED"],
    )
    stages = {
        stage: StageConfig(
            stage=stage,
            iterations=v["TRAIN_ITERATIONS"],
            learning_rate=v["LEARNING_RATE"],
            batch_size=v["BATCH_SIZE"],
            perceptual_weight=v["PERCEPTUAL_WEIGHT"],
            gan_weight=v["GAN_WEIGHT"],
            sample_steps=v["STAGE3_SAMPLE_STEPS"],
            train_timesteps=v["TRAIN_TIMESTEPS"],
            reference_source=v["REFERENCE_SOURCE"],
            disc_lr_multiplier=v["DISC_LR_MULTIPLIER"],
            collapse_window=v["COLLAPSE_WINDOW"],
            collapse_epsilon=v["COLLAPSE_EPSILON"],
            log_every=v["LOG_EVERY"],
            seed=v["SEED"],
        )
        for stage in STAGES
    }
    motion = MotionSpec(
        kind=v["MOTION"],
        camera_velocity=v["CAMERA_VELOCITY"],
        object_velocity=v["OBJECT_VELOCITY"],
        max_speed=v["MAX_SPEED"],
    )
    cfg = RunConfig(
        model=model,
        sampler=sampler,
        degradation=degradation,
        stages=stages,
        motion=motion,
        seed=v["SEED"],
        train_timesteps=v["TRAIN_TIMESTEPS"],
        data_count=v["DATA_COUNT"],
        data_size=v["DATA_SIZE"],
        data_frames=v["DATA_FRAMES"] or v["FRAMES"],
        enhancer=v["ENHANCER"],
        frame_by_frame=v["FRAME_BY_FRAME"],
        workers=v["WORKERS"],
        checkpoint_dir=v["CHECKPOINT_DIR"],
        values=dict(values),
    )
    try:
        model.validate()
        sampler.validate()
        degradation.validate()
        for stage_cfg in stages.values():
            stage_cfg.validate()
    except VsrError as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    if v["DATA_FRAMES"] < 0 or cfg.data_frames < 2:
        raise UsageError(f"DATA_FRAMES must be 0 (use FRAMES) or >= 2, got {v['DATA_FRAMES']}")
    return cfg


def runtime_paths() -> Tuple[str, str]:
    return os.getenv("DAMVSR_DB_PATH", DEFAULT_DB_PATH), os.getenv("DAMVSR_LOG_PATH", DEFAULT_LOG_PATH)


def schema_lines() -> List[str]:
    width = max(len(key) for key in CONFIG_KEYS)
    return [f"{key:<{width}}  {kind:<6} default={default or '(empty)':<10} {doc}" for key, kind, default, doc in CONFIG_FIELDS]
