from dataclasses import dataclass, field
from typing import Dict, Optional

from core.models import DegradationConfig, ModelConfig, MotionSpec, SamplerOptions, StageConfig


@dataclass
class RunConfig:
    model: ModelConfig
    sampler: SamplerOptions
    degradation: DegradationConfig
    stages: Dict[str, StageConfig]
    motion: MotionSpec
    seed: int = 0
    train_timesteps: int = 1000
    data_count: int = 16
    data_size: int = 64
    data_frames: int = 14
    enhancer: str = "identity"
    frame_by_frame: bool = False
    workers: int = 1
    checkpoint_dir: str = "checkpoints"
    values: Dict[str, str] = field(default_factory=dict)


@dataclass
class AppContext:
    config: RunConfig
    config_hash: str
    db_path: str
    log_path: str
    progress: bool = False
    run_id: Optional[int] = None
    warnings: int = 0
