class VsrError(Exception):
    """Base class for every error raised by the pipeline."""

    module = "core"


class ContractError(VsrError, ValueError):
    module = "contract"


class RangeError(VsrError, ValueError):
    module = "range"


class StructureError(VsrError):
    module = "structure"


class UsageError(VsrError, ValueError):
    module = "usage"


class TrainingDivergedError(VsrError, RuntimeError):
    module = "training"

    def __init__(self, stage: str, step: int, recent_losses):
        self.stage = stage
        self.step = step
        self.recent_losses = list(recent_losses)
        tail = ", ".join(f"{v:.5g}" for v in self.recent_losses[-5:])
        super().__init__(f"stage {stage} diverged at step {step}; last losses: [{tail}]")


class EnhancerError(VsrError, RuntimeError):
    module = "enhancer"

    def __init__(self, name: str, message: str):
        self.name = name
        super().__init__(f"enhancer '{name}' failed: {message}")


class PipelineError(VsrError, RuntimeError):
    """Wraps a lower-level failure with the clip/tile it happened in."""

    def __init__(self, module: str, context: str, cause: BaseException):
        self.module = module
        self.context = context
        super().__init__(f"{context}: {cause}")


def require_same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ContractError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
