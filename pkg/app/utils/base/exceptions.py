from __future__ import annotations


class PolicyError(Exception):
    """Base class for failures raised by the policy services."""


class TokenizerError(PolicyError, ValueError):
    pass


class ScheduleError(PolicyError, ValueError):
    pass


class EmptyMaskError(PolicyError, ValueError):
    """Raised when a loss is requested over an empty masked set."""


class ShapeError(PolicyError, ValueError):
    pass


class DecodeConfigError(PolicyError, ValueError):
    pass


class CheckpointError(PolicyError):
    pass


class DatasetError(PolicyError):
    pass


class ConfigError(PolicyError, ValueError):
    pass


class TrainingDivergedError(PolicyError):
    """Raised when a loss or a parameter stops being finite during training."""

    def __init__(self, step: int, detail: str):
        self.step = step
        super().__init__(f"training diverged at step {step}: {detail}")


class CommandError(Exception):
    """Surface error for commands, carrying the process exit code."""

    def __init__(self, exit_code: int, detail: str):
        self.exit_code = exit_code
        self.detail = detail
        super().__init__(detail)
