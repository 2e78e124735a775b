from __future__ import annotations

from typing import Optional

from pydantic import Field, model_validator

from app.models.base import BaseRecord
from app.utils.base import ChunkExecution, ConfigError


class RolloutConfig(BaseRecord):
    n_trials: int = Field(default=200, ge=1)
    chunk_execution: ChunkExecution = ChunkExecution.FULL
    m: int = Field(default=1, ge=1)
    horizon_limit: int = Field(default=60, ge=1)
    seed: int = 0

    def executed_per_chunk(self, horizon: int) -> int:
        if self.chunk_execution is ChunkExecution.FIRST_M:
            if self.m > horizon:
                raise ConfigError(f"m={self.m} exceeds chunk size {horizon}")
            return self.m
        return horizon


class TrialOutcome(BaseRecord):
    task_id: int
    seed: int
    success: bool
    steps: int
    decode_calls: int
    decode_ms: float = 0.0


class TaskResult(BaseRecord):
    """Success statistics for one task (or the aggregate row)."""
    task: str
    n: int
    successes: int
    rate: float
    ci_lo: float
    ci_hi: float
    decode_ms_mean: float = 0.0

    @model_validator(mode="after")
    def _check(self) -> "TaskResult":
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate {self.rate} outside [0, 1]")
        return self


class ChainResult(BaseRecord):
    chain_length: int
    n: int
    histogram: list[int]
    avg_len: float
    decode_ms_mean: float = 0.0

    @model_validator(mode="after")
    def _check(self) -> "ChainResult":
        if sum(self.histogram) != self.n:
            raise ValueError("chain histogram must sum to the number of trials")
        return self


class EvalReport(BaseRecord):
    arm: str
    tasks: list[TaskResult]
    chain: Optional[ChainResult] = None
    config_hash: str = ""


class AblationRow(BaseRecord):
    suite: str
    arm: str
    task: str
    n: Optional[int] = None
    successes: Optional[int] = None
    rate: Optional[float] = None
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None
    avg_len: Optional[float] = None
    decode_ms_mean: Optional[float] = None
    status: str = "ok"
    error: Optional[str] = None
    config_hash: str = ""
