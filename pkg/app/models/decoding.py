from __future__ import annotations

from typing import Optional

import numpy as np
from pydantic import ConfigDict, Field, model_validator

from app.models.base import ArrayRecord, BaseRecord
from app.models.vocab import ActionChunk
from app.utils.base import (
    ActionScoreMode,
    ConfidenceMode,
    DecodeStrategy,
    FocusMode,
    ScheduleShape,
    Selection,
)


class DecodeConfig(BaseRecord):
    """Reverse-sampler settings.

    total_steps is the reverse step count T. For the hierarchical strategy it must equal
    K · iters_per_action; the check runs when a decoder is built for a concrete chunk size.
    """
    total_steps: int = Field(default=10, ge=1)
    schedule: ScheduleShape = ScheduleShape.LINEAR
    iters_per_action: int = Field(default=2, ge=1)
    strategy: DecodeStrategy = DecodeStrategy.HIERARCHICAL
    selection: Selection = Selection.GREEDY
    temperature: float = Field(default=1.0, gt=0)
    seed: int = 0
    focus_mode: FocusMode = FocusMode.CONSECUTIVE
    confidence_mode: ConfidenceMode = ConfidenceMode.PROBABILITY
    action_score_mode: ActionScoreMode = ActionScoreMode.MASKED_ONLY

    model_config = ConfigDict(frozen=True, extra="forbid")


class ConfidenceMatrix(ArrayRecord):
    """Token confidences c[i, j] for K actions × D components."""
    values: np.ndarray
    finalized: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "ConfidenceMatrix":
        if self.values.ndim != 2:
            raise ValueError("confidence values must be K×D")
        if self.finalized.shape != (self.values.shape[0],):
            raise ValueError("finalized flags must have one entry per action")
        return self

    @property
    def action_scores(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def masked_action_scores(self, masked: np.ndarray) -> np.ndarray:
        """Per-action sums restricted to still-masked positions."""
        return np.where(masked, self.values, 0.0).sum(axis=1)


class DecodeStep(BaseRecord):
    step: int
    focus_action: Optional[int] = None
    revealed: list[int]
    remasked: list[int]
    confidence: list[list[float]]
    action_scores: list[float]
    tokens: list[list[int]]
    masked_count: int
    stray_rate: float = 0.0


class DecodeTrace(BaseRecord):
    strategy: DecodeStrategy
    steps: list[DecodeStep] = Field(default_factory=list)

    def jsonl_rows(self, extra: dict | None = None) -> list[dict]:
        rows = []
        for record in self.steps:
            row = record.to_dict()
            row["strategy"] = self.strategy.value
            row.update(extra or {})
            rows.append(row)
        return rows


class DecodeResult(ArrayRecord):
    tokens: np.ndarray
    trace: DecodeTrace

    @property
    def chunk(self) -> ActionChunk:
        return ActionChunk(entries=self.tokens)
