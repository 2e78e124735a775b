from __future__ import annotations

import numpy as np
from pydantic import Field, model_validator

from app.models.base import ArrayRecord, BaseRecord
from app.utils.base import HeadMode


class PredictorConfig(BaseRecord):
    """Shape of the mask predictor.

    Fields:
    - embed_dim/layers/heads/mlp_ratio: transformer size
    - max_seq_len: positional table length
    - vocab_in: embeddable ids (V + V_a + mask)
    - classes_out: head width (V_a when localized, V + V_a for the full-vocabulary baseline)
    - cond_dim: observation width
    - n_tasks: task-embedding rows
    - head: localized or full_vocab
    """
    embed_dim: int = Field(default=128, gt=0)
    layers: int = Field(default=4, ge=1)
    heads: int = Field(default=4, ge=1)
    mlp_ratio: int = Field(default=4, ge=1)
    max_seq_len: int = Field(default=64, gt=0)
    vocab_in: int = Field(gt=0)
    classes_out: int = Field(gt=0)
    cond_dim: int = Field(gt=0)
    n_tasks: int = Field(gt=0)
    head: HeadMode = HeadMode.LOCALIZED
    init_std: float = Field(default=0.02, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "PredictorConfig":
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        return self


class ConditioningInput(ArrayRecord):
    """Observation vector plus task id for one decode or training sample."""
    observation: np.ndarray
    task_id: int = Field(ge=0)

    @model_validator(mode="after")
    def _check(self) -> "ConditioningInput":
        obs = np.asarray(self.observation, dtype=np.float64)
        if obs.ndim != 1:
            raise ValueError(f"observation must be 1-D, got shape {obs.shape}")
        obs.setflags(write=False)
        object.__setattr__(self, "observation", obs)
        return self
