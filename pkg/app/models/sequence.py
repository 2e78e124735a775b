from __future__ import annotations

import numpy as np
from pydantic import Field, model_validator

from app.models.base import ArrayRecord
from app.utils.base import ScheduleShape


class TokenSequence(ArrayRecord):
    """Prompt region [0, prompt_len) followed by the answer region [prompt_len, N).

    Prompt positions are conditioning and never hold the mask token.
    """
    ids: np.ndarray
    prompt_len: int = Field(ge=0)

    @model_validator(mode="after")
    def _check(self) -> "TokenSequence":
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ValueError(f"token sequence must be 1-D, got shape {ids.shape}")
        if self.prompt_len > ids.size:
            raise ValueError(f"prompt_len {self.prompt_len} exceeds sequence length {ids.size}")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        return self

    @property
    def length(self) -> int:
        return int(self.ids.size)

    @property
    def prompt(self) -> np.ndarray:
        return self.ids[: self.prompt_len]

    @property
    def answer(self) -> np.ndarray:
        return self.ids[self.prompt_len:]

    def answer_mask(self, mask_token_id: int) -> np.ndarray:
        return self.answer == mask_token_id

    def with_answer(self, answer: np.ndarray) -> "TokenSequence":
        answer = np.asarray(answer, dtype=np.int64)
        if answer.shape != self.answer.shape:
            raise ValueError(f"answer shape {answer.shape} does not match {self.answer.shape}")
        return TokenSequence(ids=np.concatenate([self.prompt, answer]), prompt_len=self.prompt_len)


class DiffusionSchedule(ArrayRecord):
    """Reverse-process times t_0 = 1 > t_1 > ... > t_T = 0."""
    times: np.ndarray
    shape: ScheduleShape = ScheduleShape.LINEAR

    @model_validator(mode="after")
    def _check(self) -> "DiffusionSchedule":
        times = np.asarray(self.times, dtype=np.float64)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("schedule needs at least two times")
        if times[0] != 1.0 or times[-1] != 0.0:
            raise ValueError(f"schedule must run from 1 to 0, got {times[0]} .. {times[-1]}")
        if not np.all(np.diff(times) < 0):
            raise ValueError("schedule times must be strictly decreasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        return self

    @property
    def steps(self) -> int:
        return int(self.times.size - 1)

    def interval(self, k: int) -> tuple[float, float]:
        """(s, t) for reverse step k, i.e. t = t_k and s = t_{k+1}."""
        return float(self.times[k + 1]), float(self.times[k])

    def reveal_quota(self, k: int, total: int) -> int:
        """Positions revealed cumulatively after reverse step k (0-based): round(total·(1 − t_{k+1})).

        Exact integer arithmetic for the linear shape, half rounds up.
        """
        done = k + 1
        if self.shape is ScheduleShape.LINEAR:
            return (2 * total * done + self.steps) // (2 * self.steps)
        return int(np.floor(total * (1.0 - self.times[done]) + 0.5))
