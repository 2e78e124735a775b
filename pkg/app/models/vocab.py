from __future__ import annotations

import numpy as np
from pydantic import Field, field_validator, model_validator

from app.models.base import ArrayRecord, BaseRecord

ACTION_DIM = 7
ACTION_COMPONENTS = ("dx", "dy", "dz", "droll", "dpitch", "dyaw", "gripper")
IGNORE_LABEL = -100


class VocabLayout(BaseRecord):
    """Token-id layout of the policy vocabulary.

    Fields:
    - base_vocab_size (int): V, ids [0, V) are ordinary tokens
    - action_vocab_size (int): V_a, number of special action tokens (= bins per dimension)
    - special_token_base (int): first id of the contiguous action block S
    - mask_token_id (int): the [M] token
    - ignore_label (int): loss-masking sentinel
    """
    base_vocab_size: int = 512
    action_vocab_size: int = 32
    special_token_base: int | None = None
    mask_token_id: int | None = None
    ignore_label: int = IGNORE_LABEL

    @model_validator(mode="after")
    def _fill_and_check(self) -> "VocabLayout":
        if self.special_token_base is None:
            object.__setattr__(self, "special_token_base", self.base_vocab_size)
        if self.mask_token_id is None:
            object.__setattr__(self, "mask_token_id", self.special_token_base + self.action_vocab_size)
        if self.action_vocab_size < 1 or self.base_vocab_size < 1:
            raise ValueError("vocabulary sizes must be positive")
        if self.action_vocab_size >= self.base_vocab_size:
            raise ValueError("action vocabulary must be smaller than the base vocabulary")
        if self.special_token_base < self.base_vocab_size:
            raise ValueError("special token block overlaps the base vocabulary")
        if self.special_token_base <= self.mask_token_id < self.special_end:
            raise ValueError("mask token lies inside the special token block")
        if self.mask_token_id < self.base_vocab_size:
            raise ValueError("mask token lies inside the base vocabulary")
        return self

    @property
    def special_end(self) -> int:
        return self.special_token_base + self.action_vocab_size

    @property
    def vocab_in(self) -> int:
        """Number of embeddable ids (base + special block + mask)."""
        return max(self.special_end, self.mask_token_id + 1)

    @property
    def full_head_width(self) -> int:
        return self.base_vocab_size + self.action_vocab_size

    def is_special(self, token_id: int) -> bool:
        return self.special_token_base <= int(token_id) < self.special_end


class ActionVector(BaseRecord):
    """One per-timestep delta action: 3 displacement, 3 rotation, 1 gripper component."""
    dpos: tuple[float, float, float] = (0.0, 0.0, 0.0)
    drot: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gripper: float = 1.0

    @field_validator("gripper")
    @classmethod
    def _gripper_range(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"gripper must lie in [0, 1], got {value}")
        return value

    def as_array(self) -> np.ndarray:
        return np.array([*self.dpos, *self.drot, self.gripper], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "ActionVector":
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != (ACTION_DIM,):
            raise ValueError(f"action must have {ACTION_DIM} components, got shape {arr.shape}")
        return cls(
            dpos=tuple(float(v) for v in arr[:3]),
            drot=tuple(float(v) for v in arr[3:6]),
            gripper=float(min(1.0, max(0.0, arr[6]))),
        )


class BinSpec(ArrayRecord):
    """Uniform per-dimension bins.

    Fields:
    - lo/hi (float[D]): clipping bounds per component
    - bins (int): bins per component (= V_a)
    """
    lo: np.ndarray
    hi: np.ndarray
    bins: int = Field(gt=0)

    @model_validator(mode="after")
    def _check(self) -> "BinSpec":
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (ACTION_DIM,) or hi.shape != (ACTION_DIM,):
            raise ValueError(f"bin bounds must have {ACTION_DIM} entries")
        if not np.all(lo < hi):
            bad = int(np.argmin(hi - lo))
            raise ValueError(f"bin bounds not increasing in dimension {bad}: lo={lo[bad]} hi={hi[bad]}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        return self

    @property
    def width(self) -> np.ndarray:
        return (self.hi - self.lo) / self.bins

    def to_dict(self, fields=None, exclude=None):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "bins": int(self.bins)}

    @classmethod
    def from_dict(cls, data: dict) -> "BinSpec":
        return cls(lo=np.asarray(data["lo"], dtype=np.float64), hi=np.asarray(data["hi"], dtype=np.float64), bins=int(data["bins"]))


class ActionChunk(ArrayRecord):
    """K consecutive timesteps, either as token ids (int K×D) or continuous values (float K×D)."""
    entries: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "ActionChunk":
        if self.entries.ndim != 2 or self.entries.shape[1] != ACTION_DIM:
            raise ValueError(f"chunk must be K×{ACTION_DIM}, got shape {self.entries.shape}")
        return self

    @property
    def horizon(self) -> int:
        return int(self.entries.shape[0])

    @property
    def is_tokens(self) -> bool:
        return np.issubdtype(self.entries.dtype, np.integer)

    def flatten(self) -> np.ndarray:
        """Row-major serialization: timestep-major, component-minor, length K·D."""
        return self.entries.reshape(-1).copy()

    @classmethod
    def from_flat(cls, flat: np.ndarray, horizon: int) -> "ActionChunk":
        flat = np.asarray(flat)
        if flat.size != horizon * ACTION_DIM:
            raise ValueError(f"flat sequence of length {flat.size} does not hold {horizon} actions")
        return cls(entries=flat.reshape(horizon, ACTION_DIM).copy())
