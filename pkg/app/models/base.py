from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict


class BaseRecordMixin:
    def _sanitize_value(self, value: Any) -> Any:
        if isinstance(value, BaseModel):
            return value.to_dict() if hasattr(value, "to_dict") else value.model_dump(mode="json")
        if isinstance(value, np.ndarray):
            return value.tolist()
        if isinstance(value, np.generic):
            return value.item()
        if isinstance(value, (list, tuple)):
            return [self._sanitize_value(v) for v in value]
        if isinstance(value, dict):
            return {k: self._sanitize_value(v) for k, v in value.items()}
        if isinstance(value, Enum):
            return value.value
        if isinstance(value, Path):
            return str(value)
        return value

    def to_output(self, fields=None, exclude=None):
        data: dict[str, Any] = {}
        exclude = exclude or []
        fields = fields or type(self).model_fields.keys()

        for field in fields:
            if field in exclude:
                continue
            data[field] = self._sanitize_value(getattr(self, field))
        return data

    def to_dict(self, fields=None, exclude=None):
        return self.to_output(fields=fields, exclude=exclude)


class BaseRecord(BaseModel, BaseRecordMixin):
    """Immutable typed record."""

    model_config = ConfigDict(frozen=True)


class ArrayRecord(BaseModel, BaseRecordMixin):
    """Record that carries numpy arrays; arrays are treated as read-only after construction."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)
