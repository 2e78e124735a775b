"""Checkpoint container.

    magic b"DVLACKPT" | uint32 version | uint64 header length | JSON header | float32 LE blobs

Blobs follow the header's `params` order: all parameters, then first moments, then
second moments (when the header says moments are present).
"""
from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import Field, ValidationError

from app.models.base import BaseRecord
from app.models.predictor import PredictorConfig
from app.models.vocab import BinSpec, VocabLayout
from app.services.predictor.model import MaskPredictor, PolicyModel
from app.utils.base import CheckpointError
from app.utils.common import canonical_json, short_hash

logger = logging.getLogger(__name__)

MAGIC = b"DVLACKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")
_BLOB_DTYPE = np.dtype("<f4")


class ParamEntry(BaseRecord):
    name: str
    shape: list[int]


class CheckpointHeader(BaseRecord):
    config: dict[str, Any]
    config_hash: str
    seed: int
    layout: dict[str, Any]
    bins: Optional[dict[str, Any]] = None
    predictor: dict[str, Any]
    head: str
    chunk_size: int
    prompt_len: int
    task_words: list[list[str]]
    step: int = 0
    epoch: int = 0
    params: list[ParamEntry]
    optimizer: dict[str, Any] = Field(default_factory=dict)
    loss_curve: list[list[float]] = Field(default_factory=list)
    eval_loss: Optional[float] = None


class LoadedCheckpoint:
    def __init__(self, model: PolicyModel, header: CheckpointHeader, m: dict, v: dict):
        self.model = model
        self.header = header
        self.m = m
        self.v = v

    @property
    def has_moments(self) -> bool:
        return bool(self.m)


def save_checkpoint(
    path: str | Path,
    model: PolicyModel,
    config: dict[str, Any],
    seed: int,
    step: int = 0,
    epoch: int = 0,
    moments: Optional[tuple[dict[str, np.ndarray], dict[str, np.ndarray]]] = None,
    optimizer_step: int = 0,
    loss_curve: Optional[list[tuple[int, float]]] = None,
    eval_loss: Optional[float] = None,
) -> Path:
    path = Path(path)
    params = model.predictor.params
    header = CheckpointHeader(
        config=config,
        config_hash=short_hash(config),
        seed=seed,
        layout=model.layout.to_dict(),
        bins=model.bins.to_dict() if model.bins is not None else None,
        predictor=model.predictor.config.to_dict(),
        head=model.head.value,
        chunk_size=model.chunk_size,
        prompt_len=model.prompt_len,
        task_words=[list(words) for words in model.task_words],
        step=step,
        epoch=epoch,
        params=[ParamEntry(name=name, shape=list(value.shape)) for name, value in params.items()],
        optimizer={"step": optimizer_step, "moments": moments is not None},
        loss_curve=[[float(s), float(l)] for s, l in (loss_curve or [])],
        eval_loss=eval_loss,
    )
    header_bytes = canonical_json(header.to_dict()).encode("utf-8")
    blobs = [params]
    if moments is not None:
        blobs.extend(moments)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
            fh.write(header_bytes)
            for group in blobs:
                for name in params:
                    fh.write(np.ascontiguousarray(group[name], dtype=_BLOB_DTYPE).tobytes())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info("Saved checkpoint %s (step %d, config %s)", path, step, header.config_hash)
    return path


def read_header(path: str | Path) -> tuple[CheckpointHeader, int]:
    """Parse the header only; returns it with the byte offset of the first blob."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            preamble = fh.read(_PREAMBLE.size)
            if len(preamble) < _PREAMBLE.size:
                raise CheckpointError(f"{path} is too short to be a checkpoint")
            magic, version, length = _PREAMBLE.unpack(preamble)
            if magic != MAGIC:
                raise CheckpointError(f"{path} is not a checkpoint (magic {magic!r})")
            if version != FORMAT_VERSION:
                raise CheckpointError(f"{path} has format version {version}, expected {FORMAT_VERSION}")
            raw = fh.read(length)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        header = CheckpointHeader(**json.loads(raw.decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as exc:
        raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc
    return header, _PREAMBLE.size + length


def load_checkpoint(path: str | Path, dtype=np.float32) -> LoadedCheckpoint:
    path = Path(path)
    header, offset = read_header(path)
    data = path.read_bytes()[offset:]
    sizes = [int(np.prod(entry.shape)) for entry in header.params]
    groups = 3 if header.optimizer.get("moments") else 1
    expected = sum(sizes) * groups * _BLOB_DTYPE.itemsize
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes of parameters, found {len(data)}")

    flat = np.frombuffer(data, dtype=_BLOB_DTYPE)
    tensors: list[dict[str, np.ndarray]] = []
    cursor = 0
    for _ in range(groups):
        group = {}
        for entry, size in zip(header.params, sizes):
            group[entry.name] = flat[cursor:cursor + size].reshape(entry.shape).astype(dtype)
            cursor += size
        tensors.append(group)

    try:
        config = PredictorConfig(**header.predictor)
        layout = VocabLayout(**header.layout)
        bins = BinSpec.from_dict(header.bins) if header.bins is not None else None
    except (ValidationError, KeyError) as exc:
        raise CheckpointError(f"{path}: header does not describe a valid model: {exc}") from exc
    predictor = MaskPredictor(config, dtype=dtype)
    if set(predictor.params) != set(tensors[0]):
        raise CheckpointError(f"{path}: parameter names do not match the declared architecture")
    for name, value in tensors[0].items():
        if predictor.params[name].shape != value.shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {value.shape}, expected {predictor.params[name].shape}")
    predictor.params = tensors[0]
    model = PolicyModel(predictor, layout, header.chunk_size, header.prompt_len, header.task_words, bins)
    m, v = (tensors[1], tensors[2]) if groups == 3 else ({}, {})
    logger.info("Loaded checkpoint %s (step %d, config %s)", path, header.step, header.config_hash)
    return LoadedCheckpoint(model, header, m, v)
