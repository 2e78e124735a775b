from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

from app.models.base import BaseRecord
from app.storage.checkpoint import MAGIC, read_header
from app.storage.episodes import read_json, sidecar_path
from app.utils.base import CheckpointError, DatasetError
from app.utils.common import file_sha256, short_hash


class VerifyResult(BaseRecord):
    path: str
    kind: str
    ok: bool
    config_hash: str = ""
    seed: Optional[int] = None
    detail: str = ""


def _check_config(meta: dict[str, Any]) -> Optional[str]:
    config = meta.get("config")
    embedded = meta.get("config_hash", "")
    if not config:
        return "no embedded config"
    actual = short_hash(config)
    if actual != embedded:
        return f"config hash mismatch: embedded {embedded}, recomputed {actual}"
    return None


def _check_sidecar(path: Path, kind: str, sidecar: Path, digest_key: str) -> VerifyResult:
    meta = read_json(sidecar)
    problems = []
    problem = _check_config(meta)
    if problem:
        problems.append(problem)
    recorded = meta.get(digest_key)
    if recorded is not None and recorded != file_sha256(path):
        problems.append(f"{path.name} content differs from the SHA-256 recorded in {sidecar.name}")
    if kind == "trace":
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if json.loads(line).get("config_hash") != meta.get("config_hash"):
                    problems.append(f"line {line_no} carries a different config hash")
                    break
    return VerifyResult(
        path=str(path),
        kind=kind,
        ok=not problems,
        config_hash=meta.get("config_hash", ""),
        seed=meta.get("seed"),
        detail="; ".join(problems) or "ok",
    )


def verify_artifact(path: str | Path) -> VerifyResult:
    """Re-hash the embedded config of a checkpoint, dataset, trace or report and compare."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"artifact {path} does not exist")
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        try:
            header, _ = read_header(path)
        except CheckpointError as exc:
            return VerifyResult(path=str(path), kind="checkpoint", ok=False, detail=str(exc))
        problem = _check_config({"config": header.config, "config_hash": header.config_hash})
        return VerifyResult(
            path=str(path), kind="checkpoint", ok=problem is None,
            config_hash=header.config_hash, seed=header.seed, detail=problem or "ok",
        )

    candidates = [
        ("dataset", sidecar_path(path, "summary"), "dataset_sha256"),
        ("trace", sidecar_path(path, "meta"), "trace_sha256"),
        ("report", path.with_suffix(".json"), "csv_sha256"),
    ]
    for kind, sidecar, digest_key in candidates:
        if sidecar.exists() and sidecar != path:
            return _check_sidecar(path, kind, sidecar, digest_key)
    raise DatasetError(f"{path} is not a checkpoint and has no provenance sidecar")
