from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import pandas as pd

from app.models.decoding import DecodeTrace
from app.models.evaluation import AblationRow
from app.storage.episodes import sidecar_path, write_json
from app.utils.base import DatasetError
from app.utils.common import file_sha256

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["suite", "arm", "task", "n", "successes", "rate", "ci_lo", "ci_hi", "avg_len", "decode_ms_mean"]
TIMING_COLUMNS = ["suite", "arm", "task", "decode_ms_mean"]


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise DatasetError(f"cannot write report {path}: {exc}") from exc
    return path


def rows_frame(rows: Sequence[AblationRow]) -> pd.DataFrame:
    """Rows in report column order; failed rows keep blank metrics."""
    frame = pd.DataFrame([row.to_dict(fields=REPORT_COLUMNS) for row in rows], columns=REPORT_COLUMNS)
    return frame.astype({"n": "Int64", "successes": "Int64"})


def timings_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.timings.csv")


def write_eval_report(
    path: str | Path,
    rows: Sequence[AblationRow],
    meta: dict[str, Any],
    include_timings: bool = False,
) -> tuple[Path, Path]:
    """CSV in the report schema plus a JSON mirror with statuses and config hashes.

    Unless include_timings is set, `decode_ms_mean` is blank in both and the wall-clock
    times go to `<stem>.timings.csv`.
    """
    path = Path(path)
    if not include_timings:
        timings = pd.DataFrame([row.to_dict(fields=TIMING_COLUMNS) for row in rows], columns=TIMING_COLUMNS)
        _write_csv(timings, timings_path(path))
        rows = [row.model_copy(update={"decode_ms_mean": None}) for row in rows]
    csv_path = _write_csv(rows_frame(rows), path)
    mirror = dict(meta)
    mirror["rows"] = [row.to_dict() for row in rows]
    mirror["csv_sha256"] = file_sha256(csv_path)
    json_path = write_json(path.with_suffix(".json"), mirror)
    logger.info("Wrote report %s (%d rows)", csv_path, len(rows))
    return csv_path, json_path


def write_loss_curve(path: str | Path, curve: Iterable[tuple[int, float]]) -> Path:
    frame = pd.DataFrame(list(curve), columns=["step", "loss"])
    return _write_csv(frame, Path(path))


def write_trace(path: str | Path, trace: DecodeTrace, meta: dict[str, Any]) -> tuple[Path, Path]:
    """One JSON line per decode step, each tagged with config hash and seed; full config in `.meta.json`."""
    path = Path(path)
    extra = {"config_hash": meta.get("config_hash", ""), "seed": meta.get("seed", 0)}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for row in trace.jsonl_rows(extra):
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    except OSError as exc:
        raise DatasetError(f"cannot write trace {path}: {exc}") from exc
    sidecar = dict(meta)
    sidecar["trace_sha256"] = file_sha256(path)
    sidecar["steps"] = len(trace.steps)
    meta_path = write_json(sidecar_path(path, "meta"), sidecar)
    return path, meta_path
