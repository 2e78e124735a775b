from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterable

from pydantic import ValidationError

from app.models.world import EpisodeRecord
from app.utils.base import DatasetError

logger = logging.getLogger(__name__)


def sidecar_path(path: str | Path, kind: str) -> Path:
    """`runs/episodes.jsonl` -> `runs/episodes.<kind>.json`."""
    path = Path(path)
    return path.with_name(f"{path.stem}.{kind}.json")


def _dumps(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def write_json(path: str | Path, data: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path} is not valid JSON: {exc}") from exc


def write_episodes(path: str | Path, episodes: Iterable[EpisodeRecord]) -> Path:
    """One episode per line, keys sorted, so equal episodes give byte-identical files."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for episode in episodes:
                fh.write(_dumps(episode.to_dict()) + "\n")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset {path}: {exc}") from exc
    return path


def read_episodes(path: str | Path) -> list[EpisodeRecord]:
    path = Path(path)
    episodes: list[EpisodeRecord] = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    episodes.append(EpisodeRecord(**json.loads(line)))
                except (json.JSONDecodeError, ValidationError, TypeError) as exc:
                    raise DatasetError(f"{path}:{line_no}: malformed episode: {exc}") from exc
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    logger.info("Loaded %d episodes from %s", len(episodes), path)
    return episodes
