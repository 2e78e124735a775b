from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from tqdm import tqdm

from app.models.vocab import ACTION_COMPONENTS
from app.models.world import ComponentStats, DatasetSummary, EpisodeRecord
from app.simulation import DEFAULT_HORIZON, run_expert_episode
from app.storage.episodes import sidecar_path, write_episodes, write_json
from app.utils.base import ConfigError
from app.utils.common import derive_seed, file_sha256

logger = logging.getLogger(__name__)


def collect_episodes(
    n_episodes: int,
    seed: int,
    horizon: int = DEFAULT_HORIZON,
    tasks: Optional[Sequence[int]] = None,
    progress: bool = True,
) -> tuple[list[EpisodeRecord], int]:
    """Expert demonstrations for n seeded resets; failed ones are dropped. Returns (episodes, n_failed)."""
    if n_episodes < 1:
        raise ConfigError(f"n_episodes must be at least 1, got {n_episodes}")
    episodes, failed = [], 0
    for index in tqdm(range(n_episodes), desc="episodes", disable=not progress, leave=False):
        episode_seed = derive_seed(seed, "data", index)
        task, observations, actions, done = run_expert_episode(episode_seed, tasks, horizon)
        if not done:
            failed += 1
            logger.warning("Expert failed episode seed=%d task=%d; excluded", episode_seed, task.task_id)
            continue
        episodes.append(EpisodeRecord(
            task_id=task.task_id,
            seed=episode_seed,
            obs=[o.tolist() for o in observations],
            actions=[a.tolist() for a in actions],
            success=True,
        ))
    return episodes, failed


def summarize(episodes: Sequence[EpisodeRecord], n_requested: int, n_failed: int) -> DatasetSummary:
    lengths = np.array([ep.length for ep in episodes], dtype=np.float64)
    actions = np.concatenate([np.asarray(ep.actions) for ep in episodes]) if episodes else np.zeros((0, len(ACTION_COMPONENTS)))
    stats = {}
    for dim, name in enumerate(ACTION_COMPONENTS):
        column = actions[:, dim]
        stats[name] = ComponentStats(
            min=float(column.min()) if column.size else 0.0,
            max=float(column.max()) if column.size else 0.0,
            p1=float(np.percentile(column, 1)) if column.size else 0.0,
            p99=float(np.percentile(column, 99)) if column.size else 0.0,
        )
    return DatasetSummary(
        n_requested=n_requested,
        n_episodes=len(episodes),
        n_failed=n_failed,
        n_steps=int(lengths.sum()),
        length_mean=float(lengths.mean()) if lengths.size else 0.0,
        length_median=float(np.median(lengths)) if lengths.size else 0.0,
        action_stats=stats,
    )


def generate_dataset(
    n_episodes: int,
    seed: int,
    out_path: str | Path,
    horizon: int = DEFAULT_HORIZON,
    tasks: Optional[Sequence[int]] = None,
    config: Optional[dict] = None,
    config_hash: str = "",
    progress: bool = True,
) -> DatasetSummary:
    """Write expert episodes as JSONL plus a `.summary.json` sidecar; same seed gives the same bytes."""
    episodes, failed = collect_episodes(n_episodes, seed, horizon, tasks, progress)
    out_path = write_episodes(out_path, episodes)
    summary = summarize(episodes, n_episodes, failed).model_copy(update={
        "dataset_sha256": file_sha256(out_path),
        "seed": seed,
        "config_hash": config_hash,
        "config": config or {},
    })
    write_json(sidecar_path(out_path, "summary"), summary.to_dict())
    logger.info(
        "Wrote %d episodes (%d failed) to %s, median length %.1f, config %s",
        summary.n_episodes, failed, out_path, summary.length_median, config_hash or "-",
    )
    return summary
