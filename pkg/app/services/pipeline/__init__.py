"""Glue between a RunConfig and the services: tokenizer fitting, model building, training, policies."""
from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from app.models.evaluation import RolloutConfig
from app.models.vocab import BinSpec, VocabLayout
from app.models.world import EpisodeRecord
from app.services.evaluation import DiffusionPolicy
from app.services.predictor import (
    ModelState,
    PolicyModel,
    TrainResult,
    build_policy_model,
    build_training_arrays,
    new_state,
    split_episodes,
    train,
)
from app.services.tokenizer import fit_bins
from app.simulation import OBS_DIM, task_words
from app.utils.base import DatasetError
from app.utils.config import RunConfig

logger = logging.getLogger(__name__)


def vocab_layout(config: RunConfig) -> VocabLayout:
    return VocabLayout(
        base_vocab_size=config.tokenizer.base_vocab_size,
        action_vocab_size=config.tokenizer.action_vocab_size,
    )


def fit_tokenizer(config: RunConfig, episodes: Sequence[EpisodeRecord]) -> BinSpec:
    if not episodes:
        raise DatasetError("cannot fit bins without episodes")
    actions = np.concatenate([np.asarray(ep.actions, dtype=np.float64) for ep in episodes if ep.actions])
    return fit_bins(actions, config.tokenizer.action_vocab_size, config.tokenizer.clip_percentile)


def build_model(config: RunConfig, bins: Optional[BinSpec] = None, dtype=np.float32) -> PolicyModel:
    section = config.model
    return build_policy_model(
        layout=vocab_layout(config),
        chunk_size=config.tokenizer.chunk_size,
        prompt_len=section.prompt_len,
        task_words=task_words(),
        cond_dim=OBS_DIM,
        embed_dim=section.embed_dim,
        layers=section.layers,
        heads=section.heads,
        mlp_ratio=section.mlp_ratio,
        head=section.head,
        init_std=section.init_std,
        bins=bins,
        seed=config.seed,
        dtype=dtype,
    )


def train_policy(
    config: RunConfig,
    episodes: Sequence[EpisodeRecord],
    state: Optional[ModelState] = None,
    on_checkpoint: Optional[Callable[[ModelState, Optional[float]], None]] = None,
    progress: bool = True,
) -> TrainResult:
    """Fit bins on the training split, build (or continue) the model and train it."""
    train_eps, held_eps = split_episodes(list(episodes), config.train.eval_fraction, config.seed)
    if state is None:
        bins = fit_tokenizer(config, train_eps)
        state = new_state(build_model(config, bins), config.train)
    model = state.model
    arrays = build_training_arrays(train_eps, model, model.bins)
    held = build_training_arrays(held_eps, model, model.bins) if held_eps else None
    logger.info(
        "Training %s head, K=%d on %d episodes (%d held out)",
        model.head.value, model.chunk_size, len(train_eps), len(held_eps),
    )
    return train(state, arrays, config.train, config.diffusion, config.seed, held, on_checkpoint, progress)


def rollout_config(config: RunConfig) -> RolloutConfig:
    section = config.eval
    return RolloutConfig(
        n_trials=section.n_trials,
        chunk_execution=section.chunk_execution,
        m=section.m,
        horizon_limit=section.horizon_limit,
        seed=config.seed,
    )


def diffusion_policy(config: RunConfig, model: PolicyModel, name: Optional[str] = None) -> DiffusionPolicy:
    return DiffusionPolicy(model, config.decode, name)
