from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from tqdm import tqdm

from app.models.vocab import ACTION_DIM, IGNORE_LABEL, BinSpec
from app.models.world import EpisodeRecord
from app.services.diffusion import forward_mask_batch, masked_cross_entropy, sample_mask_times
from app.services.predictor.model import PolicyModel
from app.services.predictor.optim import AdamW
from app.services.tokenizer import tokenize_actions
from app.utils.base import DatasetError, LossWeighting, TrainingDivergedError
from app.utils.common import make_rng
from app.utils.config.env import DiffusionSection, TrainSection

logger = logging.getLogger(__name__)


@dataclass
class TrainingArrays:
    """Tokenized training samples: one per (episode, step), chunk padded past the episode end."""
    prompts: np.ndarray
    answers: np.ndarray
    obs: np.ndarray
    task_ids: np.ndarray

    def __len__(self) -> int:
        return int(self.answers.shape[0])

    def subset(self, index: np.ndarray) -> "TrainingArrays":
        return TrainingArrays(self.prompts[index], self.answers[index], self.obs[index], self.task_ids[index])


@dataclass
class ModelState:
    """Parameters (inside the model), optimizer moments and progress counters."""
    model: PolicyModel
    optimizer: AdamW
    step: int = 0
    epoch: int = 0
    loss_curve: list[tuple[int, float]] = field(default_factory=list)


@dataclass
class TrainResult:
    state: ModelState
    final_loss: float
    eval_loss: Optional[float]


def chunk_actions(actions: np.ndarray, start: int, horizon: int) -> np.ndarray:
    """Actions [start, start + horizon), padded with zero-motion steps holding the last gripper value."""
    chunk = actions[start:start + horizon]
    if chunk.shape[0] < horizon:
        pad = np.zeros((horizon - chunk.shape[0], ACTION_DIM))
        pad[:, -1] = actions[-1, -1]
        chunk = np.concatenate([chunk, pad])
    return chunk


def build_training_arrays(episodes: Iterable[EpisodeRecord], model: PolicyModel, bins: BinSpec) -> TrainingArrays:
    prompts, answers, obs, task_ids = [], [], [], []
    for episode in episodes:
        actions = np.asarray(episode.actions, dtype=np.float64)
        if actions.size == 0:
            continue
        observations = np.asarray(episode.obs, dtype=np.float64)
        if observations.shape[0] < actions.shape[0]:
            raise DatasetError(
                f"episode seed={episode.seed} has {observations.shape[0]} observations for {actions.shape[0]} actions"
            )
        prompt = model.prompt(episode.task_id)
        tokens = tokenize_actions(actions, bins, model.layout)
        pad_token = tokenize_actions(chunk_actions(actions, actions.shape[0], 1), bins, model.layout)[0]
        for i in range(actions.shape[0]):
            chunk = tokens[i:i + model.chunk_size]
            if chunk.shape[0] < model.chunk_size:
                chunk = np.concatenate([chunk, np.tile(pad_token, (model.chunk_size - chunk.shape[0], 1))])
            prompts.append(prompt)
            answers.append(chunk.reshape(-1))
            obs.append(observations[i])
            task_ids.append(episode.task_id)
    if not answers:
        raise DatasetError("dataset holds no actions to train on")
    return TrainingArrays(
        prompts=np.stack(prompts),
        answers=np.stack(answers).astype(np.int64),
        obs=np.stack(obs),
        task_ids=np.asarray(task_ids, dtype=np.int64),
    )


def split_episodes(episodes: list[EpisodeRecord], fraction: float, seed: int) -> tuple[list[EpisodeRecord], list[EpisodeRecord]]:
    """Deterministic held-out split; the held-out part is empty when fraction · n < 1."""
    n_eval = int(len(episodes) * fraction)
    if n_eval == 0 or n_eval >= len(episodes):
        return list(episodes), []
    order = make_rng(seed, "split").permutation(len(episodes))
    held = set(order[:n_eval].tolist())
    train = [ep for i, ep in enumerate(episodes) if i not in held]
    evaluation = [ep for i, ep in enumerate(episodes) if i in held]
    return train, evaluation


def mask_batch(
    model: PolicyModel,
    batch: TrainingArrays,
    rng: np.random.Generator,
    t_min: float,
    t: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corrupt a batch; elements left with no mask get a fresh t and fresh draws.

    Returns (input ids, labels over the full sequence, t per element).
    """
    size = len(batch)
    t = sample_mask_times(rng, size, t_min) if t is None else np.asarray(t, dtype=np.float64).copy()
    mask_id = model.layout.mask_token_id
    masked, mask = forward_mask_batch(batch.answers, t, mask_id, rng)
    empty = ~mask.any(axis=1)
    while empty.any():
        rows = np.flatnonzero(empty)
        t[rows] = sample_mask_times(rng, rows.size, t_min)
        masked[rows], mask[rows] = forward_mask_batch(batch.answers[rows], t[rows], mask_id, rng)
        empty = ~mask.any(axis=1)

    answer_labels = np.where(mask, model.labels_for(batch.answers), IGNORE_LABEL)
    prompt_labels = np.full(batch.prompts.shape, IGNORE_LABEL, dtype=np.int64)
    ids = np.concatenate([batch.prompts, masked], axis=1)
    labels = np.concatenate([prompt_labels, answer_labels], axis=1)
    return ids, labels, t


def loss_and_grads(
    model: PolicyModel,
    batch: TrainingArrays,
    rng: np.random.Generator,
    weighting: LossWeighting = LossWeighting.INVERSE_T,
    t_min: float = 0.05,
    t: Optional[np.ndarray] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    if len(batch) == 0:
        raise DatasetError("empty training batch")
    ids, labels, t = mask_batch(model, batch, rng, t_min, t)
    logits = model.predictor.forward(ids, batch.obs, batch.task_ids, keep_cache=True)
    loss, dlogits = masked_cross_entropy(logits, labels, t, weighting)
    return loss, model.predictor.backward(dlogits)


def evaluation_loss(
    model: PolicyModel,
    arrays: TrainingArrays,
    diffusion: DiffusionSection,
    seed: int,
    batch_size: int = 64,
) -> float:
    """Mean masked loss on held-out samples under a fixed mask stream."""
    rng = make_rng(seed, "eval-loss")
    total, count = 0.0, 0
    for start in range(0, len(arrays), batch_size):
        batch = arrays.subset(np.arange(start, min(start + batch_size, len(arrays))))
        ids, labels, t = mask_batch(model, batch, rng, diffusion.t_min)
        logits = model.predictor.predict(ids, batch.obs, batch.task_ids)
        loss, _ = masked_cross_entropy(logits, labels, t, diffusion.loss_weighting)
        total += loss * len(batch)
        count += len(batch)
    return total / count


def new_state(model: PolicyModel, train_cfg: TrainSection) -> ModelState:
    optimizer = AdamW(
        model.predictor.params,
        lr=train_cfg.learning_rate,
        betas=(train_cfg.beta1, train_cfg.beta2),
        weight_decay=train_cfg.weight_decay,
        grad_clip=train_cfg.grad_clip,
    )
    return ModelState(model=model, optimizer=optimizer)


def planned_steps(n_samples: int, train_cfg: TrainSection) -> tuple[int, int]:
    """(steps per epoch, total steps) for the configured epochs and step cap."""
    per_epoch = math.ceil(n_samples / train_cfg.batch_size)
    total = per_epoch * train_cfg.epochs
    if train_cfg.max_steps is not None:
        total = min(total, train_cfg.max_steps)
    return per_epoch, total


def train(
    state: ModelState,
    arrays: TrainingArrays,
    train_cfg: TrainSection,
    diffusion: DiffusionSection,
    seed: int,
    eval_arrays: Optional[TrainingArrays] = None,
    on_checkpoint: Optional[Callable[[ModelState, Optional[float]], None]] = None,
    progress: bool = True,
) -> TrainResult:
    """Run (or continue) training from state.step until the planned step count.

    Batch order and mask draws are keyed by (seed, epoch) and (seed, step), so a run
    resumed from a checkpoint matches an uninterrupted one.
    """
    model = state.model
    predictor = model.predictor
    per_epoch, total = planned_steps(len(arrays), train_cfg)
    size = train_cfg.batch_size
    logger.info("Training on %d samples: %d steps (%d per epoch), resuming at %d", len(arrays), total, per_epoch, state.step)

    order, order_epoch = None, -1
    loss = float("nan")
    bar = tqdm(range(state.step, total), desc="train", disable=not progress, leave=False)
    for step in bar:
        epoch = step // per_epoch
        if epoch != order_epoch:
            order, order_epoch = make_rng(seed, "shuffle", epoch).permutation(len(arrays)), epoch
        position = step % per_epoch
        batch = arrays.subset(order[position * size:(position + 1) * size])

        loss, grads = loss_and_grads(
            model, batch, make_rng(seed, "train", step), diffusion.loss_weighting, diffusion.t_min
        )
        if not math.isfinite(loss):
            raise TrainingDivergedError(step, f"loss is {loss}")
        grad_norm = state.optimizer.step(predictor.params, grads)
        if not predictor.all_finite():
            bad = next(name for name, value in predictor.params.items() if not np.isfinite(value).all())
            raise TrainingDivergedError(step, f"parameter {bad} is not finite (grad norm {grad_norm:.3g})")

        state.step = step + 1
        state.epoch = epoch
        state.loss_curve.append((step, loss))
        bar.set_postfix(loss=f"{loss:.4f}")
        if state.step % train_cfg.log_every == 0:
            logger.info("step %d epoch %d loss %.5f grad_norm %.4f", state.step, epoch, loss, grad_norm)
        if on_checkpoint is not None and state.step % train_cfg.checkpoint_every == 0 and state.step < total:
            held = evaluation_loss(model, eval_arrays, diffusion, seed) if eval_arrays is not None and len(eval_arrays) else None
            if held is not None:
                logger.info("step %d held-out loss %.5f", state.step, held)
            on_checkpoint(state, held)

    eval_loss = None
    if eval_arrays is not None and len(eval_arrays):
        eval_loss = evaluation_loss(model, eval_arrays, diffusion, seed)
        logger.info("Final held-out loss %.5f", eval_loss)
    if on_checkpoint is not None:
        on_checkpoint(state, eval_loss)
    final = state.loss_curve[-1][1] if state.loss_curve else loss
    return TrainResult(state=state, final_loss=final, eval_loss=eval_loss)
