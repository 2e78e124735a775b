from __future__ import annotations

import itertools
import logging
import math
import time
from typing import Optional, Protocol, Sequence

import numpy as np
from tqdm import tqdm

from app.models.decoding import DecodeConfig
from app.models.evaluation import ChainResult, EvalReport, RolloutConfig, TaskResult, TrialOutcome
from app.models.predictor import ConditioningInput
from app.models.world import TaskSpec, WorldState
from app.services.decoder import build_decoder
from app.services.predictor.model import PolicyModel
from app.services.tokenizer import detokenize_chunk
from app.simulation import (
    OBS_DIM,
    POS_CLIP,
    ROT_CLIP,
    TASKS,
    reset,
    scripted_expert,
    step,
    success,
    task_by_id,
    task_id_for,
    with_task,
)
from app.utils.base import CheckpointError, ConfigError, ObjectColor, TargetKind
from app.utils.common import derive_seed, make_rng

logger = logging.getLogger(__name__)


class Policy(Protocol):
    name: str

    def plan(self, state: WorldState, obs: np.ndarray, task: TaskSpec, rng: np.random.Generator) -> np.ndarray:
        """Next actions to execute, shape (k, 7)."""


class ExpertPolicy:
    """The scripted expert run closed loop, one action per call."""
    name = "expert"

    def plan(self, state, obs, task, rng):
        return scripted_expert(state, task).as_array()[None, :]


class RandomPolicy:
    """Uniform deltas inside the clip bounds and a uniform gripper command."""
    name = "random"

    def plan(self, state, obs, task, rng):
        limits = np.array([POS_CLIP] * 3 + [ROT_CLIP] * 3)
        action = np.concatenate([rng.uniform(-limits, limits), [rng.random()]])
        return action[None, :]


class DiffusionPolicy:
    """Decodes one action chunk per call and maps its tokens back to bin centers."""

    def __init__(self, model: PolicyModel, decode_config: DecodeConfig, name: Optional[str] = None):
        if model.bins is None:
            raise CheckpointError("model carries no bin spec; it cannot be executed")
        if model.bins.bins != model.layout.action_vocab_size:
            raise CheckpointError(
                f"bin spec has {model.bins.bins} bins but the vocabulary has {model.layout.action_vocab_size} action tokens"
            )
        config = model.predictor.config
        if config.cond_dim != OBS_DIM or config.n_tasks != len(TASKS):
            raise CheckpointError(
                f"model expects observations of width {config.cond_dim} and {config.n_tasks} tasks; "
                f"the environment has {OBS_DIM} and {len(TASKS)}"
            )
        self.model = model
        self.decoder = build_decoder(decode_config, model.chunk_size)
        self.name = name or decode_config.strategy.value

    def plan(self, state, obs, task, rng):
        cond = ConditioningInput(observation=obs, task_id=task.task_id)
        result = self.decoder.decode(cond, self.model, rng)
        return detokenize_chunk(result.chunk, self.model.bins, self.model.layout).entries


def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a Bernoulli rate."""
    if total <= 0:
        return (0.0, 1.0)
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2.0 * total)) / denom
    margin = z * math.sqrt(p * (1.0 - p) / total + z2 / (4.0 * total * total)) / denom
    return (max(0.0, center - margin), min(1.0, center + margin))


def _run_link(
    policy: Policy,
    state: WorldState,
    obs: np.ndarray,
    task: TaskSpec,
    config: RolloutConfig,
    rng: np.random.Generator,
) -> tuple[WorldState, np.ndarray, bool, int, int, float]:
    """Observe, plan, execute until success or the horizon. Returns (state, obs, success, steps, calls, decode ms)."""
    steps, calls, elapsed = 0, 0, 0.0
    done = success(state, task)
    while not done and steps < config.horizon_limit:
        start = time.perf_counter()
        chunk = policy.plan(state, obs, task, rng)
        elapsed += (time.perf_counter() - start) * 1000.0
        calls += 1
        for action in chunk[:config.executed_per_chunk(len(chunk))]:
            state, obs = step(state, action)
            steps += 1
            done = success(state, task)
            if done or steps >= config.horizon_limit:
                break
    return state, obs, done, steps, calls, elapsed


def run_trial(policy: Policy, task: TaskSpec, seed: int, config: RolloutConfig) -> TrialOutcome:
    state, task, obs = reset(seed, task_id=task.task_id)
    _, _, done, steps, calls, elapsed = _run_link(policy, state, obs, task, config, make_rng(seed, "policy"))
    return TrialOutcome(
        task_id=task.task_id,
        seed=seed,
        success=done,
        steps=steps,
        decode_calls=calls,
        decode_ms=elapsed / calls if calls else 0.0,
    )


def rollout(
    policy: Policy,
    task_ids: Sequence[int],
    config: RolloutConfig,
    progress: bool = True,
) -> list[TrialOutcome]:
    """n_trials closed-loop trials; trial i runs task_ids[i % len(task_ids)] from its own derived seed."""
    if not task_ids:
        raise ConfigError("rollout needs at least one task")
    outcomes = []
    for trial in tqdm(range(config.n_trials), desc=f"eval {policy.name}", disable=not progress, leave=False):
        task = task_by_id(task_ids[trial % len(task_ids)])
        outcomes.append(run_trial(policy, task, derive_seed(config.seed, "eval", trial), config))
    return outcomes


def default_chains(depth: int = 2) -> list[list[int]]:
    """Every ordered choice of distinct blocks, each to be put in the bowl in turn."""
    colors = list(ObjectColor)
    if not 1 <= depth <= len(colors):
        raise ConfigError(f"chain depth must lie in 1..{len(colors)}, got {depth}")
    return [
        [task_id_for(color, TargetKind.BOWL) for color in chain]
        for chain in itertools.permutations(colors, depth)
    ]


def eval_chained(
    policy: Policy,
    chains: Sequence[Sequence[int]],
    n_trials: int,
    config: RolloutConfig,
    progress: bool = True,
) -> ChainResult:
    """Links run in order on one scene; a trial stops at its first failed link."""
    if not chains or any(len(chain) < 1 for chain in chains):
        raise ConfigError("every chain needs at least one task")
    depth = max(len(chain) for chain in chains)
    histogram = [0] * (depth + 1)
    elapsed, calls = 0.0, 0
    for trial in tqdm(range(n_trials), desc=f"chains {policy.name}", disable=not progress, leave=False):
        chain = [task_by_id(task_id) for task_id in chains[trial % len(chains)]]
        seed = derive_seed(config.seed, "chain", trial)
        state, _, obs = reset(seed, task_id=chain[0].task_id)
        rng = make_rng(seed, "policy")
        completed = 0
        for task in chain:
            state, obs = with_task(state, task)
            state, obs, done, _, link_calls, link_ms = _run_link(policy, state, obs, task, config, rng)
            elapsed += link_ms
            calls += link_calls
            if not done:
                break
            completed += 1
        histogram[completed] += 1
    avg_len = sum(k * count for k, count in enumerate(histogram)) / n_trials
    return ChainResult(
        chain_length=depth,
        n=n_trials,
        histogram=histogram,
        avg_len=avg_len,
        decode_ms_mean=elapsed / calls if calls else 0.0,
    )


def summarize_outcomes(label: str, outcomes: Sequence[TrialOutcome]) -> TaskResult:
    n = len(outcomes)
    successes = sum(o.success for o in outcomes)
    lo, hi = wilson_interval(successes, n)
    timed = [o.decode_ms for o in outcomes if o.decode_calls]
    return TaskResult(
        task=label,
        n=n,
        successes=successes,
        rate=successes / n if n else 0.0,
        ci_lo=lo,
        ci_hi=hi,
        decode_ms_mean=float(np.mean(timed)) if timed else 0.0,
    )


def evaluate(
    policy: Policy,
    config: RolloutConfig,
    task_ids: Optional[Sequence[int]] = None,
    chain_depth: Optional[int] = 2,
    n_chain_trials: int = 200,
    config_hash: str = "",
    progress: bool = True,
) -> EvalReport:
    """Per-task and overall success with Wilson intervals, plus the chained-task histogram."""
    task_ids = list(task_ids) if task_ids else [task.task_id for task in TASKS]
    outcomes = rollout(policy, task_ids, config, progress)
    results = []
    for task_id in sorted(set(task_ids)):
        subset = [o for o in outcomes if o.task_id == task_id]
        if subset:
            results.append(summarize_outcomes(task_by_id(task_id).template, subset))
    results.append(summarize_outcomes("all", outcomes))
    chain = None
    if chain_depth:
        chain = eval_chained(policy, default_chains(chain_depth), n_chain_trials, config, progress)
    overall = results[-1]
    logger.info(
        "%s: success %.3f [%.3f, %.3f] over %d trials%s",
        policy.name, overall.rate, overall.ci_lo, overall.ci_hi, overall.n,
        f", chained avg len {chain.avg_len:.3f}" if chain else "",
    )
    return EvalReport(arm=policy.name, tasks=results, chain=chain, config_hash=config_hash)
