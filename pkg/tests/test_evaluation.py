from types import SimpleNamespace

import numpy as np
import pytest

from app.models.evaluation import RolloutConfig
from app.services.ablation import arms_for, run_ablation, shared_hash
from app.services.evaluation import (
    DiffusionPolicy,
    ExpertPolicy,
    RandomPolicy,
    default_chains,
    eval_chained,
    evaluate,
    rollout,
    summarize_outcomes,
    wilson_interval,
)
from app.services.pipeline import build_model, diffusion_policy, fit_tokenizer, rollout_config
from app.simulation import reset, task_id_for
from app.storage import rows_frame
from app.utils.base import AblationSuite, CheckpointError, ChunkExecution, DecodeStrategy, HeadMode, ObjectColor, TargetKind


class StandStill:
    """Returns a chunk of zero-motion actions and counts its calls."""
    name = "stand-still"

    def __init__(self, horizon: int = 5):
        self.horizon = horizon
        self.calls = 0

    def plan(self, state, obs, task, rng):
        self.calls += 1
        chunk = np.zeros((self.horizon, 7))
        chunk[:, 6] = 1.0
        return chunk


def untrained(config, episodes, progress=True):
    model = build_model(config, fit_tokenizer(config, episodes))
    return SimpleNamespace(state=SimpleNamespace(model=model))


@pytest.fixture
def quick_config(micro_config):
    return micro_config.derive({
        "eval": {"n_trials": 2, "n_chain_trials": 1, "chain_depth": 1},
        "env": {"tasks": [0]},
    })


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.40383, abs=1e-4)
    assert hi == pytest.approx(0.59617, abs=1e-4)
    assert wilson_interval(0, 0) == (0.0, 1.0)
    assert wilson_interval(10, 10)[1] == 1.0
    assert wilson_interval(0, 10)[0] == 0.0


def test_expert_rollout_succeeds_and_is_deterministic():
    config = RolloutConfig(n_trials=24, seed=4)
    first = rollout(ExpertPolicy(), list(range(12)), config, progress=False)
    second = rollout(ExpertPolicy(), list(range(12)), config, progress=False)
    assert all(outcome.success for outcome in first)
    assert [(o.task_id, o.seed, o.success, o.steps) for o in first] == [(o.task_id, o.seed, o.success, o.steps) for o in second]
    assert sorted({o.task_id for o in first}) == list(range(12))


def test_random_policy_is_a_floor():
    outcomes = rollout(RandomPolicy(), list(range(12)), RolloutConfig(n_trials=40), progress=False)
    assert summarize_outcomes("all", outcomes).rate < 0.05


def test_full_chunk_execution_decodes_once_per_chunk():
    policy = StandStill(horizon=5)
    outcomes = rollout(policy, [0], RolloutConfig(n_trials=1, horizon_limit=60), progress=False)
    assert outcomes[0].decode_calls == 12 and not outcomes[0].success
    receding = RolloutConfig(n_trials=1, horizon_limit=60, chunk_execution=ChunkExecution.FIRST_M, m=2)
    assert rollout(StandStill(horizon=5), [0], receding, progress=False)[0].decode_calls == 30
    with pytest.raises(ValueError):
        RolloutConfig(chunk_execution=ChunkExecution.FIRST_M, m=6).executed_per_chunk(5)


def test_default_chains_put_blocks_in_the_bowl():
    chains = default_chains(2)
    assert len(chains) == 12
    bowl = {task_id_for(color, TargetKind.BOWL) for color in ObjectColor}
    assert all(len(chain) == 2 and set(chain) <= bowl and chain[0] != chain[1] for chain in chains)


def test_expert_completes_depth_two_chains():
    result = eval_chained(ExpertPolicy(), default_chains(2), 12, RolloutConfig(seed=1), progress=False)
    assert result.avg_len == 2.0
    assert result.histogram == [0, 0, 12]


def test_single_link_chain_length_equals_success_rate():
    config = RolloutConfig(n_trials=8, seed=2)
    chain = eval_chained(RandomPolicy(), [[1]], 8, config, progress=False)
    assert sum(chain.histogram) == 8
    assert chain.avg_len == chain.histogram[1] / 8


def test_evaluate_reports_tasks_then_overall():
    report = evaluate(ExpertPolicy(), RolloutConfig(n_trials=6), [0, 4], chain_depth=2, n_chain_trials=2, progress=False)
    assert [r.task for r in report.tasks] == ["put red block on plate", "put green block in bowl", "all"]
    assert report.tasks[-1].rate == 1.0 and report.tasks[-1].n == 6
    assert report.chain is not None and report.chain.avg_len == 2.0


def test_diffusion_policy_emits_executable_chunks(quick_config, expert_episodes):
    model = build_model(quick_config, fit_tokenizer(quick_config, expert_episodes))
    policy = diffusion_policy(quick_config, model)
    state, task, obs = reset(0, task_id=0)
    chunk = policy.plan(state, obs, task, np.random.default_rng(0))
    assert chunk.shape == (5, 7)
    assert np.all(chunk >= model.bins.lo) and np.all(chunk <= model.bins.hi)
    report = evaluate(policy, rollout_config(quick_config), [0], chain_depth=None, progress=False)
    assert report.tasks[-1].n == 2 and report.tasks[-1].decode_ms_mean > 0


def test_diffusion_policy_requires_bins(quick_config):
    with pytest.raises(CheckpointError):
        DiffusionPolicy(build_model(quick_config), quick_config.decode)


def test_suite_arms(micro_config):
    had = arms_for(AblationSuite.HAD, micro_config)
    assert [arm.name for arm in had] == ["vanilla", "hierarchical"]
    assert all(arm.config.decode.total_steps == 10 for arm in had)
    chunk = arms_for(AblationSuite.CHUNK, micro_config)
    assert [arm.name for arm in chunk] == ["K=3", "K=5", "K=8", "K=10"]
    assert [arm.config.decode.total_steps for arm in chunk] == [6, 10, 16, 20]
    lsc = arms_for(AblationSuite.LSC, micro_config)
    assert [arm.config.model.head for arm in lsc] == [HeadMode.LOCALIZED, HeadMode.FULL_VOCAB]
    assert all(arm.config.decode.strategy is DecodeStrategy.VANILLA and arm.config.decode.total_steps == 10 for arm in lsc)
    for suite, arms in ((AblationSuite.HAD, had), (AblationSuite.CHUNK, chunk), (AblationSuite.LSC, lsc)):
        assert len({shared_hash(arm.config, suite) for arm in arms}) == 1


def test_had_suite_shares_one_model(quick_config, expert_episodes):
    model = untrained(quick_config, expert_episodes).state.model
    result = run_ablation(AblationSuite.HAD, quick_config, [], model, progress=False)
    arms = {row.arm for row in result.rows}
    assert arms == {"vanilla", "hierarchical"}
    assert all(row.status == "ok" for row in result.rows)
    assert result.meta["controlled"] is True
    assert result.meta["best_arm"] in arms
    assert {row.task for row in result.rows} == {"put red block on plate", "all", "chain-1"}


def test_failed_arm_does_not_stop_the_suite(quick_config, expert_episodes):
    def flaky(config, episodes, progress=True):
        if config.model.head is HeadMode.FULL_VOCAB:
            raise RuntimeError("diverged")
        return untrained(config, episodes)

    result = run_ablation(AblationSuite.LSC, quick_config, expert_episodes, progress=False, trainer=flaky)
    failed = [row for row in result.rows if row.status == "failed"]
    assert len(failed) == 1 and failed[0].arm == "full_vocab" and "diverged" in failed[0].error
    assert result.meta["arms"]["full_vocab"]["status"] == "failed"
    assert result.meta["best_arm"] == "localized"
    frame = rows_frame(result.rows)
    assert str(frame["n"].dtype) == "Int64"
    assert frame.loc[frame["arm"] == "full_vocab", "n"].isna().all()
