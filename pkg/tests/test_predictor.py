import math

import numpy as np
import pytest

from app.models.predictor import PredictorConfig
from app.models.vocab import VocabLayout
from app.services.diffusion import masked_cross_entropy
from app.services.pipeline import build_model, fit_tokenizer
from app.services.predictor import (
    AdamW,
    MaskPredictor,
    build_policy_model,
    build_training_arrays,
    evaluation_loss,
    loss_and_grads,
    new_state,
    train,
)
from app.simulation import OBS_DIM, task_words
from app.storage import load_checkpoint, save_checkpoint
from app.utils.base import HeadMode, LossWeighting, ShapeError
from app.utils.common import make_rng


def micro_predictor() -> MaskPredictor:
    config = PredictorConfig(
        embed_dim=16, layers=1, heads=2, mlp_ratio=2, max_seq_len=8,
        vocab_in=21, classes_out=4, cond_dim=5, n_tasks=3, init_std=0.3,
    )
    return MaskPredictor(config, seed=0, dtype=np.float64)


def micro_batch():
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 21, size=(2, 8))
    obs = rng.normal(size=(2, 5))
    task_ids = np.array([0, 2])
    labels = np.full((2, 8), -100)
    labels[0, [0, 3, 6]] = [1, 0, 3]
    labels[1, [1, 5, 7]] = [2, 2, 1]
    return ids, obs, task_ids, labels


def test_gradients_match_finite_differences():
    model = micro_predictor()
    ids, obs, task_ids, labels = micro_batch()
    t = np.array([0.5, 0.8])

    def loss_fn() -> float:
        loss, _ = masked_cross_entropy(model.predict(ids, obs, task_ids), labels, t)
        return loss

    logits = model.forward(ids, obs, task_ids, keep_cache=True)
    _, dlogits = masked_cross_entropy(logits, labels, t)
    grads = model.backward(dlogits)

    eps = 1e-5
    for name, param in model.params.items():
        numeric = np.zeros_like(param)
        for index in np.ndindex(*param.shape):
            original = param[index]
            param[index] = original + eps
            up = loss_fn()
            param[index] = original - eps
            down = loss_fn()
            param[index] = original
            numeric[index] = (up - down) / (2 * eps)
        scale = np.linalg.norm(numeric) + np.linalg.norm(grads[name])
        if scale < 1e-10:
            continue
        rel = np.linalg.norm(numeric - grads[name]) / scale
        assert rel < 1e-4, f"{name}: relative error {rel:.2e}"


def test_policy_logits_shape(layout):
    model = build_policy_model(layout, 5, 4, task_words(), OBS_DIM, embed_dim=16, layers=1, heads=2, mlp_ratio=2)
    ids = model.masked_sequence(0).ids
    logits = model.predictor.predict(ids[None, :], np.zeros((1, OBS_DIM)), np.array([0]))
    assert logits.shape == (1, 39, 32)
    assert model.answer_logits(ids, np.zeros(OBS_DIM), 0).shape == (35, 32)


def test_full_vocab_head_width(layout):
    model = build_policy_model(
        layout, 5, 4, task_words(), OBS_DIM, embed_dim=16, layers=1, heads=2, head=HeadMode.FULL_VOCAB,
    )
    assert model.predictor.config.classes_out == 544
    answers = np.full((1, 35), 520)
    np.testing.assert_array_equal(model.labels_for(answers), answers)


def test_inference_is_deterministic(micro_model):
    ids = micro_model.masked_sequence(3).ids
    obs = np.linspace(0.0, 1.0, OBS_DIM)
    first = micro_model.answer_logits(ids, obs, 3)
    second = micro_model.answer_logits(ids, obs, 3)
    np.testing.assert_array_equal(first, second)


def test_masked_positions_are_not_interchangeable(micro_model):
    ids = micro_model.masked_sequence(0).ids
    logits = micro_model.answer_logits(ids, np.zeros(OBS_DIM), 0)
    assert not np.allclose(logits[0], logits[1])


def test_forward_rejects_bad_ids(micro_model):
    ids = micro_model.masked_sequence(0).ids.copy()
    ids[-1] = micro_model.layout.vocab_in
    with pytest.raises(ShapeError):
        micro_model.answer_logits(ids, np.zeros(OBS_DIM), 0)
    with pytest.raises(ShapeError):
        micro_model.answer_logits(micro_model.masked_sequence(0).ids, np.zeros(OBS_DIM - 1), 0)


def test_zero_head_gives_uniform_loss(micro_model, expert_episodes):
    micro_model.predictor.params["head_w"][...] = 0.0
    micro_model.predictor.params["head_b"][...] = 0.0
    arrays = build_training_arrays(expert_episodes[:2], micro_model, micro_model.bins)
    loss, _ = loss_and_grads(micro_model, arrays.subset(np.arange(8)), make_rng(0), LossWeighting.MASKED_MEAN)
    assert loss == pytest.approx(math.log(32), rel=1e-6)


def test_training_arrays_pad_past_episode_end(micro_model, expert_episodes):
    episode = expert_episodes[0]
    arrays = build_training_arrays([episode], micro_model, micro_model.bins)
    assert len(arrays) == episode.length
    assert arrays.answers.shape == (episode.length, 35)
    last = arrays.answers[-1].reshape(5, 7)
    np.testing.assert_array_equal(last[1], last[4])
    assert np.all(arrays.prompts == micro_model.prompt(episode.task_id))


def test_adamw_decays_matrices_only():
    params = {"w": np.ones((2, 2)), "b": np.ones(2)}
    optimizer = AdamW(params, lr=0.1, weight_decay=0.5)
    norm = optimizer.step(params, {"w": np.zeros((2, 2)), "b": np.zeros(2)})
    assert norm == 0.0
    np.testing.assert_allclose(params["w"], 0.95)
    np.testing.assert_array_equal(params["b"], 1.0)


def test_adamw_reports_pre_clip_norm():
    params = {"w": np.zeros((1, 2))}
    optimizer = AdamW(params, lr=0.01, weight_decay=0.0, grad_clip=1.0)
    assert optimizer.step(params, {"w": np.array([[6.0, 8.0]])}) == pytest.approx(10.0)


def _train_config(micro_config, **updates):
    return micro_config.derive({"train": {"learning_rate": 1e-3, "epochs": 20, **updates}, "diffusion": {"loss_weighting": "masked_mean"}})


def test_training_lowers_held_out_loss(micro_config, expert_episodes):
    config = _train_config(micro_config, max_steps=100)
    model = build_model(config, fit_tokenizer(config, expert_episodes))
    arrays = build_training_arrays(expert_episodes, model, model.bins)
    before = evaluation_loss(model, arrays, config.diffusion, seed=0)
    train(new_state(model, config.train), arrays, config.train, config.diffusion, seed=0, progress=False)
    after = evaluation_loss(model, arrays, config.diffusion, seed=0)
    assert after < before


def test_training_is_deterministic(micro_config, expert_episodes):
    config = _train_config(micro_config, max_steps=6)
    results = []
    for _ in range(2):
        model = build_model(config, fit_tokenizer(config, expert_episodes))
        arrays = build_training_arrays(expert_episodes, model, model.bins)
        results.append(train(new_state(model, config.train), arrays, config.train, config.diffusion, 0, progress=False))
    assert results[0].final_loss == results[1].final_loss
    assert results[0].state.loss_curve == results[1].state.loss_curve


def test_resume_from_checkpoint_matches_uninterrupted_run(micro_config, expert_episodes, tmp_path):
    full_cfg = _train_config(micro_config, max_steps=8)
    half_cfg = _train_config(micro_config, max_steps=4)
    bins = fit_tokenizer(full_cfg, expert_episodes)

    straight = build_model(full_cfg, bins)
    arrays = build_training_arrays(expert_episodes, straight, bins)
    train(new_state(straight, full_cfg.train), arrays, full_cfg.train, full_cfg.diffusion, 0, progress=False)

    first = new_state(build_model(half_cfg, bins), half_cfg.train)
    train(first, arrays, half_cfg.train, half_cfg.diffusion, 0, progress=False)
    path = save_checkpoint(
        tmp_path / "half.ckpt", first.model, half_cfg.canonical(), 0, step=first.step, epoch=first.epoch,
        moments=first.optimizer.state_arrays(), optimizer_step=first.optimizer.step_count,
    )
    loaded = load_checkpoint(path)
    resumed = new_state(loaded.model, full_cfg.train)
    resumed.optimizer.load_state(loaded.m, loaded.v, loaded.header.optimizer["step"])
    resumed.step = loaded.header.step
    train(resumed, arrays, full_cfg.train, full_cfg.diffusion, 0, progress=False)

    assert resumed.step == 8
    for name, value in straight.predictor.params.items():
        np.testing.assert_array_equal(resumed.model.predictor.params[name], value)
