import math

import numpy as np
import pytest

from app.models.sequence import TokenSequence
from app.services.diffusion import (
    forward_mask,
    forward_mask_batch,
    make_schedule,
    masked_cross_entropy,
    masked_loss,
    reverse_sample,
    reverse_transition_probs,
    sample_mask_times,
)
from app.utils.base import EmptyMaskError, LossWeighting, ScheduleError, ShapeError
from app.utils.common import make_rng

MASK = 20
BASE = 16


def clean_sequence(answer_len: int = 6) -> TokenSequence:
    answer = BASE + np.arange(answer_len) % 4
    return TokenSequence(ids=np.concatenate([[1, 2, 8, 13], answer]), prompt_len=4)


def test_forward_mask_extremes():
    x0 = clean_sequence()
    np.testing.assert_array_equal(forward_mask(x0, 0.0, MASK, make_rng(0)).ids, x0.ids)
    masked = forward_mask(x0, 1.0, MASK, make_rng(0))
    assert np.all(masked.answer == MASK)
    np.testing.assert_array_equal(masked.prompt, x0.prompt)


def test_forward_mask_rate_is_binomial():
    answers = np.full((1, 1000), BASE)
    counts = []
    for seed in range(50):
        _, mask = forward_mask_batch(answers, np.array([0.3]), MASK, make_rng(seed, "mask"))
        counts.append(int(mask.sum()))
    sigma = math.sqrt(1000 * 0.3 * 0.7)
    assert all(abs(c - 300) < 4.5 * sigma for c in counts)
    assert abs(np.mean(counts) - 300) < 5 * sigma / math.sqrt(len(counts))


@pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
def test_forward_mask_marginal_per_position(t):
    draws = 5000
    answers = np.tile(clean_sequence().answer, (draws, 1))
    masked, mask = forward_mask_batch(answers, np.full(draws, t), MASK, make_rng(3, "marginal", str(t)))
    sigma = math.sqrt(draws * t * (1 - t))
    per_position = mask.sum(axis=0)
    assert np.all(np.abs(per_position - draws * t) < 4.5 * sigma)
    pooled_sigma = math.sqrt(mask.size * t * (1 - t))
    assert abs(mask.sum() - mask.size * t) < 3 * pooled_sigma
    np.testing.assert_array_equal(masked[~mask], answers[~mask])
    assert np.all(masked[mask] == MASK)


def test_forward_mask_rejects_bad_input():
    with pytest.raises(ScheduleError):
        forward_mask(clean_sequence(), 1.5, MASK, make_rng(0))
    dirty = TokenSequence(ids=np.array([1, 2, BASE, MASK]), prompt_len=2)
    with pytest.raises(ShapeError):
        forward_mask(dirty, 0.5, MASK, make_rng(0))


def test_reverse_transition_worked_example():
    x_t = TokenSequence(ids=np.array([1, 2, MASK, BASE + 2]), prompt_len=2)
    probs = np.full((2, 4), 0.25)
    out = reverse_transition_probs(x_t, 0.5, 1.0, probs, MASK, BASE)
    np.testing.assert_allclose(out[0], [0.5, 0.125, 0.125, 0.125, 0.125])
    np.testing.assert_array_equal(out[1], [0.0, 0.0, 0.0, 1.0, 0.0])
    np.testing.assert_allclose(out.sum(axis=1), 1.0)


def test_reverse_transition_final_step_unmasks():
    x_t = TokenSequence(ids=np.array([1, 2, MASK, MASK]), prompt_len=2)
    probs = np.array([[0.7, 0.1, 0.1, 0.1], [0.0, 0.0, 0.4, 0.6]])
    out = reverse_transition_probs(x_t, 0.0, 0.3, probs, MASK, BASE)
    assert np.all(out[:, 0] == 0.0)
    np.testing.assert_allclose(out[:, 1:], probs)


def test_reverse_transition_requires_s_below_t():
    x_t = TokenSequence(ids=np.array([1, 2, MASK]), prompt_len=2)
    with pytest.raises(ScheduleError):
        reverse_transition_probs(x_t, 0.5, 0.5, np.full((1, 4), 0.25), MASK, BASE)


def test_reverse_sampling_over_schedule_terminates_and_keeps_reveals():
    schedule = make_schedule(10)
    x = TokenSequence(ids=np.concatenate([[1, 2], np.full(12, MASK)]), prompt_len=2)
    probs = np.random.default_rng(3).dirichlet(np.ones(4), size=12)
    rng = make_rng(7, "reverse")
    for k in range(schedule.steps):
        s, t = schedule.interval(k)
        before = x.answer.copy()
        x = reverse_sample(x, s, t, probs, MASK, BASE, rng)
        kept = before != MASK
        np.testing.assert_array_equal(x.answer[kept], before[kept])
    assert not np.any(x.answer == MASK)
    assert np.all((x.answer >= BASE) & (x.answer < BASE + 4))


def test_masked_loss_closed_forms():
    logits = np.zeros((3, 4))
    labels = np.array([-100, 2, -100])
    assert masked_loss(logits, labels, 1.0, LossWeighting.MASKED_MEAN) == pytest.approx(math.log(4))
    assert masked_loss(logits, labels, 0.5, LossWeighting.INVERSE_T) == pytest.approx(2 * math.log(4))
    confident = np.array([[0.0, 0.0, 0.0, 0.0], [-50.0, -50.0, 50.0, -50.0], [0.0, 0.0, 0.0, 0.0]])
    assert masked_loss(confident, labels, 1.0, LossWeighting.MASKED_MEAN) == pytest.approx(0.0, abs=1e-9)


def test_masked_loss_needs_a_masked_position():
    with pytest.raises(EmptyMaskError):
        masked_loss(np.zeros((3, 4)), np.full(3, -100), 0.5)
    with pytest.raises(ScheduleError):
        masked_loss(np.zeros((3, 4)), np.array([0, -100, -100]), 0.0, LossWeighting.INVERSE_T)


def test_masked_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(2, 5, 4))
    labels = np.array([[1, -100, 3, 0, -100], [-100, 2, -100, -100, 1]])
    t = np.array([0.4, 0.9])
    _, grad = masked_cross_entropy(logits, labels, t)
    numeric = np.zeros_like(logits)
    eps = 1e-6
    for index in np.ndindex(*logits.shape):
        bumped = logits.copy()
        bumped[index] += eps
        up, _ = masked_cross_entropy(bumped, labels, t)
        bumped[index] -= 2 * eps
        down, _ = masked_cross_entropy(bumped, labels, t)
        numeric[index] = (up - down) / (2 * eps)
    np.testing.assert_allclose(grad, numeric, atol=1e-7)


def test_linear_schedule():
    np.testing.assert_allclose(make_schedule(10).times, np.linspace(1.0, 0.0, 11))
    np.testing.assert_array_equal(make_schedule(1).times, [1.0, 0.0])
    s, t = make_schedule(2).interval(0)
    assert s / t == 0.5
    with pytest.raises(ScheduleError):
        make_schedule(0)


def test_reveal_quota():
    schedule = make_schedule(10)
    assert schedule.reveal_quota(0, 35) == 4
    assert schedule.reveal_quota(9, 35) == 35
    quotas = [schedule.reveal_quota(k, 35) for k in range(10)]
    assert quotas == sorted(quotas)


def test_sample_mask_times_range():
    times = sample_mask_times(make_rng(0, "t"), 1000, t_min=0.05)
    assert times.min() >= 0.05 and times.max() <= 1.0
