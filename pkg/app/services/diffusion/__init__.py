from __future__ import annotations

import numpy as np

from app.models.sequence import DiffusionSchedule, TokenSequence
from app.models.vocab import IGNORE_LABEL
from app.utils.base import EmptyMaskError, LossWeighting, ScheduleError, ScheduleShape, ShapeError


def _check_time(t: float, name: str = "t") -> None:
    if not 0.0 <= t <= 1.0:
        raise ScheduleError(f"{name} must lie in [0, 1], got {t}")


def forward_mask_batch(
    answers: np.ndarray,
    t: np.ndarray,
    mask_token_id: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Mask each answer token independently with its row's probability t.

    Returns (masked answers, boolean mask). One uniform draw per position.
    """
    answers = np.asarray(answers, dtype=np.int64)
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if answers.ndim != 2 or t.shape[0] != answers.shape[0]:
        raise ShapeError(f"answers {answers.shape} and times {t.shape} disagree")
    if ((t < 0) | (t > 1)).any():
        raise ScheduleError(f"mask times must lie in [0, 1], got {t.min()} .. {t.max()}")
    if (answers == mask_token_id).any():
        raise ShapeError("clean sequence already holds mask tokens")
    draws = rng.random(answers.shape)
    mask = draws < t[:, None]
    return np.where(mask, mask_token_id, answers), mask


def forward_mask(x0: TokenSequence, t: float, mask_token_id: int, rng: np.random.Generator) -> TokenSequence:
    """q(x_t | x_0): answer tokens become [M] with probability t, the prompt is untouched."""
    _check_time(t)
    masked, _ = forward_mask_batch(x0.answer[None, :], np.array([t]), mask_token_id, rng)
    return x0.with_answer(masked[0])


def reverse_transition_probs(
    x_t: TokenSequence,
    s: float,
    t: float,
    predictor_probs: np.ndarray,
    mask_token_id: int,
    special_token_base: int,
) -> np.ndarray:
    """q(x_s | x_t) over the answer region.

    Columns are [stay masked, s_0, ..., s_{V_a-1}]; predictor_probs is (answer_len, V_a).
    """
    _check_time(s, "s")
    _check_time(t, "t")
    if s >= t:
        raise ScheduleError(f"reverse step needs s < t, got s={s} t={t}")
    answer = x_t.answer
    probs = np.asarray(predictor_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != answer.size:
        raise ShapeError(f"predictor probabilities {probs.shape} do not cover {answer.size} answer positions")
    n_classes = probs.shape[1]
    masked = answer == mask_token_id
    out = np.zeros((answer.size, n_classes + 1), dtype=np.float64)
    out[masked, 0] = s / t
    out[masked, 1:] = (t - s) / t * probs[masked]
    kept = np.flatnonzero(~masked)
    local = answer[kept] - special_token_base
    if ((local < 0) | (local >= n_classes)).any():
        raise ShapeError("unmasked answer positions must hold action tokens")
    out[kept, 1 + local] = 1.0
    return out


def reverse_sample(
    x_t: TokenSequence,
    s: float,
    t: float,
    predictor_probs: np.ndarray,
    mask_token_id: int,
    special_token_base: int,
    rng: np.random.Generator,
) -> TokenSequence:
    """Draw x_s ~ q(x_s | x_t) by inverse CDF, one uniform draw per answer position."""
    transition = reverse_transition_probs(x_t, s, t, predictor_probs, mask_token_id, special_token_base)
    cdf = np.cumsum(transition, axis=1)
    draws = rng.random(transition.shape[0]) * cdf[:, -1]
    column = (cdf <= draws[:, None]).sum(axis=1)
    column = np.minimum(column, transition.shape[1] - 1)
    answer = np.where(column == 0, mask_token_id, special_token_base + column - 1)
    return x_t.with_answer(answer)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def masked_cross_entropy(
    logits: np.ndarray,
    labels: np.ndarray,
    t: np.ndarray | float,
    weighting: LossWeighting = LossWeighting.INVERSE_T,
    ignore_label: int = IGNORE_LABEL,
) -> tuple[float, np.ndarray]:
    """Batch masked cross-entropy and its gradient w.r.t. the logits.

    logits (B, N, C), labels (B, N). Each element contributes the mean CE over its
    non-ignored positions, times 1/t under inverse_t weighting; the batch loss is the mean.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 3 or labels.shape != logits.shape[:2]:
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    batch = logits.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
    valid = labels != ignore_label
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise EmptyMaskError(f"batch element {int(np.argmin(counts))} has no masked positions")
    if ((labels[valid] < 0) | (labels[valid] >= logits.shape[2])).any():
        raise ShapeError("label outside the head's class range")

    logp = log_softmax(logits.astype(np.float64, copy=False))
    safe = np.where(valid, labels, 0)
    nll = -np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    per_element = (nll * valid).sum(axis=1) / counts
    weight = 1.0 / t if weighting is LossWeighting.INVERSE_T else np.ones(batch)
    loss = float(np.mean(per_element * weight))

    scale = (weight / counts / batch)[:, None, None]
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, safe[..., None], np.take_along_axis(dlogits, safe[..., None], axis=-1) - 1.0, axis=-1)
    dlogits = dlogits * valid[..., None] * scale
    return loss, dlogits.astype(logits.dtype, copy=False)


def masked_loss(
    logits_local: np.ndarray,
    labels_local: np.ndarray,
    t: float,
    weighting: LossWeighting = LossWeighting.INVERSE_T,
) -> float:
    """Scalar masked loss for one sequence: mean CE over masked positions, times 1/t if requested."""
    _check_time(t)
    if weighting is LossWeighting.INVERSE_T and t == 0:
        raise ScheduleError("inverse_t weighting is undefined at t = 0")
    loss, _ = masked_cross_entropy(np.asarray(logits_local)[None], np.asarray(labels_local)[None], t, weighting)
    return loss


def make_schedule(steps: int, shape: ScheduleShape = ScheduleShape.LINEAR) -> DiffusionSchedule:
    """t_k = 1 − k/T for k = 0..T."""
    if steps < 1:
        raise ScheduleError(f"schedule needs at least one step, got {steps}")
    if shape is not ScheduleShape.LINEAR:
        raise ScheduleError(f"unsupported schedule shape {shape}")
    times = 1.0 - np.arange(steps + 1, dtype=np.float64) / steps
    times[-1] = 0.0
    return DiffusionSchedule(times=times, shape=shape)


def sample_mask_times(rng: np.random.Generator, size: int, t_min: float = 0.05) -> np.ndarray:
    """Training-time mask rates, uniform on [t_min, 1]."""
    return t_min + (1.0 - t_min) * rng.random(size)
