from __future__ import annotations

import logging
import math
from typing import NamedTuple, Optional, Protocol

import numpy as np

from app.models.decoding import ConfidenceMatrix, DecodeConfig, DecodeResult, DecodeStep, DecodeTrace
from app.models.predictor import ConditioningInput
from app.models.sequence import TokenSequence
from app.models.vocab import VocabLayout
from app.services.diffusion import make_schedule
from app.services.predictor.layers import softmax
from app.utils.base import (
    ActionScoreMode,
    ConfidenceMode,
    DecodeConfigError,
    DecodeStrategy,
    FocusMode,
    HeadMode,
    Selection,
    ShapeError,
)
from app.utils.common import make_rng

logger = logging.getLogger(__name__)


class DecodableModel(Protocol):
    layout: VocabLayout
    chunk_size: int
    action_dim: int
    head: HeadMode

    def masked_sequence(self, task_id: int) -> TokenSequence: ...

    def answer_logits(self, ids: np.ndarray, obs: np.ndarray, task_id: int) -> np.ndarray: ...


class Proposal(NamedTuple):
    """Per-position proposals for one reverse step."""
    tokens: np.ndarray
    confidence: ConfidenceMatrix
    stray_rate: float = 0.0


def predict_with_confidence(
    x_t: TokenSequence,
    cond: ConditioningInput,
    model: DecodableModel,
    config: DecodeConfig,
    rng: Optional[np.random.Generator] = None,
    finalized: Optional[np.ndarray] = None,
) -> Proposal:
    """Propose a token for every masked answer position and score it.

    Unmasked positions keep their token with confidence 1. Under the full-vocabulary head the
    proposal is restricted to action tokens while the confidence stays normalized over the whole head.
    """
    layout = model.layout
    answer = x_t.answer
    masked = answer == layout.mask_token_id
    if not masked.any():
        raise ShapeError("nothing left to predict: the answer region holds no mask tokens")
    logits = np.asarray(model.answer_logits(x_t.ids, cond.observation, cond.task_id), dtype=np.float64)
    if logits.shape[0] != answer.size:
        raise ShapeError(f"model returned {logits.shape[0]} answer rows for {answer.size} positions")

    if model.head is HeadMode.FULL_VOCAB:
        full_probs = softmax(logits)
        start = layout.special_token_base
        action_logits = logits[:, start:start + layout.action_vocab_size]
        action_probs = full_probs[:, start:start + layout.action_vocab_size]
        stray = ~((logits.argmax(axis=1) >= start) & (logits.argmax(axis=1) < layout.special_end))
        stray_rate = float(stray[masked].mean())
    else:
        action_logits = logits
        action_probs = softmax(logits)
        stray_rate = 0.0

    if config.selection is Selection.GREEDY:
        local = action_logits.argmax(axis=1)
    else:
        rng = rng if rng is not None else make_rng(config.seed, "decode")
        tempered = softmax(action_logits / config.temperature)
        draws = rng.random(answer.size)
        local = np.minimum((np.cumsum(tempered, axis=1) <= draws[:, None]).sum(axis=1), layout.action_vocab_size - 1)

    rows = np.arange(answer.size)
    if config.confidence_mode is ConfidenceMode.LOGIT:
        score = action_logits[rows, local]
    else:
        score = action_probs[rows, local]

    tokens = np.where(masked, local + layout.special_token_base, answer)
    values = np.where(masked, score, 1.0).reshape(-1, model.action_dim)
    flags = np.zeros(values.shape[0], dtype=bool) if finalized is None else np.asarray(finalized, dtype=bool)
    return Proposal(tokens, ConfidenceMatrix(values=values, finalized=flags), stray_rate)


def _top_positions(candidates: np.ndarray, confidence: np.ndarray, count: int) -> np.ndarray:
    """The `count` highest-confidence candidates; ties go to the lowest index."""
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-confidence[candidates], kind="stable")
    return np.sort(candidates[order[:count]])


def _step_record(
    step: int,
    focus: Optional[int],
    revealed: np.ndarray,
    remasked: np.ndarray,
    proposal: Proposal,
    action_scores: np.ndarray,
    answer: np.ndarray,
    mask_token_id: int,
    width: int,
) -> DecodeStep:
    return DecodeStep(
        step=step,
        focus_action=focus,
        revealed=[int(i) for i in revealed],
        remasked=[int(i) for i in remasked],
        confidence=proposal.confidence.values.tolist(),
        action_scores=[float(v) for v in action_scores],
        tokens=answer.reshape(-1, width).tolist(),
        masked_count=int((answer == mask_token_id).sum()),
        stray_rate=proposal.stray_rate,
    )


class VanillaDecoder:
    """Low-confidence remasking: predict every masked position, keep the most confident ones.

    After step k the cumulative number of revealed positions follows the schedule quota;
    revealed positions are never remasked.
    """

    def __init__(self, config: DecodeConfig):
        if config.strategy is not DecodeStrategy.VANILLA:
            raise DecodeConfigError(f"vanilla decoder built with strategy {config.strategy.value}")
        self.config = config
        self.schedule = make_schedule(config.total_steps, config.schedule)

    def decode(self, cond: ConditioningInput, model: DecodableModel, rng: Optional[np.random.Generator] = None) -> DecodeResult:
        rng = rng if rng is not None else make_rng(self.config.seed, "decode")
        layout = model.layout
        x = model.masked_sequence(cond.task_id)
        answer = x.answer.copy()
        total = answer.size
        width = model.action_dim
        trace = DecodeTrace(strategy=DecodeStrategy.VANILLA)

        for k in range(self.schedule.steps):
            masked = np.flatnonzero(answer == layout.mask_token_id)
            if masked.size == 0:
                # Quota already met: nothing left to predict.
                idle = Proposal(answer.copy(), ConfidenceMatrix(
                    values=np.ones((model.chunk_size, width)),
                    finalized=np.ones(model.chunk_size, dtype=bool),
                ))
                trace.steps.append(_step_record(
                    k, None, masked, masked, idle, idle.confidence.action_scores, answer, layout.mask_token_id, width,
                ))
                continue
            proposal = predict_with_confidence(x, cond, model, self.config, rng)
            quota = self.schedule.reveal_quota(k, total)
            new = _top_positions(masked, proposal.confidence.values.reshape(-1), quota - (total - masked.size))
            answer[new] = proposal.tokens[new]
            remasked = np.setdiff1d(masked, new)
            x = x.with_answer(answer)
            trace.steps.append(_step_record(
                k, None, new, remasked, proposal, proposal.confidence.action_scores, answer, layout.mask_token_id, width,
            ))
        return DecodeResult(tokens=answer.reshape(-1, width), trace=trace)


class HierarchicalDecoder:
    """Action-structured decoding: one focus action per step, everything else non-finalized stays masked."""

    def __init__(self, config: DecodeConfig, chunk_size: int):
        if config.strategy is not DecodeStrategy.HIERARCHICAL:
            raise DecodeConfigError(f"hierarchical decoder built with strategy {config.strategy.value}")
        if config.total_steps != chunk_size * config.iters_per_action:
            raise DecodeConfigError(
                f"total_steps {config.total_steps} must equal chunk_size {chunk_size} "
                f"x iters_per_action {config.iters_per_action}"
            )
        self.config = config
        self.chunk_size = chunk_size

    def _scores(self, proposal: Proposal, masked: np.ndarray) -> np.ndarray:
        if self.config.action_score_mode is ActionScoreMode.ALL_TOKENS:
            return proposal.confidence.action_scores
        return proposal.confidence.masked_action_scores(masked)

    def decode(self, cond: ConditioningInput, model: DecodableModel, rng: Optional[np.random.Generator] = None) -> DecodeResult:
        if model.chunk_size != self.chunk_size:
            raise DecodeConfigError(f"decoder built for K={self.chunk_size}, model emits K={model.chunk_size}")
        width = model.action_dim
        if self.config.iters_per_action > width:
            raise DecodeConfigError(f"iters_per_action {self.config.iters_per_action} exceeds the {width} tokens of an action")
        rng = rng if rng is not None else make_rng(self.config.seed, "decode")
        iters = self.config.iters_per_action
        mask_id = model.layout.mask_token_id
        x = model.masked_sequence(cond.task_id)
        grid = x.answer.copy().reshape(self.chunk_size, width)
        finalized = np.zeros(self.chunk_size, dtype=bool)
        visits = np.zeros(self.chunk_size, dtype=np.int64)
        focus: Optional[int] = None
        trace = DecodeTrace(strategy=DecodeStrategy.HIERARCHICAL)

        for step in range(self.config.total_steps):
            proposal = predict_with_confidence(x, cond, model, self.config, rng, finalized)
            masked = grid == mask_id
            scores = self._scores(proposal, masked)
            if focus is None or self.config.focus_mode is FocusMode.REARGMAX:
                focus = int(np.argmax(np.where(finalized, -np.inf, scores)))

            masked_flat = np.flatnonzero(masked.reshape(-1))
            in_focus = masked_flat[masked_flat // width == focus]
            quota = math.ceil(in_focus.size / (iters - visits[focus]))
            confidence = proposal.confidence.values.reshape(-1)
            new = _top_positions(in_focus, confidence, quota)

            flat = grid.reshape(-1)
            flat[new] = proposal.tokens[new]
            others = np.flatnonzero(np.repeat(~finalized, width) & (np.arange(flat.size) // width != focus))
            # Predicted-then-hidden: unrevealed focus tokens plus every position of the other open actions.
            remasked = np.union1d(np.setdiff1d(in_focus, new), others)
            flat[others] = mask_id
            grid = flat.reshape(self.chunk_size, width)

            visits[focus] += 1
            current = focus
            if visits[focus] >= iters:
                finalized[focus] = True
                focus = None
            x = x.with_answer(grid.reshape(-1))
            trace.steps.append(_step_record(step, current, new, remasked, proposal, scores, grid, mask_id, width))
        return DecodeResult(tokens=grid.copy(), trace=trace)


def build_decoder(config: DecodeConfig, chunk_size: int) -> VanillaDecoder | HierarchicalDecoder:
    if config.strategy is DecodeStrategy.VANILLA:
        return VanillaDecoder(config)
    return HierarchicalDecoder(config, chunk_size)


def vanilla_decode(cond: ConditioningInput, model: DecodableModel, config: DecodeConfig, rng=None) -> DecodeResult:
    return VanillaDecoder(config).decode(cond, model, rng)


def hierarchical_decode(cond: ConditioningInput, model: DecodableModel, config: DecodeConfig, rng=None) -> DecodeResult:
    return HierarchicalDecoder(config, model.chunk_size).decode(cond, model, rng)


def decode(cond: ConditioningInput, model: DecodableModel, config: DecodeConfig, rng=None) -> DecodeResult:
    return build_decoder(config, model.chunk_size).decode(cond, model, rng)
