from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from app.models.vocab import ACTION_DIM, ActionChunk, ActionVector, BinSpec, VocabLayout
from app.utils.base import TokenizerError

DEGENERATE_HALF_WIDTH = 1e-3

# Instruction words occupy the first ids of the base vocabulary.
INSTRUCTION_WORDS: tuple[str, ...] = (
    "<pad>", "<obs>", "<task>", "put", "block", "on", "in", "then",
    "red", "green", "blue", "yellow", "plate", "bowl", "box",
)
_WORD_IDS = {word: idx for idx, word in enumerate(INSTRUCTION_WORDS)}


def fit_bins(dataset: Iterable[ActionVector] | np.ndarray, bins: int = 32, clip_percentile: float = 1.0) -> BinSpec:
    """Fit uniform per-dimension bins on the [p, 100 − p] percentile range of the data."""
    values = _as_matrix(dataset)
    if values.shape[0] == 0:
        raise TokenizerError("cannot fit bins on an empty dataset")
    lo = np.percentile(values, clip_percentile, axis=0)
    hi = np.percentile(values, 100.0 - clip_percentile, axis=0)
    flat = hi - lo <= 0
    # Constant dimensions get a small symmetric window around their value.
    center = np.where(flat, (hi + lo) / 2.0, 0.0)
    lo = np.where(flat, center - DEGENERATE_HALF_WIDTH, lo)
    hi = np.where(flat, center + DEGENERATE_HALF_WIDTH, hi)
    return BinSpec(lo=lo, hi=hi, bins=bins)


def _as_matrix(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        values = np.asarray(dataset, dtype=np.float64)
    else:
        rows = [a.as_array() if isinstance(a, ActionVector) else np.asarray(a, dtype=np.float64) for a in dataset]
        values = np.stack(rows) if rows else np.zeros((0, ACTION_DIM))
    if values.ndim != 2 or values.shape[1] != ACTION_DIM:
        raise TokenizerError(f"actions must be N×{ACTION_DIM}, got shape {values.shape}")
    return values


def bin_indices(values: np.ndarray, bins: BinSpec) -> np.ndarray:
    """Bin index per component for an (..., D) array; half-open bins, clamped to [0, V_a − 1]."""
    clipped = np.clip(values, bins.lo, bins.hi)
    idx = np.floor((clipped - bins.lo) / bins.width).astype(np.int64)
    return np.clip(idx, 0, bins.bins - 1)


def tokenize_actions(values: np.ndarray, bins: BinSpec, layout: VocabLayout) -> np.ndarray:
    """Vectorized tokenization of an (..., D) array of continuous actions."""
    _check_bins(bins, layout)
    return bin_indices(np.asarray(values, dtype=np.float64), bins) + layout.special_token_base


def tokenize_action(a: ActionVector, bins: BinSpec, layout: VocabLayout) -> np.ndarray:
    return tokenize_actions(a.as_array(), bins, layout)


def detokenize_array(tokens: np.ndarray, bins: BinSpec, layout: VocabLayout) -> np.ndarray:
    """Bin centers for an (..., D) array of action tokens."""
    _check_bins(bins, layout)
    tokens = np.asarray(tokens, dtype=np.int64)
    local = tokens - layout.special_token_base
    bad = (local < 0) | (local >= layout.action_vocab_size)
    if bad.any():
        position = tuple(int(i) for i in np.argwhere(bad)[0])
        raise TokenizerError(f"token {int(tokens[position])} at position {position} is not an action token")
    return bins.lo + (local + 0.5) * bins.width


def detokenize(tokens: Sequence[int] | np.ndarray, bins: BinSpec, layout: VocabLayout) -> ActionVector:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape != (ACTION_DIM,):
        raise TokenizerError(f"expected {ACTION_DIM} tokens, got shape {tokens.shape}")
    return ActionVector.from_array(detokenize_array(tokens, bins, layout))


def detokenize_chunk(chunk: ActionChunk, bins: BinSpec, layout: VocabLayout) -> ActionChunk:
    if not chunk.is_tokens:
        raise TokenizerError("chunk already holds continuous values")
    return ActionChunk(entries=detokenize_array(chunk.entries, bins, layout))


def map_local_array(token_ids: np.ndarray, layout: VocabLayout) -> np.ndarray:
    token_ids = np.asarray(token_ids, dtype=np.int64)
    inside = (token_ids >= layout.special_token_base) & (token_ids < layout.special_end)
    return np.where(inside, token_ids - layout.special_token_base, layout.ignore_label)


def map_local(token_id: int, layout: VocabLayout) -> int:
    """Local class of an action token, or the ignore label for any other id."""
    token_id = int(token_id)
    return token_id - layout.special_token_base if layout.is_special(token_id) else layout.ignore_label


def unmap_local_array(local: np.ndarray, layout: VocabLayout) -> np.ndarray:
    local = np.asarray(local, dtype=np.int64)
    if ((local < 0) | (local >= layout.action_vocab_size)).any():
        bad = local[(local < 0) | (local >= layout.action_vocab_size)].ravel()[0]
        raise TokenizerError(f"local class {int(bad)} outside [0, {layout.action_vocab_size})")
    return local + layout.special_token_base


def unmap_local(local_class: int, layout: VocabLayout) -> int:
    return int(unmap_local_array(np.asarray(local_class), layout))


def encode_prompt(words: Sequence[str], layout: VocabLayout, prompt_len: int = 4) -> np.ndarray:
    """Prompt ids: [<obs>, <task>, *instruction words], padded or cut to prompt_len."""
    ids = [_WORD_IDS["<obs>"], _WORD_IDS["<task>"]]
    for word in words:
        if word not in _WORD_IDS:
            raise TokenizerError(f"unknown instruction word {word!r}")
        ids.append(_WORD_IDS[word])
    ids = (ids + [_WORD_IDS["<pad>"]] * prompt_len)[:prompt_len]
    if max(ids) >= layout.base_vocab_size:
        raise TokenizerError("instruction words do not fit in the base vocabulary")
    return np.asarray(ids, dtype=np.int64)


def _check_bins(bins: BinSpec, layout: VocabLayout) -> None:
    if bins.bins != layout.action_vocab_size:
        raise TokenizerError(f"bin count {bins.bins} does not match action vocabulary {layout.action_vocab_size}")
