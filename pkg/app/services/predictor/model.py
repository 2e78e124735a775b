from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from app.models.predictor import PredictorConfig
from app.models.sequence import TokenSequence
from app.models.vocab import ACTION_DIM, BinSpec, VocabLayout
from app.services.predictor import layers as ops
from app.services.tokenizer import encode_prompt
from app.utils.base import HeadMode, ShapeError
from app.utils.common import make_rng

logger = logging.getLogger(__name__)

# Prompt slots that receive the conditioning embeddings.
OBS_SLOT = 0
TASK_SLOT = 1

_BLOCK_PARAMS = (
    "ln1_g", "ln1_b", "qkv_w", "qkv_b", "proj_w", "proj_b",
    "ln2_g", "ln2_b", "fc_w", "fc_b", "out_w", "out_b",
)


class MaskPredictor:
    """Pre-LN bidirectional transformer p_θ(x_0 | x_t, observation, task).

    Parameters live in an ordered dict; that order is the checkpoint blob order.
    """

    def __init__(self, config: PredictorConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = self._init_params(seed)
        self._cache: Optional[dict] = None
        logger.info(
            "Built mask predictor: %d parameters, head=%s, classes_out=%d",
            self.param_count, config.head.value, config.classes_out,
        )

    def _init_params(self, seed: int) -> dict[str, np.ndarray]:
        cfg = self.config
        rng = make_rng(seed, "init")
        width, hidden = cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio
        proj_std = cfg.init_std / np.sqrt(2 * cfg.layers)

        def normal(*shape, std=cfg.init_std):
            return rng.normal(0.0, std, size=shape)

        params: dict[str, np.ndarray] = {
            "tok_emb": normal(cfg.vocab_in, width),
            "pos_emb": normal(cfg.max_seq_len, width),
            "obs_w": normal(cfg.cond_dim, width),
            "obs_b": np.zeros(width),
            "task_emb": normal(cfg.n_tasks, width),
        }
        for layer in range(cfg.layers):
            block = {
                "ln1_g": np.ones(width), "ln1_b": np.zeros(width),
                "qkv_w": normal(width, 3 * width), "qkv_b": np.zeros(3 * width),
                "proj_w": normal(width, width, std=proj_std), "proj_b": np.zeros(width),
                "ln2_g": np.ones(width), "ln2_b": np.zeros(width),
                "fc_w": normal(width, hidden), "fc_b": np.zeros(hidden),
                "out_w": normal(hidden, width, std=proj_std), "out_b": np.zeros(width),
            }
            params.update({f"layers.{layer}.{name}": value for name, value in block.items()})
        params["lnf_g"] = np.ones(width)
        params["lnf_b"] = np.zeros(width)
        params["head_w"] = normal(width, cfg.classes_out)
        params["head_b"] = np.zeros(cfg.classes_out)
        return {name: value.astype(self.dtype) for name, value in params.items()}

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "MaskPredictor":
        clone = object.__new__(MaskPredictor)
        clone.config = self.config
        clone.dtype = np.dtype(dtype)
        clone.params = {name: value.astype(clone.dtype) for name, value in self.params.items()}
        clone._cache = None
        return clone

    def _check_inputs(self, ids: np.ndarray, obs: np.ndarray, task_ids: np.ndarray) -> None:
        cfg = self.config
        if ids.ndim != 2:
            raise ShapeError(f"token ids must be (batch, length), got {ids.shape}")
        batch, length = ids.shape
        if length > cfg.max_seq_len:
            raise ShapeError(f"sequence length {length} exceeds max_seq_len {cfg.max_seq_len}")
        if length <= TASK_SLOT:
            raise ShapeError(f"sequence length {length} leaves no room for the conditioning slots")
        if ids.min() < 0 or ids.max() >= cfg.vocab_in:
            bad = int(ids[(ids < 0) | (ids >= cfg.vocab_in)][0])
            raise ShapeError(f"token id {bad} outside [0, {cfg.vocab_in})")
        if obs.shape != (batch, cfg.cond_dim):
            raise ShapeError(f"observations must be ({batch}, {cfg.cond_dim}), got {obs.shape}")
        if task_ids.shape != (batch,) or task_ids.min() < 0 or task_ids.max() >= cfg.n_tasks:
            raise ShapeError(f"task ids must be {batch} values in [0, {cfg.n_tasks})")

    def forward(self, ids, obs, task_ids, keep_cache: bool = False) -> np.ndarray:
        """Logits (B, N, classes_out) for every position, prompt rows included."""
        ids = np.asarray(ids, dtype=np.int64)
        obs = np.asarray(obs, dtype=self.dtype)
        task_ids = np.asarray(task_ids, dtype=np.int64)
        self._check_inputs(ids, obs, task_ids)
        p = self.params
        length = ids.shape[1]

        h = p["tok_emb"][ids] + p["pos_emb"][:length]
        h[:, OBS_SLOT] += ops.linear(obs, p["obs_w"], p["obs_b"])
        h[:, TASK_SLOT] += p["task_emb"][task_ids]

        block_caches = []
        for layer in range(self.config.layers):
            w = self._block(layer)
            a, ln1 = ops.layer_norm(h, w["ln1_g"], w["ln1_b"])
            attn_out, attn = ops.attention(a, w["qkv_w"], w["qkv_b"], w["proj_w"], w["proj_b"], self.config.heads)
            h = h + attn_out
            m, ln2 = ops.layer_norm(h, w["ln2_g"], w["ln2_b"])
            pre = ops.linear(m, w["fc_w"], w["fc_b"])
            act = ops.gelu(pre)
            h = h + ops.linear(act, w["out_w"], w["out_b"])
            block_caches.append((ln1, attn, ln2, m, pre, act))

        hf, lnf = ops.layer_norm(h, p["lnf_g"], p["lnf_b"])
        logits = ops.linear(hf, p["head_w"], p["head_b"])
        if keep_cache:
            self._cache = {"ids": ids, "obs": obs, "task_ids": task_ids, "blocks": block_caches, "lnf": lnf, "hf": hf}
        return logits

    def predict(self, ids, obs, task_ids) -> np.ndarray:
        return self.forward(ids, obs, task_ids, keep_cache=False)

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the loss w.r.t. every parameter, given dL/dlogits of the last cached forward."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        cache, self._cache = self._cache, None
        p = self.params
        grads = {name: np.zeros_like(value) for name, value in p.items()}
        dlogits = np.asarray(dlogits, dtype=self.dtype)

        dhf, grads["head_w"], grads["head_b"] = ops.linear_backward(dlogits, cache["hf"], p["head_w"])
        dh, grads["lnf_g"], grads["lnf_b"] = ops.layer_norm_backward(dhf, cache["lnf"])

        for layer in reversed(range(self.config.layers)):
            w = self._block(layer)
            ln1, attn, ln2, m, pre, act = cache["blocks"][layer]
            prefix = f"layers.{layer}."
            dact, grads[prefix + "out_w"], grads[prefix + "out_b"] = ops.linear_backward(dh, act, w["out_w"])
            dpre = ops.gelu_backward(dact, pre)
            dm, grads[prefix + "fc_w"], grads[prefix + "fc_b"] = ops.linear_backward(dpre, m, w["fc_w"])
            dln2, grads[prefix + "ln2_g"], grads[prefix + "ln2_b"] = ops.layer_norm_backward(dm, ln2)
            dh = dh + dln2
            da, attn_grads = ops.attention_backward(dh, attn, w["qkv_w"], w["proj_w"])
            for name, value in attn_grads.items():
                grads[prefix + name] = value
            dln1, grads[prefix + "ln1_g"], grads[prefix + "ln1_b"] = ops.layer_norm_backward(da, ln1)
            dh = dh + dln1

        length = cache["ids"].shape[1]
        np.add.at(grads["tok_emb"], cache["ids"], dh)
        grads["pos_emb"][:length] = dh.sum(axis=0)
        dobs = dh[:, OBS_SLOT]
        grads["obs_w"] = cache["obs"].T @ dobs
        grads["obs_b"] = dobs.sum(axis=0)
        np.add.at(grads["task_emb"], cache["task_ids"], dh[:, TASK_SLOT])
        return grads

    def _block(self, layer: int) -> dict[str, np.ndarray]:
        return {name: self.params[f"layers.{layer}.{name}"] for name in _BLOCK_PARAMS}

    def all_finite(self) -> bool:
        return all(np.isfinite(value).all() for value in self.params.values())


class PolicyModel:
    """A mask predictor together with everything needed to build and read its sequences."""

    def __init__(
        self,
        predictor: MaskPredictor,
        layout: VocabLayout,
        chunk_size: int,
        prompt_len: int,
        task_words: list[tuple[str, ...]],
        bins: Optional[BinSpec] = None,
    ):
        if predictor.config.head is HeadMode.FULL_VOCAB and layout.special_end > predictor.config.classes_out:
            raise ShapeError("full-vocabulary head does not cover the special token block")
        self.predictor = predictor
        self.layout = layout
        self.chunk_size = chunk_size
        self.prompt_len = prompt_len
        self.task_words = [tuple(words) for words in task_words]
        self.bins = bins

    @property
    def head(self) -> HeadMode:
        return self.predictor.config.head

    @property
    def action_dim(self) -> int:
        return ACTION_DIM

    @property
    def answer_len(self) -> int:
        return self.chunk_size * self.action_dim

    @property
    def seq_len(self) -> int:
        return self.prompt_len + self.answer_len

    def prompt(self, task_id: int) -> np.ndarray:
        return encode_prompt(self.task_words[task_id], self.layout, self.prompt_len)

    def masked_sequence(self, task_id: int) -> TokenSequence:
        """The decode start state: prompt followed by an all-[M] answer region."""
        answer = np.full(self.answer_len, self.layout.mask_token_id, dtype=np.int64)
        return TokenSequence(ids=np.concatenate([self.prompt(task_id), answer]), prompt_len=self.prompt_len)

    def answer_logits(self, ids: np.ndarray, obs: np.ndarray, task_id: int) -> np.ndarray:
        """Logits of the answer rows for one sequence, shape (K·D, classes_out)."""
        logits = self.predictor.predict(ids[None, :], np.asarray(obs)[None, :], np.array([task_id]))
        return logits[0, self.prompt_len:]

    def labels_for(self, answers: np.ndarray) -> np.ndarray:
        """Head labels for clean answer tokens: local classes, or raw ids under the full-vocabulary head."""
        if self.head is HeadMode.FULL_VOCAB:
            return np.asarray(answers, dtype=np.int64)
        return np.asarray(answers, dtype=np.int64) - self.layout.special_token_base


def build_policy_model(
    layout: VocabLayout,
    chunk_size: int,
    prompt_len: int,
    task_words: list[tuple[str, ...]],
    cond_dim: int,
    embed_dim: int = 128,
    layers: int = 4,
    heads: int = 4,
    mlp_ratio: int = 4,
    head: HeadMode = HeadMode.LOCALIZED,
    init_std: float = 0.02,
    bins: Optional[BinSpec] = None,
    seed: int = 0,
    dtype=np.float32,
) -> PolicyModel:
    classes_out = layout.action_vocab_size if head is HeadMode.LOCALIZED else layout.full_head_width
    config = PredictorConfig(
        embed_dim=embed_dim,
        layers=layers,
        heads=heads,
        mlp_ratio=mlp_ratio,
        max_seq_len=prompt_len + chunk_size * ACTION_DIM,
        vocab_in=layout.vocab_in,
        classes_out=classes_out,
        cond_dim=cond_dim,
        n_tasks=len(task_words),
        head=head,
        init_std=init_std,
    )
    return PolicyModel(MaskPredictor(config, seed=seed, dtype=dtype), layout, chunk_size, prompt_len, task_words, bins)
