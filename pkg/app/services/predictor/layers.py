"""Numpy building blocks of the mask predictor, each with an explicit backward pass."""
from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dw, db) for y = x @ w + b over any leading batch shape."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, tuple]:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_backward(dy: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv, gamma = cache
    width = xhat.shape[-1]
    dgamma = (dy * xhat).reshape(-1, width).sum(axis=0)
    dbeta = dy.reshape(-1, width).sum(axis=0)
    dxhat = dy * gamma
    dx = inv / width * (
        width * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def gelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    th = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * dinner)


def attention(
    x: np.ndarray,
    qkv_w: np.ndarray,
    qkv_b: np.ndarray,
    proj_w: np.ndarray,
    proj_b: np.ndarray,
    heads: int,
) -> tuple[np.ndarray, tuple]:
    """Full bidirectional multi-head self-attention over (B, N, E); no causal mask."""
    batch, length, width = x.shape
    head_dim = width // heads
    qkv = linear(x, qkv_w, qkv_b).reshape(batch, length, 3, heads, head_dim)
    q, k, v = (qkv[:, :, i].transpose(0, 2, 1, 3) for i in range(3))
    scale = 1.0 / np.sqrt(head_dim)
    probs = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(batch, length, width)
    out = linear(ctx, proj_w, proj_b)
    return out, (x, q, k, v, probs, ctx, scale, heads)


def attention_backward(
    dout: np.ndarray,
    cache: tuple,
    qkv_w: np.ndarray,
    proj_w: np.ndarray,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    x, q, k, v, probs, ctx, scale, heads = cache
    batch, length, width = x.shape
    head_dim = width // heads

    dctx, dproj_w, dproj_b = linear_backward(dout, ctx, proj_w)
    dctx = dctx.reshape(batch, length, heads, head_dim).transpose(0, 2, 1, 3)

    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    dqkv = np.stack([t.transpose(0, 2, 1, 3) for t in (dq, dk, dv)], axis=2).reshape(batch, length, 3 * width)
    dx, dqkv_w, dqkv_b = linear_backward(dqkv, x, qkv_w)
    return dx, {"qkv_w": dqkv_w, "qkv_b": dqkv_b, "proj_w": dproj_w, "proj_b": dproj_b}
