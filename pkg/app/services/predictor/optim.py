from __future__ import annotations

import numpy as np


class AdamW:
    """Adam with decoupled weight decay and global-norm gradient clipping.

    Decay applies to matrices only; gains, biases and 1-D tables are left alone.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 3e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        grad_clip: float = 1.0,
    ):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> float:
        """Update params in place; returns the pre-clip global gradient norm."""
        norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
        scale = 1.0
        if self.grad_clip > 0 and norm > self.grad_clip:
            scale = self.grad_clip / (norm + 1e-12)

        self.step_count += 1
        bias1 = 1.0 - self.beta1**self.step_count
        bias2 = 1.0 - self.beta2**self.step_count
        for name, value in params.items():
            g = grads[name] * scale
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay and value.ndim >= 2:
                value *= 1.0 - self.lr * self.weight_decay
            value -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
        return norm

    def state_arrays(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        return self.m, self.v

    def load_state(self, m: dict[str, np.ndarray], v: dict[str, np.ndarray], step_count: int) -> None:
        missing = set(self.m) - set(m)
        if missing:
            raise KeyError(f"optimizer state lacks moments for {sorted(missing)}")
        for name in self.m:
            self.m[name][...] = m[name]
            self.v[name][...] = v[name]
        self.step_count = int(step_count)
