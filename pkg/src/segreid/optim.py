"""Adam and a linear learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** t
        corr2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            p.data -= (lr * update).astype(p.dtype, copy=False)


def linear_lr(step: int, total: int, lr0: float, lr_final: float) -> float:
    """Learning rate at 0-based ``step`` decaying linearly from ``lr0`` to ``lr_final``."""
    if total <= 1:
        return lr0
    return lr0 + (lr_final - lr0) * step / (total - 1)
