from __future__ import annotations

import numpy as np

from ..errors import StateError
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor carrying its Adam moment buffers."""

    __slots__ = ("name", "m", "v", "step")

    def __init__(self, data, name="", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; clears the gradients afterwards."""
    for p in params:
        if p.grad is None:
            raise StateError(f"parameter {p.name!r} has no gradient")
        g = p.grad
        p.step += 1
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        m_hat = p.m / (1 - beta1 ** p.step)
        v_hat = p.v / (1 - beta2 ** p.step)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        p.grad = None


class Adam:
    """Parameter groups with their own learning rates."""

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = [(list(params), lr) for params, lr in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def zero_grad(self):
        for params, _ in self.groups:
            for p in params:
                p.grad = None

    def step(self):
        for params, lr in self.groups:
            adam_step(params, lr, self.beta1, self.beta2, self.eps)
