"""Adam with first/second moment estimates, in-place on numpy arrays.

Embedding tables use the touched-rows step (moments update lazily, with
the instance-global bias-correction step count); small dense parameters
use the full step.
"""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, param: np.ndarray, lr: float = 0.001,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.param = param
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros_like(param)
        self.v = np.zeros_like(param)
        self.t = 0

    def step(self, grad: np.ndarray) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        self.param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def step_rows(self, rows: np.ndarray, grad_rows: np.ndarray) -> None:
        """Update only ``rows`` (unique indices, one grad row each)."""
        self.t += 1
        m = self.beta1 * self.m[rows] + (1 - self.beta1) * grad_rows
        v = self.beta2 * self.v[rows] + (1 - self.beta2) * grad_rows * grad_rows
        self.m[rows] = m
        self.v[rows] = v
        m_hat = m / (1 - self.beta1 ** self.t)
        v_hat = v / (1 - self.beta2 ** self.t)
        self.param[rows] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
