"""Optimizer and learning-rate schedule for the training loop."""

from __future__ import annotations

import numpy as np


class AdamW:
    """Adam with decoupled weight decay.

    Decay multiplies the weights directly (w <- w * (1 - lr * decay))
    instead of flowing through the gradient moments, so the moment
    estimates track the loss gradient only.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-2) -> None:
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, params: list[np.ndarray], grads: list[np.ndarray],
             lr: float) -> None:
        """Update params in place; grads align one-to-one with params."""
        for grad in grads:
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError("non-finite gradient in optimizer step")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for i, (param, grad) in enumerate(zip(params, grads)):
            m = self._m.setdefault(i, np.zeros_like(param))
            v = self._v.setdefault(i, np.zeros_like(param))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param *= 1.0 - lr * self.weight_decay
            param -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def cyclic_lr(step: int, steps_per_cycle: int, base_lr: float,
              max_lr: float) -> float:
    """Triangular wave: base to max over the first half-cycle and back."""
    if steps_per_cycle <= 0:
        raise ValueError("steps_per_cycle must be positive")
    pos = step % steps_per_cycle
    half = steps_per_cycle / 2.0
    frac = pos / half if pos <= half else (steps_per_cycle - pos) / half
    return base_lr + (max_lr - base_lr) * frac
