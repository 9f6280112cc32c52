"""Adam with bias correction, and reduce-on-plateau learning-rate halving."""

from __future__ import annotations

import numpy as np


class TrainingError(RuntimeError):
    """Aborts training (non-finite gradients, inconsistent state)."""


class Adam:
    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype, copy=False)


class PlateauScheduler:
    """Halve the learning rate after ``patience`` consecutive epochs without
    a new best validation loss.

    The first epoch establishes the baseline and counts as non-improving
    (nothing decreased), so a run whose loss never improves sees its first
    halving take effect at epoch ``patience + 1``.  The stall counter resets
    both on improvement and on every halving.
    """

    def __init__(self, lr0: float, patience: int = 10, factor: float = 0.5):
        self.lr = lr0
        self.patience = patience
        self.factor = factor
        self.best = None
        self.stall = 0

    def observe(self, val_loss: float) -> float:
        """Feed one epoch's validation loss; returns the lr for the next epoch."""
        improved = self.best is not None and val_loss < self.best
        if self.best is None or val_loss < self.best:
            self.best = val_loss
        if improved:
            self.stall = 0
        else:
            self.stall += 1
            if self.stall >= self.patience:
                self.lr *= self.factor
                self.stall = 0
        return self.lr
