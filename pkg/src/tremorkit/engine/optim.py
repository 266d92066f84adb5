"""Adam with L2 weight decay and a reduce-on-plateau schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 6e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self._m[i] = self.beta1 * self._m[i] + (1 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1 - self.beta2) * (g * g)
            m_hat = self._m[i] / b1t
            v_hat = self._v[i] / b2t
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class ReduceOnPlateau:
    """Divide the learning rate by ``factor`` after more than ``patience``
    consecutive epochs without validation improvement."""

    def __init__(self, optimizer: Adam, patience: int = 15, factor: float = 10.0,
                 eps: float = 1e-12):
        self.optimizer = optimizer
        self.patience = patience
        self.factor = factor
        self.eps = eps
        self.best = np.inf
        self.bad_epochs = 0
        self.reductions = 0

    @property
    def lr(self) -> float:
        return self.optimizer.lr

    def step(self, val_loss: float) -> bool:
        """Returns True when the learning rate was reduced this epoch."""
        if val_loss < self.best - self.eps:
            self.best = val_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.optimizer.lr /= self.factor
            self.reductions += 1
            self.bad_epochs = 0
            return True
        return False
