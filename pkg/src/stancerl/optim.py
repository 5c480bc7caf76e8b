"""Adam optimizer with bias correction and a selectable update direction."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import NumericError, ShapeError


class Adam:
    """Standard bias-corrected Adam.

    With maximize=False the update descends the gradient; with
    maximize=True it ascends (used for the policy, which maximizes its
    surrogate objective).  Parameters whose grad is None are skipped,
    so a step after zero_grad() leaves everything unchanged.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, maximize: bool = False):
        self.params: list[Tensor] = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.maximize = maximize
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} vs parameter {p.data.shape}")
            if not np.isfinite(g.sum()):
                raise NumericError("non-finite gradient in Adam step")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            delta = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.maximize:
                p.data += delta
            else:
                p.data -= delta

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
