"""Adam with bias correction over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .tensor import FLOAT, Tensor


class Adam:
    """Textbook Adam; moments are kept per parameter name.

    Parameters that received no gradient in a step are skipped
    entirely (their moments do not decay), so unreachable weights stay
    untouched.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        """Apply one update from a tape gradient map."""
        self.step_count += 1
        t = self.step_count
        for name in sorted(self.params):
            p = self.params[name]
            g = grads.get(p)
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(FLOAT)
