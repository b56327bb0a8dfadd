"""Prediction towers and the training losses.

Two independent towers score the same history under opposite assumed
labels; the positive tower carries the next-item cross-entropy, the
pair gets a BPR loss on the signed logit difference, and the joint
objective adds the disentangling term and an L2 penalty over all
learnable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import (FLOAT, Tensor, add, layer_norm, log, matmul, mean_all,
                     mul, reduce_sum, relu, reshape, scale, sigmoid, sqrt, sub)


@dataclass
class LossWeights:
    """Mixing weights of the joint objective; all must be >= 0."""

    bpr: float = 1e-2
    disentangle: float = 1e-2
    reg: float = 1e-6

    def validate(self) -> "LossWeights":
        for field in ("bpr", "disentangle", "reg"):
            if getattr(self, field) < 0:
                raise ConfigError(f"loss weight {field} must be >= 0")
        return self


def sum_pool(seq: Tensor, valid: np.ndarray) -> Tensor:
    """Sum of the real rows; padding is excluded explicitly."""
    masked = mul(seq, Tensor(valid[..., None].astype(FLOAT)))
    return reduce_sum(masked, axis=1)


class PredictionTower:
    """MLP 4D -> 2D -> 1 sandwiched between two layer norms."""

    def __init__(self, rng, embed_dim: int, prefix: str):
        d = embed_dim
        def uniform(shape):
            return rng.uniform(-0.05, 0.05, shape).astype(FLOAT)
        self.ln_in_gain = Tensor(np.ones(4 * d, dtype=FLOAT), requires_grad=True,
                                 name=f"{prefix}.ln_in_gain")
        self.ln_in_bias = Tensor(np.zeros(4 * d, dtype=FLOAT), requires_grad=True,
                                 name=f"{prefix}.ln_in_bias")
        self.w1 = Tensor(uniform((4 * d, 2 * d)), requires_grad=True,
                         name=f"{prefix}.w1")
        self.b1 = Tensor(np.zeros(2 * d, dtype=FLOAT), requires_grad=True,
                         name=f"{prefix}.b1")
        self.ln_mid_gain = Tensor(np.ones(2 * d, dtype=FLOAT), requires_grad=True,
                                  name=f"{prefix}.ln_mid_gain")
        self.ln_mid_bias = Tensor(np.zeros(2 * d, dtype=FLOAT), requires_grad=True,
                                  name=f"{prefix}.ln_mid_bias")
        self.w2 = Tensor(uniform((2 * d, 1)), requires_grad=True,
                         name=f"{prefix}.w2")
        self.b2 = Tensor(np.zeros(1, dtype=FLOAT), requires_grad=True,
                         name=f"{prefix}.b2")

    def params(self) -> dict[str, Tensor]:
        out = (self.ln_in_gain, self.ln_in_bias, self.w1, self.b1,
               self.ln_mid_gain, self.ln_mid_bias, self.w2, self.b2)
        return {t.name: t for t in out}

    def forward(self, x: Tensor) -> Tensor:
        h = layer_norm(x, self.ln_in_gain, self.ln_in_bias)
        h = relu(add(matmul(h, self.w1), self.b1))
        h = layer_norm(h, self.ln_mid_gain, self.ln_mid_bias)
        out = add(matmul(h, self.w2), self.b2)
        return reshape(out, (x.shape[0],))


def bpr_loss(logit_pos: Tensor, logit_neg: Tensor, labels: np.ndarray) -> Tensor:
    """Mean of -log sigmoid(signed logit difference).

    The difference is logit_pos - logit_neg for positive targets and the
    negation for negative targets.
    """
    sign = Tensor((2.0 * labels - 1.0).astype(FLOAT))
    signed = mul(sub(logit_pos, logit_neg), sign)
    return mean_all(scale(log(sigmoid(signed)), -1.0))


def bce_loss(logit_pos: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logit_pos) against the labels."""
    y = Tensor(labels.astype(FLOAT))
    prob = sigmoid(logit_pos)
    pos_term = mul(y, log(prob))
    neg_term = mul(sub(Tensor(np.float32(1.0)), y),
                   log(sub(Tensor(np.float32(1.0)), prob)))
    return scale(mean_all(add(pos_term, neg_term)), -1.0)


def l2_norm(params) -> Tensor:
    """L2 norm (not squared) over every learnable array."""
    total = None
    for p in params:
        sq = reduce_sum(mul(p, p))
        total = sq if total is None else add(total, sq)
    return sqrt(total)


def joint_loss(bce: Tensor, bpr: Tensor | None, disentangle: Tensor | None,
               params, weights: LossWeights) -> Tensor:
    """bce + w.bpr * bpr + w.disentangle * dis + w.reg * ||params||.

    Terms whose weight is zero are skipped entirely, so their parameters
    stay off the tape (the ablation arms rely on gradients being absent,
    not merely zero).
    """
    weights.validate()
    total = bce
    if weights.bpr > 0:
        if bpr is None:
            raise ConfigError("bpr weight > 0 but no bpr loss supplied")
        total = add(total, scale(bpr, weights.bpr))
    if weights.disentangle > 0:
        if disentangle is None:
            raise ConfigError("disentangle weight > 0 but no loss supplied")
        total = add(total, scale(disentangle, weights.disentangle))
    if weights.reg > 0:
        total = add(total, scale(l2_norm(params), weights.reg))
    return total
