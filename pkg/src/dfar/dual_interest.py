"""Dual-interest layer: feedback split, per-branch refinement,
target-aware aggregation, cosine disentangling.

The encoded sequence S is partitioned into a positive branch (rows
whose feedback is 1) and a negative branch (rows whose feedback is 0);
each branch is refined by its own factorization-heads attention with
fresh weights, scored against the target item under the assumed label,
softmax-aggregated along the sequence axis, and pooled into one vector
per branch. Minimizing the cosine between the two pooled vectors
repels the two interests.
"""

from __future__ import annotations

import numpy as np

from .tensor import (FLOAT, Tensor, add, concat, cosine_similarity, expand,
                     matmul, mean_all, mul, reduce_sum, relu, reshape, softmax)


def split_by_feedback(s: Tensor, feedback: np.ndarray, valid: np.ndarray):
    """S masked row-wise into (positive branch, negative branch).

    Padding is zero in both; the two branches sum back to S on real rows.
    """
    fb = (feedback * valid).astype(FLOAT)[..., None]
    pos = mul(s, Tensor(fb))
    neg = mul(s, Tensor(((1 - feedback) * valid).astype(FLOAT)[..., None]))
    return pos, neg


def branch_masks(feedback: np.ndarray, valid: np.ndarray):
    """(positive_valid, negative_valid) position masks, both (B, t)."""
    pos = ((feedback == 1) & (valid > 0)).astype(np.uint8)
    neg = ((feedback == 0) & (valid > 0)).astype(np.uint8)
    return pos, neg


class ScoreMlp:
    """Two-layer scorer over concat(assumed target, branch row).

    Input width 2D, hidden D with ReLU, output width D (dimension-wise
    aggregation) or 1 (scalar aggregation mode).
    """

    def __init__(self, rng, embed_dim: int, out_dim: int, prefix: str):
        d = embed_dim
        self.w1 = Tensor(rng.uniform(-0.05, 0.05, (2 * d, d)).astype(FLOAT),
                         requires_grad=True, name=f"{prefix}.w1")
        self.b1 = Tensor(np.zeros(d, dtype=FLOAT), requires_grad=True,
                         name=f"{prefix}.b1")
        self.w2 = Tensor(rng.uniform(-0.05, 0.05, (d, out_dim)).astype(FLOAT),
                         requires_grad=True, name=f"{prefix}.w2")
        self.b2 = Tensor(np.zeros(out_dim, dtype=FLOAT), requires_grad=True,
                         name=f"{prefix}.b2")

    def params(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.w1, self.b1, self.w2, self.b2)}

    def forward(self, x: Tensor) -> Tensor:
        hidden = relu(add(matmul(x, self.w1), self.b1))
        return add(matmul(hidden, self.w2), self.b2)


def target_scores(scorer: ScoreMlp, target_vec: Tensor, branch_seq: Tensor) -> Tensor:
    """Score every branch row against the label-assumed target.

    target_vec (B, D) broadcast along the sequence axis and concatenated
    with branch_seq (B, t, D); returns (B, t, out_dim).
    """
    b, t, d = branch_seq.shape
    tiled = expand(reshape(target_vec, (b, 1, d)), (b, t, d))
    return scorer.forward(concat([tiled, branch_seq], axis=-1))


def aggregate(scores: Tensor, branch_seq: Tensor, branch_valid: np.ndarray):
    """Sequence-axis softmax of the scores restricted to branch rows.

    Dimension-wise: each feature column gets its own distribution over
    valid positions. Returns (weights (B,t,C), pooled (B,D)); an empty
    branch pools to the zero vector.
    """
    additive = np.where(branch_valid[..., None] > 0, 0.0, -np.inf).astype(FLOAT)
    weights = softmax(add(scores, Tensor(additive)), axis=1)
    pooled = reduce_sum(mul(weights, branch_seq), axis=1)
    return weights, pooled


def disentangle_loss(pooled_pos: Tensor, pooled_neg: Tensor) -> Tensor:
    """Mean cosine similarity between the two pooled interests.

    Value in [-1, 1]; scale-invariant; an all-zero branch contributes 0
    with zero gradient (norm floor).
    """
    return mean_all(cosine_similarity(pooled_pos, pooled_neg))
