"""Full model: feedback-aware encoder, dual-interest layer, prediction
towers, and the loss assembly."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .attention import (AttentionBlock, AttentionConfig, embed_sequence)
from .data import Batch, STREAM_WEIGHTS, stream
from .dual_interest import (ScoreMlp, aggregate, branch_masks, disentangle_loss,
                            split_by_feedback, target_scores)
from .errors import ConfigError
from .prediction import (LossWeights, PredictionTower, bce_loss, bpr_loss,
                         joint_loss, sum_pool)
from .tensor import FLOAT, Tensor, add, concat, gather_rows, sigmoid

AGGREGATIONS = ("dimension", "scalar")


@dataclass
class ModelConfig:
    """Everything needed to rebuild the model body (stored in checkpoints)."""

    item_count: int                 # real item ids run 1..item_count
    embed_dim: int = 32
    heads: int = 2
    mix_heads: int | None = None
    max_len: int = 50
    variant: str = "ffha"           # encoder variant; ablation arms swap it
    aggregation: str = "dimension"  # Eq-ambiguous branch softmax, see spec flag
    mask_mode: str = "masked"

    def validate(self) -> "ModelConfig":
        if self.item_count < 1:
            raise ConfigError("item_count must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        self.attention_config().validate()
        return self

    def attention_config(self, variant: str | None = None) -> AttentionConfig:
        return AttentionConfig(embed_dim=self.embed_dim, heads=self.heads,
                               mix_heads=self.mix_heads, max_len=self.max_len,
                               variant=variant or self.variant,
                               mask_mode=self.mask_mode)


@dataclass
class ForwardResult:
    logit_pos: Tensor
    logit_neg: Tensor
    pooled_pos: Tensor
    pooled_neg: Tensor
    encoder_probs: np.ndarray | None = None


class DfarModel:
    """Owns every learnable tensor; forward builds the tape graph."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        rng = stream(seed, STREAM_WEIGHTS)
        d = cfg.embed_dim

        item_rows = np.asarray(
            rng.uniform(-0.05, 0.05, (cfg.item_count + 1, d)), dtype=FLOAT)
        item_rows[0] = 0.0  # padding row stays zero; masked grads keep it zero
        self.item_emb = Tensor(item_rows, requires_grad=True, name="embed.item")
        self.label_emb = Tensor(
            np.asarray(rng.uniform(-0.05, 0.05, (2, d)), dtype=FLOAT),
            requires_grad=True, name="embed.label")

        self.encoder = AttentionBlock(cfg.attention_config(), rng, prefix="encoder")
        branch_cfg = cfg.attention_config(variant="fha")
        self.pos_refiner = AttentionBlock(branch_cfg, rng, prefix="branch_pos.attn")
        self.neg_refiner = AttentionBlock(branch_cfg, rng, prefix="branch_neg.attn")

        score_out = d if cfg.aggregation == "dimension" else 1
        self.pos_scorer = ScoreMlp(rng, d, score_out, prefix="branch_pos.score")
        self.neg_scorer = ScoreMlp(rng, d, score_out, prefix="branch_neg.score")

        self.pos_tower = PredictionTower(rng, d, prefix="tower_pos")
        self.neg_tower = PredictionTower(rng, d, prefix="tower_neg")

    # -- parameters ----------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out = {self.item_emb.name: self.item_emb,
               self.label_emb.name: self.label_emb}
        for module in (self.encoder, self.pos_refiner, self.neg_refiner,
                       self.pos_scorer, self.neg_scorer,
                       self.pos_tower, self.neg_tower):
            out.update(module.params())
        return dict(sorted(out.items()))

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params().items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, p in self.params().items():
            p.data = snapshot[name].copy()

    # -- forward -------------------------------------------------------

    def forward(self, batch: Batch, want_probs: bool = False) -> ForwardResult:
        cfg = self.cfg
        valid = batch.valid
        feedback = batch.feedback

        embedded = embed_sequence(self.item_emb, self.label_emb,
                                  batch.item_ids, feedback, valid)
        encoded, probs = self.encoder.forward(embedded, valid, feedback=feedback,
                                              want_probs=want_probs)

        seq_pos, seq_neg = split_by_feedback(encoded, feedback, valid)
        pos_valid, neg_valid = branch_masks(feedback, valid)
        refined_pos, _ = self.pos_refiner.forward(seq_pos, pos_valid)
        refined_neg, _ = self.neg_refiner.forward(seq_neg, neg_valid)

        target_emb = gather_rows(self.item_emb, batch.target_ids)
        b = batch.size
        pos_row = gather_rows(self.label_emb, np.ones(b, dtype=np.int64))
        neg_row = gather_rows(self.label_emb, np.zeros(b, dtype=np.int64))
        target_pos = add(target_emb, pos_row)
        target_neg = add(target_emb, neg_row)

        scores_pos = target_scores(self.pos_scorer, target_pos, refined_pos)
        scores_neg = target_scores(self.neg_scorer, target_neg, refined_neg)
        _, pooled_pos = aggregate(scores_pos, refined_pos, pos_valid)
        _, pooled_neg = aggregate(scores_neg, refined_neg, neg_valid)

        seq_pool = sum_pool(encoded, valid)
        pos_pool = sum_pool(refined_pos, pos_valid)
        neg_pool = sum_pool(refined_neg, neg_valid)

        logit_pos = self.pos_tower.forward(
            concat([seq_pool, pos_pool, pooled_pos, target_pos], axis=-1))
        logit_neg = self.neg_tower.forward(
            concat([seq_pool, neg_pool, pooled_neg, target_neg], axis=-1))
        return ForwardResult(logit_pos, logit_neg, pooled_pos, pooled_neg,
                             encoder_probs=probs)

    # -- losses ----------------------------------------------------------

    def losses(self, batch: Batch, weights: LossWeights) -> dict[str, Tensor]:
        """Component losses plus the joint objective.

        Zero-weight components are never built, so their parameters stay
        off the tape entirely (the w/o-IBL and w/o-IDL arms test for
        absent gradients, not zero ones).
        """
        weights.validate()
        fwd = self.forward(batch)
        labels = batch.target_labels
        out = {"bce": bce_loss(fwd.logit_pos, labels)}
        bpr = None
        dis = None
        if weights.bpr > 0:
            bpr = bpr_loss(fwd.logit_pos, fwd.logit_neg, labels)
            out["bpr"] = bpr
        if weights.disentangle > 0:
            dis = disentangle_loss(fwd.pooled_pos, fwd.pooled_neg)
            out["disentangle"] = dis
        out["joint"] = joint_loss(out["bce"], bpr, dis,
                                  self.params().values(), weights)
        return out

    def scores(self, batch: Batch) -> np.ndarray:
        """sigmoid(positive-tower logit) per example, detached."""
        fwd = self.forward(batch)
        return sigmoid(fwd.logit_pos).data.copy()


def ablation_config(base: ModelConfig, arm: str) -> tuple[ModelConfig, LossWeights]:
    """The four ablation arms, from a full-model config and default weights.

    no-fha  -> mha encoder; no-mo -> fha encoder (label mask off);
    no-idl  -> disentangle weight 0; no-ibl -> bpr weight 0.
    """
    weights = LossWeights()
    if arm == "full":
        return base, weights
    if arm == "no-fha":
        return replace(base, variant="mha"), weights
    if arm == "no-mo":
        return replace(base, variant="fha"), weights
    if arm == "no-idl":
        return base, replace(weights, disentangle=0.0)
    if arm == "no-ibl":
        return base, replace(weights, bpr=0.0)
    raise ConfigError(f"unknown ablation arm {arm!r}")
