"""Ranking/classification metrics, head-interaction accumulation,
length-bucket analysis, and the loss-weight sweep harness.

Metric conventions:
  - AUC is Mann-Whitney U / (n_pos * n_neg) with 0.5 credit for ties;
    single-class inputs report None (absent), never 0.
  - GAUC weighs each user's AUC by their example count; single-class
    users are excluded from numerator and denominator.
  - MRR@k / NDCG@k run over per-query rankings. The ranking protocol
    (declared in run metadata): each positive test target is ranked
    against the same user's negative test targets; a user without
    negative targets falls back to 99 seeded unseen items scored under
    the positive example's history. Ties rank optimistically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Batch, Example, STREAM_EVAL, batch_iter, make_batch, stream
from .errors import CompatibilityError, ConfigError, DataError

RANKING_PROTOCOL = ("positive test targets ranked against same-user negative "
                    "test targets; fallback: 99 seeded unseen candidate items")

DEFAULT_BUCKET_EDGES = (5, 15, 50, 100)


def auc(scores, labels) -> float | None:
    """Probability a positive outranks a negative; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    u = pos_rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties averaged (midrank convention)."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def gauc(user_ids, scores, labels) -> float | None:
    """Per-user AUC weighted by per-user example count."""
    user_ids = np.asarray(user_ids)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    weighted = 0.0
    total_weight = 0.0
    for user in np.unique(user_ids):
        pick = user_ids == user
        value = auc(scores[pick], labels[pick])
        if value is None:
            continue
        weight = int(pick.sum())
        weighted += weight * value
        total_weight += weight
    if total_weight == 0:
        return None
    return weighted / total_weight


def mrr_at_k(ranked_relevance, k: int = 10) -> float:
    """Mean reciprocal rank of the first relevant item within the cutoff."""
    total = 0.0
    for ranking in ranked_relevance:
        if len(ranking) == 0:
            raise DataError("empty candidate ranking")
        value = 0.0
        for rank, rel in enumerate(ranking[:k], start=1):
            if rel:
                value = 1.0 / rank
                break
        total += value
    return total / len(ranked_relevance)


def ndcg_at_k(ranked_relevance, k: int = 10) -> float:
    """DCG@k / IDCG@k with unit gains and 1/log2(rank+1) discounts."""
    total = 0.0
    for ranking in ranked_relevance:
        if len(ranking) == 0:
            raise DataError("empty candidate ranking")
        dcg = sum(1.0 / np.log2(rank + 1)
                  for rank, rel in enumerate(ranking[:k], start=1) if rel)
        n_rel = int(sum(ranking))
        if n_rel == 0:
            raise DataError("ranking without a relevant item")
        idcg = sum(1.0 / np.log2(rank + 1) for rank in range(1, min(k, n_rel) + 1))
        total += dcg / idcg
    return total / len(ranked_relevance)


@dataclass
class MetricsReport:
    auc: float | None
    gauc: float | None
    mrr: float | None
    ndcg: float | None
    k: int
    example_count: int
    buckets: list = field(default_factory=list)  # (lo, hi, count, auc|None)
    head_weights: np.ndarray | None = None
    protocol: str = RANKING_PROTOCOL

    def rows(self):
        yield "auc", self.auc
        yield "gauc", self.gauc
        yield f"mrr_at_{self.k}", self.mrr
        yield f"ndcg_at_{self.k}", self.ndcg
        yield "examples", float(self.example_count)


def predict_scores(model, examples, batch_size: int = 256) -> np.ndarray:
    """Positive-tower sigmoid scores in stable example order."""
    chunks = [model.scores(batch)
              for batch in batch_iter(examples, batch_size, model.cfg.max_len)]
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float32)


def evaluate(model, examples, k: int = 10, seed: int = 0,
             bucket_edges=DEFAULT_BUCKET_EDGES, batch_size: int = 256) -> MetricsReport:
    """Full metrics over an evaluation split."""
    if not examples:
        raise DataError("empty evaluation split")
    scores = predict_scores(model, examples, batch_size)
    labels = np.array([e.target_label for e in examples])
    users = np.array([e.user_id for e in examples])
    lengths = np.array([len(e.items) for e in examples])

    rankings = build_rankings(model, examples, scores, seed=seed,
                              batch_size=batch_size)
    report = MetricsReport(
        auc=auc(scores, labels),
        gauc=gauc(users, scores, labels),
        mrr=mrr_at_k(rankings, k) if rankings else None,
        ndcg=ndcg_at_k(rankings, k) if rankings else None,
        k=k,
        example_count=len(examples),
        buckets=bucket_by_length(scores, labels, lengths, bucket_edges),
    )
    return report


def build_rankings(model, examples, scores, seed: int = 0,
                   batch_size: int = 256, fallback_candidates: int = 99):
    """Per-positive-target candidate rankings (see module docstring)."""
    by_user: dict[int, list[int]] = {}
    for idx, e in enumerate(examples):
        by_user.setdefault(e.user_id, []).append(idx)

    rankings = []
    fallback: list[tuple[int, np.ndarray]] = []  # (example idx, candidate ids)
    rng = stream(seed, STREAM_EVAL)
    item_count = model.cfg.item_count
    for user in sorted(by_user):
        idxs = by_user[user]
        pos = [i for i in idxs if examples[i].target_label == 1]
        neg = [i for i in idxs if examples[i].target_label == 0]
        for i in pos:
            if neg:
                candidates = np.array([scores[i]] + [scores[j] for j in neg])
                relevance = np.zeros(len(candidates), dtype=np.int8)
                relevance[0] = 1
                order = np.argsort(-candidates, kind="stable")
                rankings.append(relevance[order].tolist())
            else:
                seen = set(examples[i].items.tolist()) | {examples[i].target_item}
                pool = np.setdiff1d(np.arange(1, item_count + 1),
                                    np.fromiter(seen, dtype=np.int64))
                if len(pool) == 0:
                    continue
                take = min(fallback_candidates, len(pool))
                fallback.append((i, rng.choice(pool, size=take, replace=False)))

    # score the fallback candidates under their example's own history
    for idx, candidates in fallback:
        base = examples[idx]
        variants = [Example(base.user_id, base.items, base.feedback, int(c),
                            0, base.target_time) for c in candidates]
        cand_scores = predict_scores(model, variants, batch_size)
        all_scores = np.concatenate([[scores[idx]], cand_scores])
        relevance = np.zeros(len(all_scores), dtype=np.int8)
        relevance[0] = 1
        order = np.argsort(-all_scores, kind="stable")
        rankings.append(relevance[order].tolist())
    return rankings


def bucket_by_length(scores, labels, lengths, edges=DEFAULT_BUCKET_EDGES):
    """Per-length-range AUC; a range missing a class reports None."""
    edges = list(edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError("bucket edges must be strictly increasing")
    bounds = [0] + edges + [np.inf]
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    lengths = np.asarray(lengths)
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        pick = (lengths > lo) & (lengths <= hi)
        value = auc(scores[pick], labels[pick]) if pick.any() else None
        out.append((lo, hi, int(pick.sum()), value))
    return out


def accumulate_head_weights(model, examples, batch_size: int = 256):
    """Sum attention mass per (source head, target head) pair.

    Only meaningful for the label-masked joint kernel: each admissible
    query head belongs to one feedback half, so rows split by source
    behavior. Returns (raw (H,H), row_normalized (H,H),
    positions (H,t,H,t) summed over examples).
    """
    if model.cfg.variant != "ffha":
        raise CompatibilityError(
            f"head-weight accumulation needs an ffha model, got {model.cfg.variant!r}")
    heads, t = model.cfg.heads, model.cfg.max_len
    positions = np.zeros((heads, t, heads, t), dtype=np.float64)
    for batch in batch_iter(examples, batch_size, model.cfg.max_len):
        fwd = model.forward(batch, want_probs=True)
        positions += fwd.encoder_probs.sum(axis=0, dtype=np.float64)
    raw = positions.sum(axis=(1, 3))
    sums = raw.sum(axis=1, keepdims=True)
    normalized = np.divide(raw, sums, out=np.zeros_like(raw), where=sums > 0)
    return raw, normalized, positions


def sweep_loss_weights(dataset, model_cfg, train_cfg, grid_bpr, grid_dis=None):
    """Train one seeded model per grid point; rows of
    (bpr weight, disentangle weight, best validation AUC or None)."""
    from .model import DfarModel  # local import keeps evaluation standalone
    from .prediction import LossWeights
    from .training import train_model

    if not grid_bpr:
        raise ConfigError("empty sweep grid")
    dis_values = list(grid_dis) if grid_dis else [train_cfg.weights.disentangle]
    rows = []
    for w_bpr in grid_bpr:
        for w_dis in dis_values:
            weights = LossWeights(bpr=w_bpr, disentangle=w_dis,
                                  reg=train_cfg.weights.reg)
            cell_cfg = train_cfg.with_weights(weights)
            try:
                model = DfarModel(model_cfg, seed=train_cfg.seed)
                history = train_model(model, dataset, cell_cfg)
                best = max((h.val_auc for h in history if h.val_auc is not None),
                           default=None)
                rows.append((w_bpr, w_dis, best))
            except Exception as exc:  # noqa: BLE001 - sweep must survive cells
                import logging
                logging.getLogger(__name__).warning(
                    "sweep cell (%g, %g) failed: %s", w_bpr, w_dis, exc)
                rows.append((w_bpr, w_dis, None))
    return rows
