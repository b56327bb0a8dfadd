"""Mini-batch Adam training with validation-AUC early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

from .data import STREAM_SHUFFLE, SplitDataset, batch_iter, stream
from .errors import DataError
from .evaluation import auc, predict_scores
from .optim import Adam
from .prediction import LossWeights
from .tensor import GradientTape

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 200
    epochs: int = 4
    patience: int = 2          # consecutive non-improving epochs before stopping
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def with_weights(self, weights: LossWeights) -> "TrainConfig":
        return replace(self, weights=weights)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: float | None
    seconds: float


def train_model(model, dataset: SplitDataset, cfg: TrainConfig) -> list[EpochStats]:
    """Train in place; weights end at the best-validation epoch.

    Stops once validation AUC has failed to improve for `patience`
    consecutive epochs. Improvement means strictly greater; an
    undefined AUC (single-class validation) counts as no improvement.
    """
    if not dataset.train:
        raise DataError("empty training set")
    cfg.weights.validate()
    params = model.params()
    optimizer = Adam(params, lr=cfg.lr)
    history: list[EpochStats] = []
    best_auc = -1.0
    best_state = model.snapshot()
    stale = 0

    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE, epoch)
        loss_total = 0.0
        seen = 0
        for batch in batch_iter(dataset.train, cfg.batch_size, model.cfg.max_len,
                                rng=shuffle_rng):
            with GradientTape() as tape:
                losses = model.losses(batch, cfg.weights)
            grads = tape.gradients(losses["joint"], params=params.values())
            optimizer.step(grads)
            loss_total += losses["joint"].item() * batch.size
            seen += batch.size

        val_auc = None
        if dataset.validation:
            val_scores = predict_scores(model, dataset.validation, cfg.batch_size)
            val_labels = [e.target_label for e in dataset.validation]
            val_auc = auc(val_scores, val_labels)
        stats = EpochStats(epoch=epoch, train_loss=loss_total / max(seen, 1),
                           val_auc=val_auc, seconds=time.perf_counter() - start)
        history.append(stats)
        log.info("epoch %d: loss %.6f val_auc %s (%.1fs)", epoch, stats.train_loss,
                 "n/a" if val_auc is None else f"{val_auc:.6f}", stats.seconds)

        if val_auc is not None and val_auc > best_auc:
            best_auc = val_auc
            best_state = model.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop after %d stale epochs", stale)
                break

    model.restore(best_state)
    return history
