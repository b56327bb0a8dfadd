"""Command-line surface: train, eval, export-attention, synth, sweep.

Exit codes: 0 success, 2 config/validation, 3 checkpoint/dataset
compatibility, 4 data parse or missing file. Every run writes a
manifest (resolved config, seed, dataset digest, kernel backend) and
deterministic CSV outputs with fixed 6-decimal formatting.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, build_config, load_config_file
from .data import (SynthSpec, file_digest, item_space_digest, load_interactions,
                   synth_generate, temporal_split, write_tsv)
from .errors import CompatibilityError, ConfigError, DataError, DfarError
from .evaluation import (RANKING_PROTOCOL, accumulate_head_weights, evaluate,
                         sweep_loss_weights)
from .model import DfarModel, ModelConfig
from .prediction import LossWeights
from .training import TrainConfig, train_model

log = logging.getLogger("dfar")


def fmt(value) -> str:
    """Fixed 6-decimal cell; absent metrics serialize as empty."""
    return "" if value is None else f"{float(value):.6f}"


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) if isinstance(c, (str, int)) else fmt(c)
                              for c in row) + "\n")


def write_manifest(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--dataset", help="input TSV path")
    p.add_argument("--format", choices=("auto", "rating", "feedback"))
    p.add_argument("--split-mode", choices=("last-two-days", "last-day-noon"))
    p.add_argument("--max-len", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--mix-heads", type=int)
    p.add_argument("--variant", choices=("mha", "tha", "fha", "ffha"))
    p.add_argument("--aggregation", choices=("dimension", "scalar"))
    p.add_argument("--mask-mode", choices=("masked", "literal"))
    p.add_argument("--lambda-bpr", type=float)
    p.add_argument("--lambda-d", type=float)
    p.add_argument("--lambda-reg", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--last-target-only", action="store_const", const=True)
    p.add_argument("--kernel-backend", choices=("auto", "native", "python"))


_CONFIG_KEYS = tuple(RunConfig().__dict__)


def _config_from_args(args) -> RunConfig:
    overrides = {key: getattr(args, key, None) for key in _CONFIG_KEYS}
    cfg = build_config(args.config, overrides)
    if not cfg.dataset:
        raise ConfigError("a dataset path is required (--dataset or config file)")
    return cfg


def _load_split(cfg: RunConfig):
    interactions = load_interactions(cfg.dataset, cfg.format)
    if not interactions:
        raise DataError(f"{cfg.dataset}: no usable interactions")
    dataset = temporal_split(interactions, cfg.split_mode, cfg.last_target_only)
    return interactions, dataset


def _base_manifest(command: str, cfg: RunConfig) -> dict:
    payload = asdict(cfg)
    payload["seed"] = cfg.resolved_seed
    return {
        "command": command,
        "config": payload,
        "dataset_sha256": file_digest(cfg.dataset),
        "kernel_backend": kernels.backend_name(),
        "ranking_protocol": RANKING_PROTOCOL,
        "version": __version__,
    }


def _pick_split(dataset, name: str):
    examples = getattr(dataset, name)
    if not examples:
        raise DataError(f"split {name!r} is empty")
    return examples


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    kernels.select_backend(cfg.kernel_backend)
    interactions, dataset = _load_split(cfg)
    seed = cfg.resolved_seed

    model_cfg = ModelConfig(item_count=dataset.item_count, embed_dim=cfg.embed_dim,
                            heads=cfg.heads, mix_heads=cfg.mix_heads,
                            max_len=cfg.max_len, variant=cfg.variant,
                            aggregation=cfg.aggregation, mask_mode=cfg.mask_mode)
    model = DfarModel(model_cfg, seed=seed)
    train_cfg = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs,
                            patience=cfg.patience, seed=seed,
                            weights=LossWeights(bpr=cfg.lambda_bpr,
                                                disentangle=cfg.lambda_d,
                                                reg=cfg.lambda_reg))
    history = train_model(model, dataset, train_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.ckpt", model,
                    item_digest=dataset.item_digest)
    write_csv(out / "history.csv", ["epoch", "train_loss", "val_auc"],
              [(str(h.epoch), h.train_loss, h.val_auc) for h in history])
    manifest = _base_manifest("train", cfg)
    manifest["item_count"] = dataset.item_count
    manifest["user_count"] = dataset.user_count
    manifest["examples"] = {"train": len(dataset.train),
                            "validation": len(dataset.validation),
                            "test": len(dataset.test)}
    write_manifest(out / "manifest.json", manifest)
    best = max((h.val_auc for h in history if h.val_auc is not None), default=None)
    print(f"trained {len(history)} epochs; best val AUC "
          f"{fmt(best) or 'n/a'}; outputs in {out}")
    return 0


def _load_compatible(args, cfg: RunConfig):
    model, stored_digest = load_checkpoint(args.checkpoint)
    interactions, dataset = _load_split(cfg)
    if stored_digest and dataset.item_digest != stored_digest:
        raise CompatibilityError(
            "checkpoint was trained on a different item id space than this dataset")
    if dataset.item_count > model.cfg.item_count:
        raise CompatibilityError(
            f"dataset has {dataset.item_count} items, checkpoint supports "
            f"{model.cfg.item_count}")
    return model, dataset


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    kernels.select_backend(cfg.kernel_backend)
    model, dataset = _load_compatible(args, cfg)
    examples = _pick_split(dataset, args.split)
    report = evaluate(model, examples, k=cfg.k, seed=cfg.resolved_seed,
                      batch_size=cfg.batch_size)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", ["metric", "value"],
              [(name, value) for name, value in report.rows()])
    write_csv(out / "buckets.csv", ["length_min", "length_max", "count", "auc"],
              [(str(int(lo)), "inf" if hi == float("inf") else str(int(hi)),
                str(count), value) for lo, hi, count, value in report.buckets])
    manifest = _base_manifest("eval", cfg)
    manifest["checkpoint"] = str(args.checkpoint)
    manifest["split"] = args.split
    write_manifest(out / "eval_manifest.json", manifest)
    print(f"{args.split} AUC {fmt(report.auc) or 'n/a'} GAUC "
          f"{fmt(report.gauc) or 'n/a'} MRR@{report.k} {fmt(report.mrr) or 'n/a'} "
          f"NDCG@{report.k} {fmt(report.ndcg) or 'n/a'}")
    return 0


def cmd_export_attention(args) -> int:
    cfg = _config_from_args(args)
    kernels.select_backend(cfg.kernel_backend)
    model, dataset = _load_compatible(args, cfg)
    if model.cfg.variant != "ffha":
        raise CompatibilityError(
            f"export-attention needs an ffha checkpoint, got {model.cfg.variant!r}")
    examples = _pick_split(dataset, args.split)
    raw, normalized, positions = accumulate_head_weights(
        model, examples, batch_size=cfg.batch_size)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    heads = raw.shape[0]
    write_csv(out / "head_weights.csv", ["h1", "h2", "weight"],
              [(str(h1), str(h2), raw[h1, h2])
               for h1 in range(heads) for h2 in range(heads)])
    write_csv(out / "head_weights_normalized.csv", ["h1", "h2", "weight"],
              [(str(h1), str(h2), normalized[h1, h2])
               for h1 in range(heads) for h2 in range(heads)])
    t = positions.shape[1]
    write_csv(out / "attention_positions.csv", ["h1", "h2", "i", "j", "weight"],
              [(str(h1), str(h2), str(i), str(j), positions[h1, i, h2, j])
               for h1 in range(heads) for h2 in range(heads)
               for i in range(t) for j in range(t)
               if positions[h1, i, h2, j] != 0.0])
    manifest = _base_manifest("export-attention", cfg)
    manifest["checkpoint"] = str(args.checkpoint)
    manifest["split"] = args.split
    write_manifest(out / "attention_manifest.json", manifest)
    print(f"accumulated head weights over {len(examples)} examples -> {out}")
    return 0


_SYNTH_KEYS = tuple(SynthSpec().__dict__)
_ROW_COMPLEMENTS = {"p_pos_given_neg": "p_neg_given_neg",
                    "p_pos_given_pos": "p_neg_given_pos"}


def load_synth_spec(path) -> SynthSpec:
    """Parse a synth spec file; transition rows must sum to 1 (1e-9)."""
    values = {}
    extras = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split(None, 1)
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'key value'")
            key = parts[0].replace("-", "_")
            raw = parts[1].strip()
            if key in _ROW_COMPLEMENTS:
                extras[key] = float(raw)
            elif key in _SYNTH_KEYS:
                current = getattr(SynthSpec(), key)
                values[key] = type(current)(raw) if not isinstance(current, int) \
                    else int(raw)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown synth key {key!r}")
    spec = SynthSpec(**values)
    for pos_key, neg_key in _ROW_COMPLEMENTS.items():
        if pos_key in extras:
            total = extras[pos_key] + getattr(spec, neg_key)
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(
                    f"transition row {neg_key}/{pos_key} sums to {total}, expected 1")
    return spec.validate()


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.users is not None:
        spec.users = args.users
    spec.validate()
    interactions = synth_generate(spec)
    write_tsv(interactions, args.out, spec=spec)
    print(f"wrote {len(interactions)} interactions for {spec.users} users -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    kernels.select_backend(cfg.kernel_backend)
    _, dataset = _load_split(cfg)
    grid = [float(tok) for tok in args.grid.split(",") if tok]
    grid_d = [float(tok) for tok in args.grid_d.split(",")] if args.grid_d else None
    model_cfg = ModelConfig(item_count=dataset.item_count, embed_dim=cfg.embed_dim,
                            heads=cfg.heads, mix_heads=cfg.mix_heads,
                            max_len=cfg.max_len, variant=cfg.variant,
                            aggregation=cfg.aggregation, mask_mode=cfg.mask_mode)
    train_cfg = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs,
                            patience=cfg.patience, seed=cfg.resolved_seed,
                            weights=LossWeights(bpr=cfg.lambda_bpr,
                                                disentangle=cfg.lambda_d,
                                                reg=cfg.lambda_reg))
    rows = sweep_loss_weights(dataset, model_cfg, train_cfg, grid, grid_d)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep.csv", ["lambda_bpr", "lambda_d", "val_auc"],
              [(f"{b:g}", f"{d:g}", auc_value) for b, d, auc_value in rows])
    manifest = _base_manifest("sweep", cfg)
    manifest["grid"] = grid
    manifest["grid_d"] = grid_d
    write_manifest(out / "sweep_manifest.json", manifest)
    print(f"swept {len(rows)} cells -> {out / 'sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfar",
        description="feedback-aware sequential recommender (factorization-heads "
                    "attention, dual interests, contrastive towers)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_model_flags(p)
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics for a checkpoint on a dataset split")
    _add_model_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "validation", "test"))
    p.add_argument("--k", type=int)
    p.add_argument("--out", default="runs/eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-attention",
                       help="accumulated head-interaction weights as CSV")
    _add_model_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "validation", "test"))
    p.add_argument("--out", default="runs/attention")
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("synth", help="generate a planted-rule synthetic corpus")
    p.add_argument("--spec", help="synth spec file (key value lines)")
    p.add_argument("--seed", type=int)
    p.add_argument("--users", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="loss-weight grid search")
    _add_model_flags(p)
    p.add_argument("--grid", required=True,
                   help="comma-separated lambda_bpr values")
    p.add_argument("--grid-d", help="comma-separated lambda_d values")
    p.add_argument("--out", default="runs/sweep")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CompatibilityError as exc:
        print(f"compatibility error: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4
    except DfarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
