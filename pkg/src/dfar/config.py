"""Run configuration: dataclass, flat key-value config files, validation.

Config files hold one `key value` pair per line (snake_case keys named
after RunConfig fields, `#` comments allowed). CLI flags override file
values; the environment variable DFAR_SEED backstops a missing seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .attention import MASK_MODES, VARIANTS
from .data import SPLIT_MODES
from .errors import ConfigError
from .model import AGGREGATIONS


@dataclass
class RunConfig:
    dataset: str = ""
    format: str = "auto"
    split_mode: str = "last-two-days"
    max_len: int = 50
    embed_dim: int = 32
    heads: int = 2
    mix_heads: int | None = None
    variant: str = "ffha"
    aggregation: str = "dimension"
    mask_mode: str = "masked"
    lambda_bpr: float = 1e-2
    lambda_d: float = 1e-2
    lambda_reg: float = 1e-6
    lr: float = 1e-4
    batch_size: int = 200
    epochs: int = 4
    patience: int = 2
    seed: int | None = None
    last_target_only: bool = False
    kernel_backend: str = "auto"
    k: int = 10

    def validate(self) -> "RunConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if self.split_mode not in SPLIT_MODES:
            raise ConfigError(f"split_mode must be one of {SPLIT_MODES}")
        if self.variant == "ffha" and self.heads % 2 != 0:
            raise ConfigError("ffha needs an even head count")
        for name in ("lambda_bpr", "lambda_d", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("max_len", "embed_dim", "heads", "batch_size", "epochs",
                     "patience", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        return self

    @property
    def resolved_seed(self) -> int:
        if self.seed is not None:
            return self.seed
        env = os.environ.get("DFAR_SEED")
        if env is not None:
            try:
                return int(env)
            except ValueError as exc:
                raise ConfigError(f"DFAR_SEED must be an integer, got {env!r}") from exc
        return 0


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_BOOL_FIELDS = {"last_target_only"}
_INT_FIELDS = {"max_len", "embed_dim", "heads", "mix_heads", "batch_size",
               "epochs", "patience", "seed", "k"}
_FLOAT_FIELDS = {"lambda_bpr", "lambda_d", "lambda_reg", "lr"}


def parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    if key in _BOOL_FIELDS:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes"):
            return True
        if lowered in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key} expects a boolean, got {raw!r}")
    try:
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} expects a number, got {raw!r}") from exc
    return raw


def load_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split(None, 1)
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'key value'")
            key = parts[0].replace("-", "_")
            values[key] = parse_value(key, parts[1].strip())
    return values


def build_config(file_path=None, overrides: dict | None = None) -> RunConfig:
    """File values first, explicit overrides on top, then validation."""
    values = load_config_file(file_path) if file_path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    cfg = RunConfig(**values)
    return cfg.validate()
