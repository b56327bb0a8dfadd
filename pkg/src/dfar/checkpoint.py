"""Checkpoint container: `dfar-ckpt v1`, named float32 arrays.

Layout (binary file):

    dfar-ckpt v1\n
    name <array name>\n
    shape <d0> <d1> ...\n
    <row-major little-endian float32 payload>
    ... repeated per array, names in sorted order ...

Model hyper-parameters ride along as reserved `_meta.*` arrays so a
checkpoint alone can rebuild the model and verify dataset
compatibility. Integers stay exact in float32 below 2^24; the item-id
digest is stored one byte per element.
"""

from __future__ import annotations

import numpy as np

from .errors import CompatibilityError, DataError
from .model import DfarModel, ModelConfig

MAGIC = "dfar-ckpt v1"

_VARIANTS = ("mha", "tha", "fha", "ffha")
_AGGREGATIONS = ("dimension", "scalar")
_MASK_MODES = ("masked", "literal")


def _meta_arrays(model: DfarModel) -> dict[str, np.ndarray]:
    cfg = model.cfg
    dims = np.array([
        cfg.embed_dim,
        cfg.heads,
        0 if cfg.mix_heads is None else cfg.mix_heads,
        cfg.max_len,
        _VARIANTS.index(cfg.variant),
        _AGGREGATIONS.index(cfg.aggregation),
        _MASK_MODES.index(cfg.mask_mode),
        cfg.item_count,
        model.seed,
    ], dtype=np.float32)
    return {"_meta.dims": dims}


def save_checkpoint(path, model: DfarModel, item_digest: bytes = b"") -> None:
    arrays = dict(model.params())
    payloads = {name: p.data for name, p in arrays.items()}
    payloads.update(_meta_arrays(model))
    if item_digest:
        payloads["_meta.item_digest"] = np.frombuffer(item_digest, dtype=np.uint8
                                                      ).astype(np.float32)
    with open(path, "wb") as fh:
        fh.write((MAGIC + "\n").encode())
        for name in sorted(payloads):
            data = np.ascontiguousarray(payloads[name], dtype=np.float32)
            fh.write(f"name {name}\n".encode())
            fh.write(("shape " + " ".join(str(d) for d in data.shape) + "\n").encode())
            fh.write(data.astype("<f4", copy=False).tobytes())


def read_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.readline().decode(errors="replace").rstrip("\n")
        if magic != MAGIC:
            raise DataError(f"{path}: not a checkpoint (header {magic!r})")
        arrays: dict[str, np.ndarray] = {}
        while True:
            name_line = fh.readline()
            if not name_line:
                break
            name_line = name_line.decode().rstrip("\n")
            if not name_line.startswith("name "):
                raise DataError(f"{path}: corrupt checkpoint near {name_line!r}")
            name = name_line[len("name "):]
            shape_line = fh.readline().decode().rstrip("\n")
            if not shape_line.startswith("shape"):
                raise DataError(f"{path}: missing shape for {name}")
            shape = tuple(int(tok) for tok in shape_line.split()[1:])
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(count * 4)
            if len(payload) != count * 4:
                raise DataError(f"{path}: truncated payload for {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return arrays


def config_from_arrays(arrays: dict[str, np.ndarray]) -> tuple[ModelConfig, int]:
    if "_meta.dims" not in arrays:
        raise DataError("checkpoint lacks _meta.dims")
    dims = arrays["_meta.dims"].astype(np.int64)
    cfg = ModelConfig(
        item_count=int(dims[7]),
        embed_dim=int(dims[0]),
        heads=int(dims[1]),
        mix_heads=None if dims[2] == 0 else int(dims[2]),
        max_len=int(dims[3]),
        variant=_VARIANTS[int(dims[4])],
        aggregation=_AGGREGATIONS[int(dims[5])],
        mask_mode=_MASK_MODES[int(dims[6])],
    )
    return cfg, int(dims[8])


def load_checkpoint(path) -> tuple[DfarModel, bytes]:
    """Rebuild the model. Returns (model, stored item digest)."""
    arrays = read_arrays(path)
    cfg, seed = config_from_arrays(arrays)
    model = DfarModel(cfg, seed=seed)
    for name, param in model.params().items():
        if name not in arrays:
            raise DataError(f"checkpoint missing array {name}")
        if tuple(arrays[name].shape) != param.shape:
            raise CompatibilityError(
                f"checkpoint array {name} has shape {arrays[name].shape}, "
                f"model expects {param.shape}")
        param.data = np.ascontiguousarray(arrays[name], dtype=np.float32)
    digest = b""
    if "_meta.item_digest" in arrays:
        digest = bytes(arrays["_meta.item_digest"].astype(np.uint8).tolist())
    return model, digest
