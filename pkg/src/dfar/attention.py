"""Feedback-aware embedding and the four attention kernels.

Variants over a padded batch x of shape (B, t, D):

  mha    independent per-head softmax(q_h k_h^T / sqrt(D)) v_h
  tha    mha with learned head mixing applied to the logits before
         softmax (H -> H') and to the attention maps after (H' -> H)
  fha    every query head attends jointly over the combined
         (key head, key position) axis, so H heads of parameters
         expose H x H head-pair relation blocks
  ffha   fha with a label mask: the first H/2 heads belong to
         negative feedback, the last H/2 to positive, and a
         (head, position) cell participates only when its head half
         matches that position's feedback bit

mha and tha share one pipeline (tha with identity mixing reduces to
mha bitwise); fha/ffha run through the fused joint kernel from
`dfar.kernels`. Per-head width equals the embedding width D, so each
projection table is (H, D, D) and the output projection is (H*D, D).

Mask conventions: `valid` is 1 at real positions, 0 at padding. Keys
are dropped by -inf logits (or by the kernel keep masks); a query row
with no admissible key, and every padded row, comes out as an exact
zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .tensor import (FLOAT, Tensor, add, gather_rows, matmul, mul, record_op,
                     reshape, scale, softmax, transpose)

VARIANTS = ("mha", "tha", "fha", "ffha")
MASK_MODES = ("masked", "literal")


@dataclass
class AttentionConfig:
    """Hyper-parameters shared by all attention variants."""

    embed_dim: int = 32
    heads: int = 2
    mix_heads: int | None = None  # tha intermediate head count, defaults to heads
    max_len: int = 50
    variant: str = "ffha"
    mask_mode: str = "masked"

    def validate(self) -> "AttentionConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.embed_dim < 1 or self.max_len < 1 or self.heads < 1:
            raise ConfigError("embed_dim, heads and max_len must be positive")
        if self.variant == "ffha" and self.heads % 2 != 0:
            raise ConfigError("ffha needs an even head count (feedback halves)")
        if self.mix_heads is not None and self.mix_heads < 1:
            raise ConfigError("mix_heads must be positive")
        return self

    @property
    def mix_heads_effective(self) -> int:
        return self.heads if self.mix_heads is None else self.mix_heads


def head_halves(heads: int) -> np.ndarray:
    """Feedback half per head: 0 (negative) for the first H/2, 1 after."""
    if heads % 2 != 0:
        raise ConfigError(f"label-mask halves need an even head count, got {heads}")
    return (np.arange(heads) >= heads // 2).astype(np.int8)


def feedback_head_bits(feedback: np.ndarray, valid: np.ndarray, heads: int) -> np.ndarray:
    """(B, H, t) admissibility bits: head half matches the position's label.

    Padded positions are inadmissible for every head.
    """
    halves = head_halves(heads)
    bits = (halves[None, :, None] == feedback[:, None, :]) & (valid[:, None, :] > 0)
    return bits.astype(np.uint8)


def build_label_mask(feedback, pad_mask, heads: int) -> np.ndarray:
    """Dense (H, H, t, t) label mask for one sequence.

    mask[h1, h2, i, j] = 1 iff h1's half matches feedback[i], h2's half
    matches feedback[j], and neither i nor j is padded. Factorizes as
    an outer product of per-(head, position) bits, which is what the
    fused kernels consume.
    """
    feedback = np.asarray(feedback, dtype=np.int8)
    pad_mask = np.asarray(pad_mask, dtype=np.uint8)
    valid = (1 - pad_mask).astype(np.uint8)
    bits = feedback_head_bits(feedback[None, :], valid[None, :], heads)[0]  # (H, t)
    return (bits[:, None, :, None] & bits[None, :, None, :]).astype(np.uint8)


def embed_sequence(item_table: Tensor, label_table: Tensor,
                   item_ids: np.ndarray, feedback: np.ndarray,
                   valid: np.ndarray) -> Tensor:
    """Item embedding plus label embedding, exact zeros at padding."""
    items = gather_rows(item_table, item_ids.astype(np.int64))
    labels = gather_rows(label_table, feedback.astype(np.int64))
    mask = Tensor(valid[..., None].astype(FLOAT))
    return mul(add(items, labels), mask)


def joint_attention(q: Tensor, k: Tensor, v: Tensor,
                    q_keep: np.ndarray, k_keep: np.ndarray,
                    logit_scale: float):
    """Fused joint-softmax attention as a single tape primitive.

    Returns (context (B,H,t,D) tensor, probs (B,H,t,H,t) ndarray).
    Forward and backward run on the selected kernel backend.
    """
    backend = kernels.get_backend()
    out_data, probs = backend.joint_attention_forward(
        q.data, k.data, v.data, q_keep, k_keep, np.float32(logit_scale))
    out = Tensor(out_data)

    def backward(g):
        gq, gk, gv = backend.joint_attention_backward(
            np.ascontiguousarray(g, dtype=np.float32), probs,
            q.data, k.data, v.data, np.float32(logit_scale))
        return ((q, gq), (k, gk), (v, gv))

    return record_op(out, (q, k, v), backward), probs


def _uniform(rng, shape) -> np.ndarray:
    return rng.uniform(-0.05, 0.05, size=shape).astype(FLOAT)


class AttentionBlock:
    """One attention layer: projections, the selected kernel, output merge."""

    def __init__(self, cfg: AttentionConfig, rng, prefix: str):
        cfg.validate()
        self.cfg = cfg
        d, h = cfg.embed_dim, cfg.heads
        self.prefix = prefix
        self.query_proj = Tensor(_uniform(rng, (h, d, d)), requires_grad=True,
                                 name=f"{prefix}.query_proj")
        self.key_proj = Tensor(_uniform(rng, (h, d, d)), requires_grad=True,
                               name=f"{prefix}.key_proj")
        self.value_proj = Tensor(_uniform(rng, (h, d, d)), requires_grad=True,
                                 name=f"{prefix}.value_proj")
        self.out_proj = Tensor(_uniform(rng, (h * d, d)), requires_grad=True,
                               name=f"{prefix}.out_proj")
        if cfg.variant == "tha":
            hp = cfg.mix_heads_effective
            self.mix_pre = Tensor(_uniform(rng, (hp, h)), requires_grad=True,
                                  name=f"{prefix}.mix_pre")
            self.mix_post = Tensor(_uniform(rng, (h, hp)), requires_grad=True,
                                   name=f"{prefix}.mix_post")

    def params(self) -> dict[str, Tensor]:
        out = {t.name: t for t in (self.query_proj, self.key_proj,
                                   self.value_proj, self.out_proj)}
        if self.cfg.variant == "tha":
            out[self.mix_pre.name] = self.mix_pre
            out[self.mix_post.name] = self.mix_post
        return out

    # -- forward ------------------------------------------------------

    def forward(self, x: Tensor, valid: np.ndarray, feedback: np.ndarray | None = None,
                want_probs: bool = False):
        """Run the configured variant.

        x        (B, t, D) tensor
        valid    (B, t) 1 = real position
        feedback (B, t) labels, required for ffha
        Returns (out (B,t,D), probs ndarray or None). probs shape is
        (B,H,t,H,t) for fha/ffha, (B,H,t,t) for mha/tha.
        """
        cfg = self.cfg
        b, t, d = x.shape
        xh = reshape(x, (b, 1, t, d))
        q = matmul(xh, self.query_proj)
        k = matmul(xh, self.key_proj)
        v = matmul(xh, self.value_proj)
        logit_scale = 1.0 / float(np.sqrt(d))

        if cfg.variant in ("mha", "tha"):
            ctx, probs = self._per_head(q, k, v, valid, logit_scale)
        elif cfg.variant == "ffha" and cfg.mask_mode == "literal":
            ctx, probs = self._joint_literal(q, k, v, valid, feedback, logit_scale)
        else:
            if cfg.variant == "ffha":
                if feedback is None:
                    raise ConfigError("ffha needs feedback labels")
                keep = feedback_head_bits(feedback, valid, cfg.heads)
                q_keep, k_keep = keep, keep
            else:
                tiled = np.ascontiguousarray(
                    np.broadcast_to(valid[:, None, :], (b, cfg.heads, t))).astype(np.uint8)
                q_keep, k_keep = tiled, tiled
            ctx, probs = joint_attention(q, k, v, q_keep, k_keep, logit_scale)

        merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, t, cfg.heads * d))
        out = matmul(merged, self.out_proj)
        out = mul(out, Tensor(valid[..., None].astype(FLOAT)))
        return out, (probs if want_probs else None)

    def _per_head(self, q, k, v, valid, logit_scale):
        """Shared mha/tha pipeline; tha adds the two mixing stages.

        The pad mask is applied after pre-softmax mixing: mixing -inf
        logits through a weight matrix would produce NaN (0 * -inf).
        """
        cfg = self.cfg
        logits = scale(matmul(q, transpose(k, (0, 1, 3, 2))), logit_scale)
        if cfg.variant == "tha":
            logits = self._mix(logits, self.mix_pre)
        additive = np.where(valid[:, None, None, :] > 0, 0.0, -np.inf).astype(FLOAT)
        probs = softmax(add(logits, Tensor(additive)), axis=-1)
        if cfg.variant == "tha":
            probs = self._mix(probs, self.mix_post)
        ctx = matmul(probs, v)
        return ctx, probs.data

    def _mix(self, maps: Tensor, weight: Tensor) -> Tensor:
        """Linear head mixing: out[k] = sum_h weight[k, h] * maps[h]."""
        b, h_in, t1, t2 = maps.shape
        flat = transpose(reshape(maps, (b, h_in, t1 * t2)), (0, 2, 1))
        mixed = matmul(flat, transpose(weight, (1, 0)))
        return reshape(transpose(mixed, (0, 2, 1)), (b, weight.shape[0], t1, t2))

    def _joint_literal(self, q, k, v, valid, feedback, logit_scale):
        """Eq-as-printed compatibility mode: multiply the label mask into
        the logits (masked cells become 0, not -inf). Padding still uses
        -inf: pads are plumbing, not part of the label-mask semantics."""
        cfg = self.cfg
        if feedback is None:
            raise ConfigError("ffha needs feedback labels")
        b, h, t, d = q.shape
        width = h * t
        bits = feedback_head_bits(feedback, np.ones_like(valid), cfg.heads)  # label-only
        label = (bits[:, :, :, None, None] & bits[:, None, None, :, :]).astype(FLOAT)
        label = label.reshape(b, h, t, width)
        pad = np.where(
            np.broadcast_to(valid[:, None, :], (b, h, t)).reshape(b, 1, 1, width) > 0,
            0.0, -np.inf).astype(FLOAT)

        k_flat = reshape(k, (b, 1, width, d))
        v_flat = reshape(v, (b, 1, width, d))
        logits = scale(matmul(q, transpose(k_flat, (0, 1, 3, 2))), logit_scale)
        logits = add(mul(logits, Tensor(label)), Tensor(pad))
        probs = softmax(logits, axis=-1)
        ctx = matmul(probs, v_flat)
        return ctx, probs.data.reshape(b, h, t, h, t)


def attention_param_count(cfg: AttentionConfig) -> int:
    """Learnable scalar count of one block, from shapes alone."""
    d, h = cfg.embed_dim, cfg.heads
    count = 3 * h * d * d + h * d * d
    if cfg.variant == "tha":
        count += 2 * h * cfg.mix_heads_effective
    return count
