"""Pure-numpy joint-attention kernels (fallback backend).

The joint kernel lets every query head attend over the combined
(key head, key position) axis in one softmax. Realized here as
reshape + matmul so the whole thing stays vectorized; the compiled
backend in `_native` fuses the same math into single passes.

Shapes:
    q, k, v          (B, H, t, D) float32
    q_keep, k_keep   (B, H, t)    uint8, 1 = participates
    out              (B, H, t, D) float32
    probs            (B, H, t, H, t) float32, exact zeros at dropped cells
"""

import numpy as np

BACKEND_NAME = "python"


def joint_attention_forward(q, k, v, q_keep, k_keep, scale):
    b, h, t, d = q.shape
    width = h * t
    q_rows = q.reshape(b, width, d)
    k_rows = k.reshape(b, width, d)
    v_rows = v.reshape(b, width, d)

    logits = (q_rows @ k_rows.transpose(0, 2, 1)) * np.float32(scale)
    drop = k_keep.reshape(b, 1, width) == 0
    logits = np.where(drop, -np.inf, logits)

    peak = logits.max(axis=-1, keepdims=True)
    shifted = np.exp(logits - np.where(np.isfinite(peak), peak, 0.0))
    total = shifted.sum(axis=-1, keepdims=True)
    probs = np.divide(shifted, total, out=np.zeros_like(shifted), where=total > 0)
    probs *= q_keep.reshape(b, width, 1)
    probs = probs.astype(np.float32)

    out = probs @ v_rows
    return (np.ascontiguousarray(out.reshape(b, h, t, d)),
            np.ascontiguousarray(probs.reshape(b, h, t, h, t)))


def joint_attention_backward(g_out, probs, q, k, v, scale):
    b, h, t, d = q.shape
    width = h * t
    p = probs.reshape(b, width, width)
    g = g_out.reshape(b, width, d).astype(np.float32, copy=False)
    q_rows = q.reshape(b, width, d)
    k_rows = k.reshape(b, width, d)
    v_rows = v.reshape(b, width, d)

    gv = p.transpose(0, 2, 1) @ g
    gp = g @ v_rows.transpose(0, 2, 1)
    inner = (gp * p).sum(axis=-1, keepdims=True)
    # dropped cells carry p == 0 exactly, so they contribute nothing
    glogits = p * (gp - inner)
    gq = (glogits @ k_rows) * np.float32(scale)
    gk = (glogits.transpose(0, 2, 1) @ q_rows) * np.float32(scale)
    return (np.ascontiguousarray(gq.reshape(b, h, t, d)),
            np.ascontiguousarray(gk.reshape(b, h, t, d)),
            np.ascontiguousarray(gv.reshape(b, h, t, d)))
