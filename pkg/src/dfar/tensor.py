"""Dense float32 tensors with a reverse-mode gradient tape.

Every numeric value in the model is a `Tensor` wrapping a row-major
float32 numpy array. Forward ops compute eagerly; while a
`GradientTape` is active, each op that touches a watched tensor
appends one node to the tape. `GradientTape.gradients(loss)` replays
the nodes in reverse append order exactly once, accumulating
derivatives. Tensors never reachable from the loss simply do not
appear in the result (absent, not zero-filled).

Conventions:
  - float32 everywhere; intermediate reductions stay in float32.
  - masking uses -inf logits; `softmax` maps fully masked slices to
    all-zero rows instead of NaN.
  - broadcasting follows numpy's trailing-dimension alignment only.
  - tensors are immutable after construction. The optimizer swaps the
    `.data` array of leaf parameters between passes; nothing mutates
    arrays that a tape node has captured.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DataError, DimensionError, NumericError

FLOAT = np.float32
LOG_FLOOR = 1e-12
NORM_FLOOR = 1e-12

_ACTIVE_TAPE = None


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=FLOAT)
    return np.ascontiguousarray(arr)


class Tensor:
    """Immutable dense float32 array, optionally watched by the tape."""

    __slots__ = ("data", "requires_grad", "name", "_is_leaf")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = values if isinstance(values, np.ndarray) and values.dtype == FLOAT \
            and values.flags.c_contiguous else _as_array(values)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._is_leaf = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def detach(self) -> "Tensor":
        """Same values, no tape participation downstream."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic sugar; wraps raw arrays/scalars as constants
    def __add__(self, other):
        return add(self, astensor(other))

    def __radd__(self, other):
        return add(astensor(other), self)

    def __sub__(self, other):
        return sub(self, astensor(other))

    def __rsub__(self, other):
        return sub(astensor(other), self)

    def __mul__(self, other):
        return mul(self, astensor(other))

    def __rmul__(self, other):
        return mul(astensor(other), self)

    def __matmul__(self, other):
        return matmul(self, astensor(other))

    def __neg__(self):
        return scale(self, -1.0)


def astensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class _Node:
    __slots__ = ("output", "backward_fn")

    def __init__(self, output, backward_fn):
        self.output = output
        self.backward_fn = backward_fn


class GradientTape:
    """Append-only op record; topological order is append order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev = None

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        self._prev = None
        return False

    def gradients(self, loss: Tensor, params=None) -> dict:
        """Total derivatives of a scalar loss, keyed by tensor identity.

        `params`, when given, restricts the returned map to those leaf
        tensors (intermediate grads are dropped as soon as their node
        has been consumed, keeping peak memory flat).
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        keep = None if params is None else {id(p) for p in params}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holder: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            out_id = id(node.output)
            g = grads.get(out_id)
            if g is None:
                continue
            for tensor, piece in node.backward_fn(g):
                if piece is None or not tensor.requires_grad:
                    continue
                tid = id(tensor)
                if tid in grads:
                    grads[tid] = grads[tid] + piece
                else:
                    grads[tid] = piece
                    holder[tid] = tensor
            if not node.output._is_leaf:
                del grads[out_id]
                del holder[out_id]
        result = {}
        for tid, g in grads.items():
            t = holder[tid]
            if keep is not None and tid not in keep:
                continue
            result[t] = g
        return result


def record_op(output: Tensor, inputs, backward_fn):
    """Mark `output` watched and append a node when a tape is active.

    `backward_fn(upstream_grad)` must return (tensor, grad) pairs for
    each differentiable input. This is the extension point for fused
    primitives (the attention kernels register through it).
    """
    if _ACTIVE_TAPE is None:
        return output
    if not any(t.requires_grad for t in inputs):
        return output
    output.requires_grad = True
    output._is_leaf = False
    _ACTIVE_TAPE.nodes.append(_Node(output, backward_fn))
    return output


_record = record_op


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.astype(FLOAT, copy=False)


def _check_broadcast(a_shape, b_shape):
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise DimensionError(f"shapes {a_shape} and {b_shape} do not broadcast")


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Stacked matrix product over the last two axes.

    Gradient: da = g @ b^T, db = a^T @ g, each summed back over any
    broadcast leading axes.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} vs {b.shape}")
    _check_broadcast(a.shape[:-2], b.shape[:-2])
    out = Tensor(a.data @ b.data)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ((a, ga), (b, gb))

    return _record(out, (a, b), backward)


def _binary(a: Tensor, b: Tensor, value_fn, da, db) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = Tensor(value_fn(a.data, b.data))

    def backward(g):
        return ((a, _unbroadcast(da(g), a.shape)), (b, _unbroadcast(db(g), b.shape)))

    return _record(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.add, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.multiply,
                   lambda g: g * b.data, lambda g: g * a.data)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * FLOAT(c))

    def backward(g):
        return ((x, g * FLOAT(c)),)

    return _record(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic; exact 0.5 at 0."""
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out_data[~pos] = ez / (1.0 + ez)
    out = Tensor(out_data)

    def backward(g):
        return ((x, g * out_data * (1.0 - out_data)),)

    return _record(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def backward(g):
        return ((x, g * (x.data > 0)),)

    return _record(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    """Natural log clamped at LOG_FLOOR; clamped entries get zero grad."""
    clamped = np.maximum(x.data, FLOAT(LOG_FLOOR))
    out = Tensor(np.log(clamped))

    def backward(g):
        live = x.data >= LOG_FLOOR
        return ((x, np.where(live, g / clamped, 0.0).astype(FLOAT)),)

    return _record(out, (x,), backward)


def sqrt(x: Tensor, floor: float = 1e-24) -> Tensor:
    """Square root with a tiny floor inside; floored entries get zero grad."""
    clamped = np.maximum(x.data, FLOAT(floor))
    root = np.sqrt(clamped)
    out = Tensor(root)

    def backward(g):
        live = x.data >= floor
        return ((x, np.where(live, 0.5 * g / root, 0.0).astype(FLOAT)),)

    return _record(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax; -inf entries contribute 0, all--inf slices
    come out as all zeros rather than NaN."""
    d = x.data
    if axis >= d.ndim or axis < -d.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    if np.isnan(d).any():
        raise NumericError("softmax input contains NaN")
    probs = _softmax_raw(d, axis)
    out = Tensor(probs)

    def backward(g):
        inner = (g * probs).sum(axis=axis, keepdims=True)
        return ((x, (probs * (g - inner)).astype(FLOAT)),)

    return _record(out, (x,), backward)


def _softmax_raw(d: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(d, axis=axis, keepdims=True)
    # a fully masked slice has max -inf; shift against 0 there so the
    # exp of its -inf entries is a clean 0, not nan from (-inf)-(-inf)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(d - m_safe)
    total = e.sum(axis=axis, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0).astype(FLOAT)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    out = Tensor(np.ascontiguousarray(x.data.reshape(shape)))

    def backward(g):
        return ((x, g.reshape(x.shape)),)

    return _record(out, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permutation {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))

    def backward(g):
        return ((x, np.ascontiguousarray(g.transpose(inverse))),)

    return _record(out, (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [astensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    widths = [t.shape[axis] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, (np.ascontiguousarray(p) for p in pieces)))

    return _record(out, tuple(tensors), backward)


def expand(x: Tensor, shape) -> Tensor:
    """Broadcast to `shape` (gradient sums back over expanded axes)."""
    shape = tuple(int(s) for s in shape)
    _check_broadcast(x.shape, shape)
    out = Tensor(np.ascontiguousarray(np.broadcast_to(x.data, shape)))

    def backward(g):
        return ((x, _unbroadcast(g, x.shape)),)

    return _record(out, (x,), backward)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims, dtype=FLOAT))

    def backward(g):
        if axis is None:
            return ((x, np.broadcast_to(g, x.shape).astype(FLOAT)),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g, x.shape).astype(FLOAT)),)

    return _record(out, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(x.data.mean(dtype=FLOAT).reshape(()))

    def backward(g):
        return ((x, np.full(x.shape, g / n, dtype=FLOAT)),)

    return _record(out, (x,), backward)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup `table[ids]`; gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DataError("gather ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(
            f"id out of range: valid [0, {table.shape[0]}), got "
            f"[{ids.min()}, {ids.max()}]")
    out = Tensor(table.data[ids])

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.shape[-1]))
        return ((table, gt),)

    return _record(out, (table,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True, dtype=FLOAT)
    centered = d - mu
    var = (centered * centered).mean(axis=-1, keepdims=True, dtype=FLOAT)
    inv_std = 1.0 / np.sqrt(var + FLOAT(eps))
    xhat = centered * inv_std
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=reduce_axes).astype(FLOAT)
        g_bias = g.sum(axis=reduce_axes).astype(FLOAT)
        gx_hat = g * gain.data
        gx = inv_std * (gx_hat
                        - gx_hat.mean(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return ((x, gx.astype(FLOAT)), (gain, g_gain), (bias, g_bias))

    return _record(out, (x, gain, bias), backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of the last-axis vectors, norms floored at NORM_FLOOR.

    A pair where either norm is under the floor yields 0 with zero
    gradient to both sides: the alternative (quotient rule against the
    floor constant) explodes to ~1/floor on empty branches.
    """
    if a.shape != b.shape:
        raise DimensionError(f"cosine needs equal shapes, got {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    dot = (ad * bd).sum(axis=-1, dtype=FLOAT)
    na = np.sqrt((ad * ad).sum(axis=-1, dtype=FLOAT))
    nb = np.sqrt((bd * bd).sum(axis=-1, dtype=FLOAT))
    live = (na >= NORM_FLOOR) & (nb >= NORM_FLOOR)
    denom = np.maximum(na, FLOAT(NORM_FLOOR)) * np.maximum(nb, FLOAT(NORM_FLOOR))
    cos = np.where(live, dot / denom, 0.0).astype(FLOAT)
    out = Tensor(cos)

    def backward(g):
        g = g * live
        na_s = np.maximum(na, FLOAT(NORM_FLOOR))
        nb_s = np.maximum(nb, FLOAT(NORM_FLOOR))
        coeff = (g / (na_s * nb_s))[..., None]
        ga = coeff * bd - (g * cos / (na_s * na_s))[..., None] * ad
        gb = coeff * ad - (g * cos / (nb_s * nb_s))[..., None] * bd
        return ((a, ga.astype(FLOAT)), (b, gb.astype(FLOAT)))

    return _record(out, (a, b), backward)
