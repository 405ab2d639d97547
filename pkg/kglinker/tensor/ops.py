"""
Differentiable primitives.

Every primitive computes its forward value with numpy and, when a tape is
active and some input requires a gradient, registers an exact
vector-Jacobian product. Broadcasting is limited to adding a row-vector bias.
"""
from typing import Optional, Sequence

import numpy as np

from ..errors import LabelError, ShapeError, UnknownEntityError
from .tensor import Tensor, active_tape

LAYER_NORM_EPS = 1e-5
PAD = -1


def _result(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if tape is not None:
        tape.record(op, out, tuple(inputs), vjp)
    return out


def _require_2d(op: str, *tensors: Tensor):
    for t in tensors:
        if t.data.ndim != 2:
            raise ShapeError(f"{op} expects 2-D operands, got shape {t.shape}")


# ==================== Linear algebra ====================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _result("matmul", a.data @ b.data, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may also be a row vector (n,) or (1, n) added to every row of `a`."""
    if a.shape == b.shape:
        def vjp(g):
            return g, g
        return _result("add", a.data + b.data, (a, b), vjp)

    if a.data.ndim == 2 and b.data.size == a.shape[1] and b.data.ndim in (1, 2) and b.shape[0] in (1, a.shape[1]):
        row = b.data.reshape(1, -1)

        def vjp(g):
            return g, g.sum(axis=0).reshape(b.shape)
        return _result("add", a.data + row, (a, b), vjp)

    raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}")

    def vjp(g):
        return (g * b.data if a.requires_grad else None, g * a.data if b.requires_grad else None)

    return _result("mul", a.data * b.data, (a, b), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    _require_2d("concat", *tensors)
    axis = axis % 2
    other = 1 - axis
    if len({t.shape[other] for t in tensors}) != 1:
        raise ShapeError(f"concat shape mismatch on axis {other}: {[t.shape for t in tensors]}")

    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        if axis == 0:
            return [g[bounds[i]:bounds[i + 1]] for i in range(len(tensors))]
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors))]

    return _result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


# ==================== Activations ====================

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def vjp(g):
        return (g * mask,)

    return _result("relu", np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _result("sigmoid", out, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _result("tanh", out, (x,), vjp)


# ==================== Indexing & reductions ====================

def gather_rows(table: Tensor, ids) -> Tensor:
    """Rows `table[ids]`; an id equal to PAD (-1) yields a zero row with no gradient."""
    _require_2d("gather_rows", table)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < PAD or ids.max() >= table.shape[0]):
        raise UnknownEntityError(f"row id out of range for table with {table.shape[0]} rows")
    valid = ids != PAD
    out = np.zeros((ids.size, table.shape[1]), dtype=table.dtype)
    out[valid] = table.data[ids[valid]]

    def vjp(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids[valid], g[valid])
        return (grad,)

    return _result("gather_rows", out, (table,), vjp)


def _segment_counts(segments: np.ndarray, num_segments: int) -> np.ndarray:
    return np.bincount(segments, minlength=num_segments).astype(np.float64)


def sum_rows(x: Tensor, segments=None, num_segments: Optional[int] = None) -> Tensor:
    """
    Sum rows of `x`.

    Without `segments` the result is 1 x n. With `segments` (one segment id per
    row) the result is num_segments x n; empty segments give zero rows.
    """
    _require_2d("sum_rows", x)
    if segments is None:
        def vjp(g):
            return (np.broadcast_to(g, x.shape).copy(),)
        return _result("sum_rows", x.data.sum(axis=0, keepdims=True), (x,), vjp)

    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (x.shape[0],):
        raise ShapeError(f"sum_rows segments shape {segments.shape} does not match rows of {x.shape}")
    out = np.zeros((num_segments, x.shape[1]), dtype=x.dtype)
    np.add.at(out, segments, x.data)

    def vjp(g):
        return (g[segments],)

    return _result("sum_rows", out, (x,), vjp)


def mean_rows(x: Tensor, segments=None, num_segments: Optional[int] = None) -> Tensor:
    """Row mean, optionally per segment; like `sum_rows` but divided by row counts."""
    _require_2d("mean_rows", x)
    if segments is None:
        n = max(x.shape[0], 1)

        def vjp(g):
            return (np.broadcast_to(g / n, x.shape).copy(),)
        return _result("mean_rows", x.data.sum(axis=0, keepdims=True) / n, (x,), vjp)

    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (x.shape[0],):
        raise ShapeError(f"mean_rows segments shape {segments.shape} does not match rows of {x.shape}")
    counts = np.maximum(_segment_counts(segments, num_segments), 1.0).astype(x.dtype)
    out = np.zeros((num_segments, x.shape[1]), dtype=x.dtype)
    np.add.at(out, segments, x.data)
    out /= counts[:, None]

    def vjp(g):
        return ((g / counts[:, None])[segments],)

    return _result("mean_rows", out, (x,), vjp)


def reduce_sum(x: Tensor) -> Tensor:
    """Sum of all entries as a scalar."""
    def vjp(g):
        return (np.full_like(x.data, g.reshape(-1)[0]),)

    return _result("reduce_sum", np.asarray(x.data.sum()), (x,), vjp)


# ==================== Normalisation ====================

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise each row of `x` over its last axis, then scale by `gain` and shift by `bias`."""
    _require_2d("layer_norm", x)
    n = x.shape[1]
    if gain.data.size != n or bias.data.size != n:
        raise ShapeError(f"layer_norm gain/bias shapes {gain.shape}, {bias.shape} do not match {x.shape}")

    mu = x.data.mean(axis=1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=1, keepdims=True) + eps)
    xhat = centred * inv_std
    g_row = gain.data.reshape(1, -1)
    out = xhat * g_row + bias.data.reshape(1, -1)

    def vjp(g):
        dxhat = g * g_row
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=0).reshape(gain.shape)
        dbias = g.sum(axis=0).reshape(bias.shape)
        return dx, dgain, dbias

    return _result("layer_norm", out, (x, gain, bias), vjp)


# ==================== Loss ====================

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels: Sequence[int], num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """
    Mean over the batch of -log softmax(logits)[true class].

    `labels` is a one-hot B x C array. Computed with max-subtraction; the
    gradient with respect to the logits is (softmax - onehot) / B.

    Raises:
        LabelError: if any label row is not one-hot
    """
    _require_2d("softmax_cross_entropy", logits)
    y = np.asarray(labels, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"softmax_cross_entropy shape mismatch: logits {logits.shape}, labels {y.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise LabelError("labels must be one-hot, exactly one 1 per row")

    batch = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    loss = -(y * log_probs).sum() / batch

    def vjp(g):
        return (g.reshape(-1)[0] * (np.exp(log_probs) - y) / batch,)

    return _result("softmax_cross_entropy", np.asarray(loss), (logits,), vjp)
