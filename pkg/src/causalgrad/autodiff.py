"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and, while gradient recording is enabled,
remembers the operation that produced it. backward() walks the recorded
graph once in reverse topological order and accumulates adjoints.

The op set is exactly what the forecaster needs: broadcasting arithmetic,
matmul, reductions, gather/embedding, layer norm, GELU, masked attention
and the two loss kernels. Everything runs in double precision.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

DTYPE = np.float64

_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf in an activation."""


class GraphError(RuntimeError):
    """Misuse of the compute graph (double backward, non-scalar loss, ...)."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op", "_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._vjp = None
        self._op = "leaf"
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; implementations below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


def _make(data: np.ndarray, op: str, parents: tuple, vjp) -> Tensor:
    """Wrap an op result, recording the graph edge when grads are on."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise and arithmetic ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(out, "mul", (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    _check_finite(out, "div")

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(out, "div", (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    flat = b.data.ndim == 2 and a.data.ndim > 2
    if flat:
        # stacked activations against a plain 2-D weight: one flat GEMM
        # beats numpy's per-batch loop of tiny GEMMs by a wide margin
        lead = a.data.shape[:-1]
        out = (a.data.reshape(-1, a.data.shape[-1]) @ b.data).reshape(
            *lead, b.data.shape[-1])
    else:
        out = a.data @ b.data

    def vjp(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.data.shape)
            gb = a.data.reshape(-1, a.data.shape[-1]).T @ g2
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    _check_finite(out, "exp")

    def vjp(g):
        return (g * out,)

    return _make(out, "exp", (a,), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    _check_finite(out, "log")

    def vjp(g):
        return (g / a.data,)

    return _make(out, "log", (a,), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, "tanh", (a,), vjp)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _make(out, "gelu", (a,), vjp)


def abs_(a) -> Tensor:
    """|x| with subgradient 0 at the kink."""
    a = as_tensor(a)
    out = np.abs(a.data)

    def vjp(g):
        return (g * np.sign(a.data),)

    return _make(out, "abs", (a,), vjp)


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _make(out, "reshape", (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    return _make(out, "transpose", (a,), vjp)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape).copy()

    def vjp(g):
        return (_unbroadcast(g, a.data.shape),)

    return _make(out, "broadcast_to", (a,), vjp)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, "concat", tuple(tensors), vjp)


def index(a, key) -> Tensor:
    """Basic slicing/indexing; gradient scatters back into zeros."""
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(out.copy(), "index", (a,), vjp)


def take(a, indices, axis: int) -> Tensor:
    """Gather along an axis with an integer index array."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    out = np.take(a.data, idx, axis=axis)

    def vjp(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        # bring the index dims of g to the front so add.at lines up
        g_moved = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        np.add.at(moved, idx, g_moved)
        return (full,)

    return _make(out, "take", (a,), vjp)


def embedding(table, indices) -> Tensor:
    """Row lookup into a (C, D) table by an integer index array."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    out = table.data[idx]

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (full,)

    return _make(out, "embedding", (table,), vjp)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(out, "sum", (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    denom = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        g = np.asarray(g) / denom
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(out, "mean", (a,), vjp)


# ---------------------------------------------------------------------------
# Fused neural-net kernels
# ---------------------------------------------------------------------------


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with affine parameters."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    _check_finite(out, "layer_norm")
    n = x.data.shape[-1]

    def vjp(g):
        dxhat = g * gain.data
        gx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        sum_axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=sum_axes)
        dbias = g.sum(axis=sum_axes)
        return gx, _unbroadcast(dgain, gain.data.shape), _unbroadcast(dbias, bias.data.shape)

    return _make(out, "layer_norm", (x, gain, bias), vjp)


def masked_attention(q, k, v, mask, scale: float | None = None) -> Tensor:
    """Scaled dot-product attention with a hard binary mask.

    q: (..., Tq, d), k/v: (..., Tk, d), mask: (Tq, Tk) binary. Masked
    positions receive exactly zero attention weight; rows whose mask is
    all zero produce a zero output vector instead of NaN. Each unmasked
    row's weights sum to 1.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D (Tq, Tk), got shape {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask entries must be 0 or 1")
    tq, tk = q.data.shape[-2], k.data.shape[-2]
    if mask.shape != (tq, tk):
        raise ValueError(f"mask shape {mask.shape} does not match (Tq={tq}, Tk={tk})")
    if q.data.shape[-1] != k.data.shape[-1] or k.data.shape[-2] != v.data.shape[-2]:
        raise ValueError("q/k/v shapes are inconsistent")
    if scale is None:
        scale = 1.0 / math.sqrt(q.data.shape[-1])

    allowed = mask.astype(bool)
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    scores = np.where(allowed, scores, -np.inf)
    # Safe softmax: fully-masked rows get weight 0 everywhere.
    row_max = np.max(scores, axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    expd = np.exp(scores - row_max)
    expd = np.where(allowed, expd, 0.0)
    denom = expd.sum(axis=-1, keepdims=True)
    weights = np.divide(expd, denom, out=np.zeros_like(expd), where=denom > 0)
    out = weights @ v.data
    _check_finite(out, "masked_attention")

    def vjp(g):
        gv = np.swapaxes(weights, -1, -2) @ g
        gw = g @ np.swapaxes(v.data, -1, -2)
        # softmax backward; zero rows and masked entries stay zero
        gs = weights * (gw - (gw * weights).sum(axis=-1, keepdims=True))
        gq = (gs @ k.data) * scale
        gk = (np.swapaxes(gs, -1, -2) @ q.data) * scale
        return (
            _unbroadcast(gq, q.data.shape),
            _unbroadcast(gk, k.data.shape),
            _unbroadcast(gv, v.data.shape),
        )

    return _make(out, "masked_attention", (q, k, v), vjp)


def attention_weights(q, k, mask, scale: float | None = None) -> np.ndarray:
    """The attention weight matrix masked_attention would use (no grad)."""
    q = as_tensor(q).data
    k = as_tensor(k).data
    mask = np.asarray(mask)
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    allowed = mask.astype(bool)
    scores = np.where(allowed, (q @ np.swapaxes(k, -1, -2)) * scale, -np.inf)
    row_max = np.max(scores, axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    expd = np.where(allowed, np.exp(scores - row_max), 0.0)
    denom = expd.sum(axis=-1, keepdims=True)
    return np.divide(expd, denom, out=np.zeros_like(expd), where=denom > 0)


def cross_entropy_logits(logits, labels) -> Tensor:
    """Per-position softmax cross-entropy.

    logits: (..., C); labels: integer array (...,). Returns losses (...,).
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(x, labels[..., None], axis=-1)[..., 0]
    out = lse - picked
    _check_finite(out, "cross_entropy")

    def vjp(g):
        soft = np.exp(x - m)
        soft /= soft.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(x)
        np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
        return ((soft - onehot) * g[..., None],)

    return _make(out, "cross_entropy", (logits,), vjp)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor, wrt=None) -> dict:
    """Accumulate gradients of a scalar loss.

    Returns a map from each requested leaf tensor to its gradient array;
    leaves not on the compute path get zeros. Also populates `.grad` on
    every reachable leaf that requires grad. A given loss node can only
    be walked once; rerun the forward pass to differentiate again.
    """
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss._done:
        raise GraphError("backward already ran for this node; rerun the forward pass")
    loss._done = True

    # Iterative reverse topological order.
    order: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node._vjp is None:
            if g is not None and node._parents:
                raise GraphError("graph node was already consumed by a previous "
                                 "backward; rerun the forward pass")
            if g is not None and node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] += pg
            else:
                grads[id(parent)] = pg.copy() if pg.base is not None else pg
        if node._parents:
            node._vjp = None  # release closure memory as we go

    # second sweep: leaves keep .grad; build the requested mapping
    result = {}
    if wrt is not None:
        for t in wrt:
            result[t] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return result


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
