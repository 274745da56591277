"""Reverse-mode automatic differentiation over float64 numpy arrays.

The graph is recorded eagerly: every operation returns a `Tensor` that keeps
references to its operands together with a closure routing the incoming
gradient back to them.  `backward` walks the recorded graph once in reverse
topological order.  Gradient accumulation is additive, so callers zero
parameter gradients between optimization steps.

Everything is float64 and single-threaded.  Inference code should run inside
`no_grad()` so no graph is recorded.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from .errors import NumericsError, ShapeError, UsageError

_GRAD_ENABLED = True

# Optional per-operation finite check; cheap insurance while debugging,
# off by default because it roughly doubles the cost of small operations.
CHECK_FINITE = os.environ.get("HAM_CHECK_FINITE", "") not in ("", "0")


@contextlib.contextmanager
def no_grad():
    """Temporarily disable graph recording."""
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
    """A float64 array plus its position in the recorded graph.

    `grad` is lazily allocated during `backward`; parameters created through
    `parameter()` keep a persistent zero-initialized buffer instead so that
    gradients accumulate across episodes until the caller clears them.
    """

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data, parents=(), bwd=None):
        self.data = data
        self.grad = None
        self._parents = parents
        self._bwd = bwd

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # Arithmetic operators accept plain numbers and numpy arrays as
    # constants; constants never receive gradient contributions.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return _add_const(self, -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return _add_const(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return _mul_const(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, graph={bool(self._parents)})"


def tensor(x) -> Tensor:
    """Wrap a value as a constant tensor (no gradient flows into it)."""
    return Tensor(np.asarray(x, dtype=np.float64))


def parameter(x) -> Tensor:
    """Wrap a value as a trainable leaf with a persistent gradient buffer."""
    t = Tensor(np.array(x, dtype=np.float64))
    t.grad = np.zeros_like(t.data)
    return t


def _chk(data):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericsError("non-finite value produced by a tensor operation")
    return data


def _accum(t: Tensor, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# operations


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _chk(a.data + b.data)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out, (a, b), bwd)


def _add_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    out = _chk(a.data + c)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))

    return Tensor(out, (a,), bwd)


def neg(a: Tensor) -> Tensor:
    out = -a.data
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, -g)

    return Tensor(out, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _chk(a.data * b.data)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out, (a, b), bwd)


def _mul_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    out = _chk(a.data * c)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, _unbroadcast(g * c, a.data.shape))

    return Tensor(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul mismatch: {ad.shape} @ {bd.shape}")
    out = _chk(ad @ bd)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        if ad.ndim == 2 and bd.ndim == 1:
            _accum(a, np.outer(g, bd))
            _accum(b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            _accum(a, bd @ g)
            _accum(b, np.outer(ad, g))
        else:
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)

    return Tensor(out, (a, b), bwd)


def dot(a: Tensor, b: Tensor) -> Tensor:
    out = np.asarray(a.data @ b.data)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return Tensor(out, (a, b), bwd)


def concat(parts) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts])
    if not _GRAD_ENABLED:
        return Tensor(out)
    sizes = [p.data.shape[0] for p in parts]

    def bwd(g):
        off = 0
        for p, size in zip(parts, sizes):
            _accum(p, g[off:off + size])
            off += size

    return Tensor(out, tuple(parts), bwd)


def narrow(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous 1-D slice [start, stop)."""
    out = a.data[start:stop]
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[start:stop] += g

    return Tensor(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    out = a.data.reshape(shape)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, g.reshape(orig))

    return Tensor(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    if not _GRAD_ENABLED:
        return Tensor(out)
    mask = a.data > 0.0

    def bwd(g):
        _accum(a, g * mask)

    return Tensor(out, (a,), bwd)


def _sigmoid_stable(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_stable(np.asarray(a.data, dtype=np.float64))
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return Tensor(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return Tensor(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out = _chk(np.log(a.data))
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, g / a.data)

    return Tensor(out, (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only where nothing clamped."""
    out = np.clip(a.data, lo, hi)
    if not _GRAD_ENABLED:
        return Tensor(out)
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        _accum(a, g * mask)

    return Tensor(out, (a,), bwd)


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    if not _GRAD_ENABLED:
        return Tensor(out)

    def bwd(g):
        _accum(a, -g * out * out)

    return Tensor(out, (a,), bwd)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = np.asarray(a.data.sum())
    if not _GRAD_ENABLED:
        return Tensor(out)
    shape = a.data.shape

    def bwd(g):
        _accum(a, np.broadcast_to(g, shape))

    return Tensor(out, (a,), bwd)


def detach(a: Tensor) -> Tensor:
    """Same values, cut off from the recorded graph."""
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# backward pass


def backward(out: Tensor, seed=None) -> None:
    """Accumulate d(out)/d(leaf) into `.grad` over the recorded graph.

    `seed` must match the output shape; it defaults to all-ones, which for a
    scalar output is the usual choice.  Calling backward twice on the same
    graph doubles the accumulated gradients, so don't.
    """
    if not out._parents and out.grad is None:
        raise UsageError("backward called on a tensor with no recorded computation")
    if seed is None:
        seed = np.ones_like(out.data)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != out.data.shape:
            raise ShapeError(
                f"seed gradient shape {seed.shape} does not match output {out.data.shape}"
            )

    topo = []
    visited = set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    _accum(out, seed)
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
