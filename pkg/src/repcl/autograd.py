"""Minimal reverse-mode autodiff over numpy arrays.

A Tensor wraps a float64 ndarray plus an optional backward closure and
parent links; calling ``backward()`` on a scalar loss walks the tape in
reverse topological order and accumulates gradients into ``.grad`` of
every reachable tensor with ``requires_grad``.

Only the ops this package needs are implemented. Every fused op (layer
norm, softmax, cross entropy, row normalization, ...) carries a
hand-derived gradient that is pinned by finite-difference tests.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import backend
from .errors import InputError


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (eval / momentum forwards)."""
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
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise InputError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        _accum(self, np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # light operator sugar; scalars and Tensors only
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg)
    if rg:
        out._parents = parents
        out._backward = bwd
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def parameter(data, rng: np.random.Generator | None = None, std: float | None = None) -> Tensor:
    """Trainable leaf. If std is given, data is the shape and values are N(0, std)."""
    if std is not None:
        data = rng.normal(0.0, std, size=data)
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def bwd(g):
        _accum(a, g * s)

    return _make(out, (a,), bwd)


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant array (no gradient to c)."""
    c = np.asarray(c, dtype=np.float64)
    out = a.data * c

    def bwd(g):
        _accum(a, _unbroadcast(g * c, a.data.shape))

    return _make(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(out, (a,), bwd)


def swap_last_axes(a: Tensor) -> Tensor:
    out = np.swapaxes(a.data, -1, -2)

    def bwd(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(out, (a,), bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = a.data.transpose(axes)
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(out, (a,), bwd)


def concat_last(parts: list[Tensor]) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[..., off : off + w])
            off += w

    return _make(out, tuple(parts), bwd)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into the source."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            backend.scatter_add_rows(acc, idx, np.ascontiguousarray(g))
            _accum(a, acc)

    return _make(out, (a,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup into an embedding table; ids may have any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            flat = np.ascontiguousarray(g.reshape(-1, table.data.shape[1]))
            backend.scatter_add_rows(acc, ids.ravel(), flat)
            _accum(table, acc)

    return _make(out, (table,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = a.data * mask

    def bwd(g):
        _accum(a, g * mask)

    return _make(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU; the gradient differentiates the approximation.

    Forward and backward run in the backend's fused elementwise kernel.
    """
    out, t = backend.gelu_forward(a.data)

    def bwd(g):
        _accum(a, backend.gelu_backward(a.data, t, g))

    return _make(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out)

    return _make(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(out, (a,), bwd)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    mask = (a.data > lo) & (a.data < hi)

    def bwd(g):
        _accum(a, g * mask)

    return _make(out, (a,), bwd)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; a no-op when p == 0."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return mul_const(a, keep)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def bwd(g):
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(out, (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean())

    def bwd(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _make(out, (a,), bwd)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out, (a,), bwd)


def mean_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = a.data.shape[axis]
    return scale(sum_axis(a, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# fused ops with hand gradients


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        _accum(bias, g.sum(axis=reduce_axes))
        if x.requires_grad:
            dxhat = g * gain.data
            dvar = (dxhat * xc).sum(axis=-1, keepdims=True) * (-0.5) * inv**3
            dmu = (-dxhat * inv).sum(axis=-1, keepdims=True) + dvar * (-2.0 * xc).mean(
                axis=-1, keepdims=True
            )
            _accum(x, dxhat * inv + dvar * 2.0 * xc / d + dmu / d)

    return _make(out, (x, gain, bias), bwd)


def softmax(x: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; an optional constant mask is added to the logits."""
    z = x.data if additive_mask is None else x.data + additive_mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accum(x, out * (g - dot))

    return _make(out, (x,), bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross entropy of integer targets over rows of (N, C) logits."""
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1)) - z[np.arange(n), targets]
    out = np.asarray(lse.mean())

    def bwd(g):
        if logits.requires_grad:
            p = np.exp(z)
            p /= p.sum(axis=-1, keepdims=True)
            p[np.arange(n), targets] -= 1.0
            _accum(logits, g * p / n)

    return _make(out, (logits,), bwd)


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """L2-normalize the last axis; eps keeps the zero vector finite."""
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = n + eps
    out = x.data / denom

    def bwd(g):
        n_safe = np.maximum(n, 1e-30)
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        _accum(x, g / denom - x.data * dot / (n_safe * denom * denom))

    return _make(out, (x,), bwd)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
