"""Minimal reverse-mode automatic differentiation on numpy arrays.

Only the operations the attribution network needs are provided. Every op
checks its output for NaN/Inf and raises :class:`NonFinite` immediately, so a
numeric blow-up is reported where it happens rather than at the loss.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import NonFinite


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Tuple["Tensor", ...] = (), _backward: Optional[Callable] = None):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None):
        """Accumulate d(self)/d(leaf) into every leaf's ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            _check(g, f"gradient of {node.name or 'intermediate'}")
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def _check(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"non-finite values in {what}")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _op(data, parents, backward, name) -> Tensor:
    _check(data, name)
    return Tensor(data, _parents=tuple(parents), _backward=backward, name=name)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / linear algebra

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data * b.data, (a, b),
               lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _op(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    """Matrix product of a 2-D ``a`` with a 2-D matrix or 1-D vector ``b``."""
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g
    return _op(a.data @ b.data, (a, b), back, "matmul")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)
    return _op(a.data.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


class Segments:
    """Grouping of positions by an integer key, for fast scatter-sums.

    ``scatter(g)`` returns ``out`` with ``out[k] = sum(g[p] for p where idx[p] == k)``
    using one ``reduceat`` instead of an unbuffered ``np.add.at``.
    """

    def __init__(self, idx: np.ndarray, n: int):
        self.idx = np.asarray(idx, dtype=np.int64)
        self.n = int(n)
        if self.idx.size and np.all(self.idx[1:] >= self.idx[:-1]):
            self.perm = None
            ordered = self.idx
        else:
            self.perm = np.argsort(self.idx, kind="stable")
            ordered = self.idx[self.perm]
        if ordered.size:
            self.starts = np.flatnonzero(np.r_[True, ordered[1:] != ordered[:-1]])
            self.keys = ordered[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.int64)
            self.keys = np.zeros(0, dtype=np.int64)
        self.indptr = np.searchsorted(ordered, np.arange(self.n + 1)).astype(np.int32)

    def matrix(self, weights: np.ndarray, other: np.ndarray, n_other: int) -> sp.csr_matrix:
        """CSR matrix with ``M[idx[p], other[p]] = weights[p]`` (rows grouped by this key)."""
        if self.perm is not None:
            weights, other = weights[self.perm], other[self.perm]
        return sp.csr_matrix((weights, other.astype(np.int32), self.indptr), shape=(self.n, n_other))

    def scatter(self, g: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n,) + g.shape[1:], dtype=g.dtype)
        if self.starts.size:
            src = g if self.perm is None else g[self.perm]
            out[self.keys] = np.add.reduceat(src, self.starts, axis=0)
        return out

    def reduce_max(self, s: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n,) + s.shape[1:], dtype=s.dtype)
        if self.starts.size:
            src = s if self.perm is None else s[self.perm]
            out[self.keys] = np.maximum.reduceat(src, self.starts, axis=0)
        return out


def take_rows(a: Tensor, idx: np.ndarray, seg: Optional[Segments] = None) -> Tensor:
    """``a[idx]``; pass ``seg = Segments(idx, len(a))`` to speed up the backward scatter."""
    def back(g):
        if seg is not None:
            return (seg.scatter(g),)
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return _op(a.data[idx], (a,), back, "take_rows")


def stack(items: Sequence[Tensor], axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]
    data = np.stack([t.data for t in items], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))
    return _op(data, items, back, "stack")


def concat(items: Sequence[Tensor], axis: int = -1) -> Tensor:
    items = [as_tensor(t) for t in items]
    data = np.concatenate([t.data for t in items], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in items])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _op(data, items, back, "concat")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = a.data > 0
    return _op(np.where(pos, a.data, slope * a.data), (a,),
               lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def elu(a: Tensor) -> Tensor:
    pos = a.data > 0
    neg = np.expm1(np.minimum(a.data, 0))
    out = np.where(pos, a.data, neg)
    return _op(out, (a,), lambda g: (np.where(pos, g, g * (neg + 1.0)),), "elu")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _op(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return _op(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


def masked_softmax(a: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over ``mask``-ed entries only; fully masked slices give zeros."""
    mask = np.broadcast_to(mask, a.shape)
    big = np.where(mask, a.data, -np.inf)
    mx = big.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(mask, np.exp(np.where(mask, a.data, 0.0) - mx), 0.0)
    tot = e.sum(axis=axis, keepdims=True)
    s = np.divide(e, tot, out=np.zeros_like(e), where=tot > 0)
    return _op(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "masked_softmax")


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or rate <= 0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return _op(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# graph attention primitives

def segment_softmax(scores: Tensor, seg: Segments) -> Tensor:
    """Softmax of ``scores`` (P x ...) within the groups of ``seg``."""
    s = scores.data
    mx = seg.reduce_max(s)
    e = np.exp(s - mx[seg.idx])
    tot = seg.scatter(e)
    out = e / tot[seg.idx]

    def back(g):
        gs = g * out
        return (gs - out * seg.scatter(gs)[seg.idx],)
    return _op(out, (scores,), back, "segment_softmax")


def attend(alpha: Tensor, h: Tensor, rows: Segments, cols: Segments) -> Tensor:
    """``out[r, k] = sum_p alpha[p, k] * h[cols[p], k]`` over pairs with ``rows[p] == r``.

    ``alpha`` is (P, K); ``h`` is (N, K, F); output (rows.n, K, F).
    """
    a, hv = alpha.data, h.data
    n_heads, n_src = a.shape[1], hv.shape[0]
    mats = [rows.matrix(a[:, k], cols.idx, n_src) for k in range(n_heads)]
    out = np.stack([mats[k] @ hv[:, k, :] for k in range(n_heads)], axis=1)

    def back(g):
        ga = np.einsum("pkf,pkf->pk", g[rows.idx], hv[cols.idx]) if alpha.requires_grad else None
        gh = None
        if h.requires_grad:
            gh = np.stack([cols.matrix(a[:, k], rows.idx, rows.n) @ g[:, k, :] for k in range(n_heads)], axis=1)
        return ga, gh
    return _op(out, (alpha, h), back, "attend")


def cross_entropy(logits: Tensor, labels: np.ndarray, index: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of ``logits[index]`` against ``labels`` (class ids)."""
    z = logits.data[index]
    zs = z - z.max(axis=1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    n = len(index)
    loss = -logp[np.arange(n), labels].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        out = np.zeros_like(logits.data)
        np.add.at(out, index, p * (g / n))
        return (out,)
    return _op(np.asarray(loss, dtype=logits.data.dtype), (logits,), back, "cross_entropy")
