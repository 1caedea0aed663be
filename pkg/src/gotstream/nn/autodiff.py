"""Minimal reverse-mode autodiff over dense float64 arrays.

Only the operations this engine needs: affine maps, pointwise
nonlinearities, row-wise softmax with additive masks, attention, and the
gather/slice plumbing for embeddings and per-node heads. Each operation
records its parents and a vector-Jacobian closure on the result tensor;
`backward()` replays the recorded graph in reverse topological order and
accumulates adjoints into `.grad`.

All arithmetic is float64. Masked attention uses -inf sentinels inside
score matrices; everywhere else values must stay finite.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


class Tensor:
    """A numpy array plus the tape bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # operator sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division only supported by constants")
        return mul(self, _wrap(1.0 / float(other)))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, _parents=(a, b),
                 _vjp=lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))
    return out


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, _parents=(a,), _vjp=lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data * b.data, _parents=(a, b),
                  _vjp=lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                  _unbroadcast(g * a.data, b.data.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    return Tensor(a.data @ b.data, _parents=(a, b),
                  _vjp=lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.data.T, _parents=(a,), _vjp=lambda g: (g.T,))


def tensor_sum(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), _parents=(a,),
                  _vjp=lambda g: (np.full_like(a.data, float(g)),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor(a.data.mean(), _parents=(a,),
                  _vjp=lambda g: (np.full_like(a.data, float(g) / n),))


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(a: Tensor) -> Tensor:
    # stable both tails; clamped to the open interval (0, 1) in float64
    y = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    y = np.clip(y, _SIG_LO, _SIG_HI)
    return Tensor(y, _parents=(a,), _vjp=lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return Tensor(y, _parents=(a,), _vjp=lambda g: (g * (1.0 - y * y),))


def softplus(a: Tensor) -> Tensor:
    y = np.log1p(np.exp(-np.abs(a.data))) + np.maximum(a.data, 0.0)
    sig = 1.0 / (1.0 + np.exp(-np.clip(a.data, -700, 700)))
    return Tensor(y, _parents=(a,), _vjp=lambda g: (g * sig,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return Tensor(y, _parents=(a,), _vjp=lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), _parents=(a,), _vjp=lambda g: (g / a.data,))


def softmax_rowwise(a: Tensor) -> Tensor:
    """Row-wise softmax; -inf entries are masked slots and get probability 0."""
    x = np.atleast_2d(a.data)
    if np.isneginf(x).all(axis=-1).any():
        raise ValueError("softmax row entirely masked")
    m = np.max(x, axis=-1, keepdims=True)
    z = np.exp(x - m)
    p2 = z / z.sum(axis=-1, keepdims=True)
    p = p2.reshape(a.data.shape)

    def vjp(g):
        gp = g * p
        return (gp - p * gp.sum(axis=-1, keepdims=True),)

    return Tensor(p, _parents=(a,), _vjp=vjp)


def log_softmax_rows(a: Tensor) -> Tensor:
    x = np.atleast_2d(a.data)
    if np.isneginf(x).all(axis=-1).any():
        raise ValueError("softmax row entirely masked")
    m = np.max(x, axis=-1, keepdims=True)
    z = np.exp(x - m)
    lse = np.log(z.sum(axis=-1, keepdims=True)) + m
    out = (x - lse).reshape(a.data.shape)
    p = np.exp(out)

    def vjp(g):
        g2 = g.reshape(x.shape)
        return ((g2 - p.reshape(x.shape) * g2.sum(axis=-1, keepdims=True)).reshape(a.data.shape),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def take_per_row(a: Tensor, idx) -> Tensor:
    """out[i] = a[i, idx[i]]."""
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    out = a.data[rows, idx]

    def vjp(g):
        grad = np.zeros_like(a.data)
        grad[rows, idx] = g
        return (grad,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: out = table[ids]; backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.intp)
    out = table.data[ids]

    def vjp(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return Tensor(out, _parents=(table,), _vjp=vjp)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.data[start:stop]

    def vjp(g):
        grad = np.zeros_like(a.data)
        grad[start:stop] = g
        return (grad,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def concat_rows(parts: list[Tensor]) -> Tensor:
    sizes = [p.data.shape[0] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=0)

    def vjp(g):
        grads = []
        at = 0
        for s in sizes:
            grads.append(g[at : at + s])
            at += s
        return tuple(grads)

    return Tensor(out, _parents=tuple(parts), _vjp=vjp)


def query_bias_matrix(rel: Tensor, n: int) -> Tensor:
    """Square attention bias with `rel` on the query->candidate edges only.

    Row 0 is the query; bias[0, 1:] = rel (one scalar per candidate),
    every other entry 0 so candidate<->candidate attention stays unbiased.
    """
    r = rel.data.reshape(-1)
    if r.shape[0] != n - 1:
        raise ValueError(f"need {n - 1} relational scores, got {r.shape[0]}")
    out = np.zeros((n, n))
    out[0, 1:] = r

    def vjp(g):
        return (g[0, 1:].reshape(rel.data.shape),)

    return Tensor(out, _parents=(rel,), _vjp=vjp)


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b, with b broadcast across rows."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def attention(q: Tensor, k: Tensor, v: Tensor, bias=None, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention with optional additive bias and mask.

    `bias` may be a Tensor (learned, e.g. relational bias) or a constant
    ndarray (e.g. temporal-neighborhood bias). `mask` is boolean with True
    marking blocked (query, key) pairs; blocked scores become -inf.
    """
    d = q.data.shape[-1]
    scores = mul(matmul(q, transpose(k)), _wrap(1.0 / np.sqrt(d)))
    if bias is not None:
        scores = add(scores, _wrap(bias))
    if mask is not None:
        blocker = np.where(mask, NEG_INF, 0.0)
        scores = add(scores, _wrap(blocker))
    return matmul(softmax_rowwise(scores), v)


def logsumexp_masked(a: Tensor, keep: np.ndarray) -> Tensor:
    """log sum_j exp(a_j) over entries where keep[j] is True; exact gradient."""
    keep = np.asarray(keep, dtype=bool).reshape(-1)
    if not keep.any():
        raise ValueError("logsumexp over an empty set")
    m0 = float(np.max(a.data.reshape(-1)[keep]))
    shifted = exp(add(a, _wrap(-m0)))
    total = tensor_sum(mul(shifted, _wrap(keep.astype(np.float64).reshape(a.data.shape))))
    return add(log(total), _wrap(m0))


def cross_entropy(logits: Tensor, y: int) -> Tensor:
    """-log softmax(logits)[y] for a single logit vector."""
    vec = logits.data.reshape(-1)
    if vec.shape[0] < 2:
        raise ValueError("need at least 2 classes")
    if not 0 <= int(y) < vec.shape[0]:
        raise ValueError(f"label {y} out of range for {vec.shape[0]} classes")
    row = logits if logits.data.ndim == 2 else _reshape_row(logits)
    picked = take_per_row(log_softmax_rows(row), np.array([int(y)]))
    return neg(tensor_sum(picked))


def cross_entropy_rows(logits: Tensor, labels, row_weights: np.ndarray | None = None) -> Tensor:
    """Sum over rows of -log softmax(logits[i])[labels[i]], optionally weighted."""
    labels = np.asarray(labels, dtype=np.intp)
    n_classes = logits.data.shape[-1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError("label out of range")
    picked = take_per_row(log_softmax_rows(logits), labels)
    if row_weights is not None:
        picked = mul(picked, _wrap(np.asarray(row_weights, dtype=np.float64)))
    return neg(tensor_sum(picked))


def _reshape_row(a: Tensor) -> Tensor:
    out = a.data.reshape(1, -1)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return Tensor(out, _parents=(a,), _vjp=vjp)
