"""Reverse-mode autodiff over numpy arrays.

A Tensor records its parents and a backward closure when gradients are
enabled; ``backward()`` walks the tape in topological order. Float32 is the
working dtype for training, float64 for finite-difference checking — ops
preserve whatever dtype flows in.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from . import kernels


def _conv_cache_bytes() -> int:
    return int(float(os.environ.get("TREMORKIT_CONV_CACHE_MB", "384")) * 2 ** 20)


class ShapeMismatch(ValueError):
    pass


class GraphNotBuilt(RuntimeError):
    pass


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self.name = name

    # ------------------------------------------------------------- plumbing
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            g = g.reshape(self.data.shape)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, seed=None):
        """Reverse sweep from this tensor; seeds with ones when omitted."""
        if self._backward_fn is None and not self.requires_grad:
            raise GraphNotBuilt("tensor is not part of a differentiable graph")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data) if seed is None else seed)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # ------------------------------------------------------------ operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._backward_fn is not None
                             for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out.requires_grad = True
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ------------------------------------------------------------ basic algebra

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def back(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def back(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def back(g):
        g = np.asarray(g)
        if b.data.ndim == 1:
            # a (..., k) @ b (k,) -> out (...,)
            a._accumulate(_unbroadcast(g[..., None] * b.data, a.shape))
            gb = (a.data * g[..., None]).reshape(-1, b.data.shape[0]).sum(axis=0)
            b._accumulate(gb)
            return
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a._accumulate(_unbroadcast(ga, a.shape))
        b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), back)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out_data = a.data * mask

    def back(g):
        a._accumulate(g * mask)

    return _make(out_data, (a,), back)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        a._accumulate(g * s * (1.0 - s))

    return _make(s, (a,), back)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)

    def back(g):
        a._accumulate(g * (1.0 - t * t))

    return _make(t, (a,), back)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        a._accumulate(s * (g - inner))

    return _make(s, (a,), back)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), back)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def back(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g / count, a.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(gg / count, a.shape).copy())

    return _make(out_data, (a,), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def back(g):
        a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), back)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def back(g):
        a._accumulate(np.transpose(g, inverse))

    return _make(out_data, (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def back(g):
        splits = np.cumsum(sizes)[:-1]
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _make(out_data, tuple(tensors), back)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return _make(out_data, tuple(tensors), back)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[key]

    def back(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, key, g)
        a._accumulate(buf)

    return _make(out_data, (a,), back)


# --------------------------------------------------------------- conv / pool

def conv3d(x, w, b, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Batched 3-D cross-correlation.

    x: (B, Ci, T, H, W); w: (Co, Ci, kt, ks, ks); b: (Co,).
    stride/padding are (temporal, spatial) pairs applied per axis.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 5:
        raise ShapeMismatch(f"conv3d input must be 5-D, got {x.shape}")
    bsz, ci, t, h, wd = x.data.shape
    co, ci_w, kt, ks, ks2 = w.data.shape
    if ci != ci_w or ks != ks2:
        raise ShapeMismatch(f"conv3d weights {w.shape} do not fit input {x.shape}")
    st, ss = stride
    pt, ps = padding
    tp, hp, wp = t + 2 * pt, h + 2 * ps, wd + 2 * ps
    to = (tp - kt) // st + 1
    ho = (hp - ks) // ss + 1
    wo = (wp - ks) // ss + 1
    if to < 1 or ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv3d kernel {(kt, ks, ks)} too large for "
                            f"padded input {(tp, hp, wp)}")

    w2 = np.ascontiguousarray(w.data.reshape(co, -1))
    out_data = np.empty((bsz, co, to, ho, wo), dtype=x.data.dtype)
    pad_spec = ((0, 0), (pt, pt), (ps, ps), (ps, ps))

    def padded(i):
        if pt == 0 and ps == 0:
            return np.ascontiguousarray(x.data[i])
        return np.pad(x.data[i], pad_spec)

    # keeping forward columns for backward trades memory for one im2col pass
    cache_bytes = bsz * (ci * kt * ks * ks) * (to * ho * wo) * x.data.dtype.itemsize
    keep_cols = _GRAD_ENABLED and cache_bytes <= _conv_cache_bytes()
    cols_cache: list = [None] * bsz if keep_cols else None

    for i in range(bsz):
        cols = kernels.im2col3d(padded(i), kt, ks, st, ss)
        if keep_cols:
            cols_cache[i] = cols
        out_data[i] = (w2 @ cols + b.data[:, None]).reshape(co, to, ho, wo)

    def back(g):
        need_dx = x.requires_grad or x._backward_fn is not None
        dx = np.zeros_like(x.data) if need_dx else None
        dw2 = np.zeros_like(w2)
        db = np.zeros_like(b.data)
        w2t = np.ascontiguousarray(w2.T)
        for i in range(bsz):
            gi = np.ascontiguousarray(g[i].reshape(co, -1))
            cols = cols_cache[i] if keep_cols else kernels.im2col3d(
                padded(i), kt, ks, st, ss)
            dw2 += gi @ cols.T
            db += gi.sum(axis=1)
            if need_dx:
                dcols = np.ascontiguousarray(w2t @ gi)
                dxp = kernels.col2im3d(dcols, (ci, tp, hp, wp), kt, ks, st, ss)
                dx[i] = dxp[:, pt:tp - pt, ps:hp - ps, ps:wp - ps] if (pt or ps) else dxp
        if need_dx:
            x._accumulate(dx)
        w._accumulate(dw2.reshape(w.shape))
        b._accumulate(db)

    return _make(out_data, (x, w, b), back)


def maxpool3d(x, kernel=(2, 2), stride=None) -> Tensor:
    """Batched max pooling; kernel/stride are (temporal, spatial) pairs.
    Gradient routes to the first argmax in window scan order."""
    x = as_tensor(x)
    if x.data.ndim != 5:
        raise ShapeMismatch(f"maxpool3d input must be 5-D, got {x.shape}")
    kt, ks = kernel
    st, ss = stride if stride is not None else kernel
    bsz, c, t, h, w = x.data.shape
    if t < kt or h < ks or w < ks:
        raise ShapeMismatch(f"pool kernel {(kt, ks, ks)} exceeds input {(t, h, w)}")
    to = (t - kt) // st + 1
    ho = (h - ks) // ss + 1
    wo = (w - ks) // ss + 1
    out_data = np.empty((bsz, c, to, ho, wo), dtype=x.data.dtype)
    args = np.empty((bsz, c, to, ho, wo), dtype=np.int64)
    for i in range(bsz):
        out_data[i], args[i] = kernels.maxpool3d_forward(
            np.ascontiguousarray(x.data[i]), kt, ks, st, ss)

    def back(g):
        dx = np.empty_like(x.data)
        for i in range(bsz):
            dx[i] = kernels.maxpool3d_backward(
                np.ascontiguousarray(g[i]), args[i], (c, t, h, w))
        x._accumulate(dx)

    return _make(out_data, (x,), back)


# --------------------------------------------------------------------- loss

def cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=int)
    n, k = logits.data.shape
    if y.shape != (n,):
        raise ShapeMismatch(f"labels {y.shape} do not match logits {logits.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    losses = lse - logits.data[np.arange(n), y]
    out_data = np.asarray(losses.mean(), dtype=logits.data.dtype)

    def back(g):
        sm = np.exp(shifted)
        sm /= sm.sum(axis=1, keepdims=True)
        sm[np.arange(n), y] -= 1.0
        logits._accumulate(sm * (np.asarray(g) / n))

    return _make(out_data, (logits,), back)
