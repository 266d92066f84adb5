"""Pure-numpy kernel backend.

Gather/scatter index tables are cached per (shape, kernel) configuration:
im2col becomes one fancy-index gather and col2im one bincount scatter-add,
which keeps the fallback usable when the compiled extension is missing.
"""

from __future__ import annotations

import numpy as np

_IM2COL_CACHE: dict = {}
_POOL_CACHE: dict = {}


def _out_len(size: int, k: int, s: int) -> int:
    return (size - k) // s + 1


def _im2col_indices(c, tp, hp, wp, kt, ks, st, ss):
    key = (c, tp, hp, wp, kt, ks, st, ss)
    idx = _IM2COL_CACHE.get(key)
    if idx is None:
        to, ho, wo = _out_len(tp, kt, st), _out_len(hp, ks, ss), _out_len(wp, ks, ss)
        # kernel-offset axis: (c, dt, dy, dx); output axis: (to, ho, wo)
        ci, dt, dy, dx = np.meshgrid(np.arange(c), np.arange(kt), np.arange(ks),
                                     np.arange(ks), indexing="ij")
        off = ((ci * tp + dt) * hp + dy) * wp + dx
        t0, y0, x0 = np.meshgrid(np.arange(to) * st, np.arange(ho) * ss,
                                 np.arange(wo) * ss, indexing="ij")
        base = (t0 * hp + y0) * wp + x0
        idx = off.reshape(-1, 1) + base.reshape(1, -1)
        _IM2COL_CACHE[key] = idx
    return idx


def im2col3d(xp: np.ndarray, kt: int, ks: int, st: int, ss: int) -> np.ndarray:
    """Padded input (C,Tp,Hp,Wp) -> columns (C*kt*ks*ks, To*Ho*Wo)."""
    c, tp, hp, wp = xp.shape
    idx = _im2col_indices(c, tp, hp, wp, kt, ks, st, ss)
    return np.ascontiguousarray(xp.reshape(-1)[idx])


def col2im3d(cols: np.ndarray, shape, kt: int, ks: int, st: int, ss: int) -> np.ndarray:
    """Scatter-add transpose of im2col3d back onto the padded input shape."""
    c, tp, hp, wp = shape
    idx = _im2col_indices(c, tp, hp, wp, kt, ks, st, ss)
    flat = np.bincount(idx.reshape(-1), weights=cols.reshape(-1).astype(np.float64),
                       minlength=c * tp * hp * wp)
    return flat.reshape(shape).astype(cols.dtype)


def _pool_indices(c, t, h, w, kt, ks, st, ss):
    key = (c, t, h, w, kt, ks, st, ss)
    idx = _POOL_CACHE.get(key)
    if idx is None:
        to, ho, wo = _out_len(t, kt, st), _out_len(h, ks, ss), _out_len(w, ks, ss)
        dt, dy, dx = np.meshgrid(np.arange(kt), np.arange(ks), np.arange(ks),
                                 indexing="ij")
        off = (dt * h + dy) * w + dx                          # within one channel
        ci, t0, y0, x0 = np.meshgrid(np.arange(c), np.arange(to) * st,
                                     np.arange(ho) * ss, np.arange(wo) * ss,
                                     indexing="ij")
        base = ((ci * t + t0) * h + y0) * w + x0
        idx = off.reshape(-1, 1) + base.reshape(1, -1)
        _POOL_CACHE[key] = idx
    return idx


def maxpool3d_forward(x: np.ndarray, kt: int, ks: int, st: int, ss: int):
    """Returns (pooled (C,To,Ho,Wo), argmax linear indices into x.ravel()).

    Ties route to the first index in window scan order.
    """
    c, t, h, w = x.shape
    to, ho, wo = _out_len(t, kt, st), _out_len(h, ks, ss), _out_len(w, ks, ss)
    idx = _pool_indices(c, t, h, w, kt, ks, st, ss)
    vals = x.reshape(-1)[idx]
    am = np.argmax(vals, axis=0)
    cols = np.arange(idx.shape[1])
    y = vals[am, cols].reshape(c, to, ho, wo)
    arg = idx[am, cols].reshape(c, to, ho, wo)
    return np.ascontiguousarray(y), arg


def maxpool3d_backward(dy: np.ndarray, arg: np.ndarray, x_shape) -> np.ndarray:
    flat = np.bincount(arg.reshape(-1), weights=dy.reshape(-1).astype(np.float64),
                       minlength=int(np.prod(x_shape)))
    return flat.reshape(x_shape).astype(dy.dtype)
