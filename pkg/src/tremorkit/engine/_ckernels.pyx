# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend: im2col/col2im for 3-D convolution and max
pooling with argmax tracking. Mirrors kernels_numpy exactly; hot loops are
OpenMP-parallel with contiguous-row memcpy fast paths."""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.string cimport memcpy

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col3d(floating[:, :, :, ::1] xp, int kt, int ks, int st, int ss):
    cdef Py_ssize_t c = xp.shape[0], tp = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t to = (tp - kt) // st + 1
    cdef Py_ssize_t ho = (hp - ks) // ss + 1
    cdef Py_ssize_t wo = (wp - ks) // ss + 1
    cdef Py_ssize_t n = to * ho * wo
    cdef Py_ssize_t n_rows = c * kt * ks * ks

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    cols_arr = np.empty((n_rows, n), dtype=dtype)
    cdef floating[:, ::1] cols = cols_arr

    cdef Py_ssize_t row, ci, rem, dt, dy, dx, ot, oy, ox, t0, y0, col
    with nogil:
        for row in prange(n_rows, schedule="static"):
            ci = row // (kt * ks * ks)
            rem = row % (kt * ks * ks)
            dt = rem // (ks * ks)
            dy = (rem // ks) % ks
            dx = rem % ks
            col = 0
            for ot in range(to):
                t0 = ot * st + dt
                for oy in range(ho):
                    y0 = oy * ss + dy
                    if ss == 1:
                        memcpy(&cols[row, col], &xp[ci, t0, y0, dx],
                               wo * sizeof(floating))
                        col = col + wo
                    else:
                        for ox in range(wo):
                            cols[row, col] = xp[ci, t0, y0, ox * ss + dx]
                            col = col + 1
    return cols_arr


def col2im3d(floating[:, ::1] cols, shape, int kt, int ks, int st, int ss):
    cdef Py_ssize_t c = shape[0], tp = shape[1], hp = shape[2], wp = shape[3]
    cdef Py_ssize_t to = (tp - kt) // st + 1
    cdef Py_ssize_t ho = (hp - ks) // ss + 1
    cdef Py_ssize_t wo = (wp - ks) // ss + 1
    cdef Py_ssize_t per_c = kt * ks * ks

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((c, tp, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr

    # parallel over channels: every row of channel ci scatters into out[ci] only
    cdef Py_ssize_t ci, rem, dt, dy, dx, ot, oy, ox, row, col, t0, y0
    with nogil:
        for ci in prange(c, schedule="static"):
            for rem in range(per_c):
                row = ci * per_c + rem
                dt = rem // (ks * ks)
                dy = (rem // ks) % ks
                dx = rem % ks
                col = 0
                for ot in range(to):
                    t0 = ot * st + dt
                    for oy in range(ho):
                        y0 = oy * ss + dy
                        for ox in range(wo):
                            out[ci, t0, y0, ox * ss + dx] += cols[row, col]
                            col = col + 1
    return out_arr


def maxpool3d_forward(floating[:, :, :, ::1] x, int kt, int ks, int st, int ss):
    cdef Py_ssize_t c = x.shape[0], t = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t to = (t - kt) // st + 1
    cdef Py_ssize_t ho = (h - ks) // ss + 1
    cdef Py_ssize_t wo = (w - ks) // ss + 1

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((c, to, ho, wo), dtype=dtype)
    arg_arr = np.empty((c, to, ho, wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr

    cdef Py_ssize_t ci, ot, oy, ox, dt, dy, dx, ti, yi, xi, best_idx
    cdef floating best, v
    with nogil:
        for ci in prange(c, schedule="static"):
            for ot in range(to):
                for oy in range(ho):
                    for ox in range(wo):
                        best = x[ci, ot * st, oy * ss, ox * ss]
                        best_idx = ((ci * t + ot * st) * h + oy * ss) * w + ox * ss
                        for dt in range(kt):
                            ti = ot * st + dt
                            for dy in range(ks):
                                yi = oy * ss + dy
                                for dx in range(ks):
                                    xi = ox * ss + dx
                                    v = x[ci, ti, yi, xi]
                                    if v > best:
                                        best = v
                                        best_idx = ((ci * t + ti) * h + yi) * w + xi
                        y[ci, ot, oy, ox] = best
                        arg[ci, ot, oy, ox] = best_idx
    return y_arr, arg_arr


def maxpool3d_backward(floating[:, :, :, ::1] dy, cnp.int64_t[:, :, :, ::1] arg, x_shape):
    cdef Py_ssize_t c = x_shape[0]
    cdef Py_ssize_t per_c = x_shape[1] * x_shape[2] * x_shape[3]
    cdef Py_ssize_t out_per_c = dy.shape[1] * dy.shape[2] * dy.shape[3]

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros(c * per_c, dtype=dtype)
    cdef floating[::1] out = out_arr
    dflat_arr = np.ascontiguousarray(dy).reshape(-1)
    aflat_arr = np.ascontiguousarray(arg).reshape(-1)
    cdef floating[::1] dflat = dflat_arr
    cdef cnp.int64_t[::1] aflat = aflat_arr

    # argmax indices stay inside their own channel block: safe channel split
    cdef Py_ssize_t ci, i
    with nogil:
        for ci in prange(c, schedule="static"):
            for i in range(ci * out_per_c, (ci + 1) * out_per_c):
                out[aflat[i]] += dflat[i]
    return out_arr.reshape(x_shape)
