"""Minimal tensor engine: autodiff ops over numpy with compiled hot kernels."""

import ctypes
import sys


def _tune_allocator():
    """Keep big numpy buffers on the heap free-list instead of mmap/munmap
    round trips; the conv workspaces are reallocated every step."""
    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-1, ctypes.c_int(2 ** 31 - 1))   # M_TRIM_THRESHOLD
        libc.mallopt(-3, ctypes.c_int(2 ** 30))       # M_MMAP_THRESHOLD
    except OSError:
        pass


_tune_allocator()

from .kernels import BACKEND
from .optim import Adam, ReduceOnPlateau
from .tensor import (GraphNotBuilt, ShapeMismatch, Tensor, add, as_tensor,
                     concat, conv3d, cross_entropy, getitem, matmul, maxpool3d,
                     mul, no_grad, relu, reshape, sigmoid, softmax, stack,
                     tanh, tmean, transpose, tsum)

__all__ = ["BACKEND", "Adam", "ReduceOnPlateau", "GraphNotBuilt", "ShapeMismatch",
           "Tensor", "add", "as_tensor", "concat", "conv3d", "cross_entropy",
           "getitem", "matmul", "maxpool3d", "mul", "no_grad", "relu", "reshape",
           "sigmoid", "softmax", "stack", "tanh", "tmean", "transpose", "tsum"]
