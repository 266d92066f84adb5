"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
drop-in compatible. Override with TREMORKIT_KERNELS={auto,cython,numpy}.
"""

from __future__ import annotations

import os
import warnings

from . import kernels_numpy

_choice = os.environ.get("TREMORKIT_KERNELS", "auto").lower()

BACKEND = "numpy"
_impl = kernels_numpy

if _choice in ("auto", "cython"):
    try:
        from . import _ckernels as _cimpl

        _impl = _cimpl
        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        warnings.warn("compiled kernels unavailable; using numpy fallback")
elif _choice != "numpy":
    raise ValueError(f"TREMORKIT_KERNELS must be auto/cython/numpy, got {_choice!r}")

im2col3d = _impl.im2col3d
col2im3d = _impl.col2im3d
maxpool3d_forward = _impl.maxpool3d_forward
maxpool3d_backward = _impl.maxpool3d_backward
