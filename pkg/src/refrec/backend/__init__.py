"""Kernel backend selection.

The hot kernels exist twice: a Cython extension (`refrec.backend._native`)
and the numpy reference (`refrec.backend.numpy_impl`). The extension is used
automatically for contiguous float32 inputs when it imported cleanly; set
REFREC_BACKEND=numpy to force the fallback or REFREC_BACKEND=native to fail
loudly when the extension is missing. float64 work (gradient verification)
always takes the numpy path.

Each backend is deterministic on its own; outputs across backends agree only
to float rounding. See benchmarks/bench_kernels.py for a speed comparison.
"""

import importlib
import os

import numpy as np

from . import numpy_impl
from .numpy_impl import MASK_FILL

_choice = os.environ.get("REFREC_BACKEND", "auto").lower()
if _choice not in ("auto", "numpy", "native"):
    raise RuntimeError(f"REFREC_BACKEND must be auto|numpy|native, got {_choice!r}")

_native = None
if _choice in ("auto", "native"):
    try:
        _native = importlib.import_module("refrec.backend._native")
    except ImportError as exc:
        if _choice == "native":
            raise RuntimeError("REFREC_BACKEND=native but the compiled extension "
                               "is unavailable") from exc


def active_backend():
    return "native" if _native is not None else "numpy"


def have_native():
    return _native is not None


def _fast(*arrays):
    """True when every array may take the compiled float32 path."""
    if _native is None:
        return False
    for a in arrays:
        if a is not None and (a.dtype != np.float32 or not a.flags.c_contiguous):
            return False
    return True


# numpy's SIMD exp outruns the compiled softmax forward (see
# benchmarks/bench_kernels.py), so `auto` routes that one kernel to numpy;
# REFREC_BACKEND=native forces the extension everywhere
_all_native = _choice == "native"


def masked_softmax_fwd(x, blocked):
    if _all_native and _fast(x):
        if blocked is None:
            return _native.softmax_fwd(x)
        return _native.masked_softmax_fwd(x, blocked.view(np.uint8))
    return numpy_impl.masked_softmax_fwd(x, blocked)


def masked_softmax_bwd(p, g, blocked):
    if _fast(p, g):
        return _native.masked_softmax_bwd(p, np.ascontiguousarray(g))
    return numpy_impl.masked_softmax_bwd(p, g, blocked)


def layer_norm_fwd(x, gain, bias, eps):
    if _fast(x, gain, bias):
        return _native.layer_norm_fwd(x, gain, bias, eps)
    return numpy_impl.layer_norm_fwd(x, gain, bias, eps)


def layer_norm_bwd(g, xhat, ivar, gain):
    if _fast(g, xhat, ivar, gain):
        return _native.layer_norm_bwd(np.ascontiguousarray(g), xhat, ivar, gain)
    return numpy_impl.layer_norm_bwd(g, xhat, ivar, gain)


def gelu_fwd(x):
    if _fast(x):
        return _native.gelu_fwd(x)
    return numpy_impl.gelu_fwd(x)


def gelu_bwd(x, g):
    if _fast(x, g):
        return _native.gelu_bwd(x, np.ascontiguousarray(g))
    return numpy_impl.gelu_bwd(x, g)


def box_mean_2d(src, p):
    if _fast(src):
        return _native.box_mean_2d(src, p)
    return numpy_impl.box_mean_2d(src, p)


def bilinear_resize(src, out_h, out_w):
    if _fast(src):
        return _native.bilinear_resize(src, out_h, out_w)
    return numpy_impl.bilinear_resize(src, out_h, out_w)
