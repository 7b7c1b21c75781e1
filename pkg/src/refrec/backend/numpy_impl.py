"""Pure numpy implementations of the hot kernels.

Reference semantics for the compiled backend: `_native` must match these
functions (up to float rounding) and is benchmarked against them.
"""

import numpy as np
from scipy.special import erf

# additive stand-in for "-inf" in attention masks; exact zeros are enforced
# on the output side, so the only requirement is that exp() underflows
MASK_FILL = -1.0e9

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def masked_softmax_fwd(x, blocked):
    """Row softmax of (x + MASK_FILL * blocked) with exact zeros where blocked."""
    if blocked is None:
        z = x - x.max(axis=1, keepdims=True)
    else:
        z = x + (blocked * np.asarray(MASK_FILL, dtype=x.dtype))
        z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    if blocked is not None:
        p[blocked] = 0.0
    return p


def masked_softmax_bwd(p, g, blocked):
    dot = (g * p).sum(axis=1, keepdims=True)
    return p * (g - dot)


def layer_norm_fwd(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    return xhat * gain + bias, xhat, ivar.astype(x.dtype)


def layer_norm_bwd(g, xhat, ivar, gain):
    dxhat = g * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * ivar
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


def gelu_fwd(x):
    return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype, copy=False)


def gelu_bwd(x, g):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return (g * (cdf + x * pdf)).astype(x.dtype, copy=False)


def box_mean_2d(src, p):
    """Channel-wise p x p window mean, window clipped at the borders.

    src: (C, H, W). Accumulates in float64 regardless of input dtype.
    """
    c, h, w = src.shape
    r = p // 2
    ii = np.zeros((c, h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(src, axis=1, dtype=np.float64), axis=2, out=ii[:, 1:, 1:])
    h0 = np.maximum(np.arange(h) - r, 0)
    h1 = np.minimum(np.arange(h) + r, h - 1) + 1
    w0 = np.maximum(np.arange(w) - r, 0)
    w1 = np.minimum(np.arange(w) + r, w - 1) + 1
    sums = (
        ii[:, h1[:, None], w1[None, :]]
        - ii[:, h0[:, None], w1[None, :]]
        - ii[:, h1[:, None], w0[None, :]]
        + ii[:, h0[:, None], w0[None, :]]
    )
    counts = (h1 - h0)[:, None] * (w1 - w0)[None, :]
    return (sums / counts).astype(src.dtype)


def bilinear_resize(src, out_h, out_w):
    """Bilinear resize of a 2-D map, half-pixel-centre (align-corners-false)."""
    h, w = src.shape
    src64 = src.astype(np.float64, copy=False)

    def axis_coords(n_src, n_out):
        x = (np.arange(n_out) + 0.5) * (n_src / n_out) - 0.5
        x = np.clip(x, 0.0, n_src - 1.0)
        lo = np.floor(x).astype(np.intp)
        lo = np.minimum(lo, n_src - 2) if n_src > 1 else np.zeros_like(lo)
        frac = x - lo
        return lo, frac

    ylo, fy = axis_coords(h, out_h)
    xlo, fx = axis_coords(w, out_w)
    tl = src64[ylo[:, None], xlo[None, :]]
    tr = src64[ylo[:, None], (xlo + (1 if w > 1 else 0))[None, :]]
    bl = src64[(ylo + (1 if h > 1 else 0))[:, None], xlo[None, :]]
    br = src64[(ylo + (1 if h > 1 else 0))[:, None], (xlo + (1 if w > 1 else 0))[None, :]]
    top = tl + (tr - tl) * fx[None, :]
    bot = bl + (br - bl) * fx[None, :]
    return (top + (bot - top) * fy[:, None]).astype(src.dtype)
