"""Inference-time anomaly scoring: per-scale residual maps, upsampling to
image resolution, image-level statistics, PGM dumps."""

import numpy as np

from . import backend
from .errors import ShapeError

_COS_GUARD_SQ = 1e-16


def scale_score_map(rec, org):
    """Per-position L2 distance plus cosine distance for one (C, H, W) pair."""
    if rec.shape != org.shape:
        raise ShapeError(f"score inputs {rec.shape} vs {org.shape}")
    diff = rec - org
    ssq = (diff * diff).sum(axis=0)
    dist = np.sqrt(ssq)
    dots = (rec * org).sum(axis=0)
    denom = np.sqrt(np.maximum((rec * rec).sum(axis=0), _COS_GUARD_SQ)
                    * np.maximum((org * org).sum(axis=0), _COS_GUARD_SQ))
    return (dist + (1.0 - dots / denom)).astype(rec.dtype)


def bilinear_upsample(grid, out_h, out_w):
    """Half-pixel-centre bilinear resize; target must not shrink the map."""
    h, w = grid.shape
    if out_h < h or out_w < w:
        raise ShapeError(f"upsample target {out_h}x{out_w} smaller than "
                         f"source {h}x{w}")
    if (out_h, out_w) == (h, w):
        return grid.copy()
    return backend.bilinear_resize(np.ascontiguousarray(grid), out_h, out_w)


def score_map(f_rec, f_org, image_hw):
    """Mean over scales of the upsampled per-scale score maps."""
    if len(f_rec) != len(f_org):
        raise ShapeError(f"{len(f_rec)} reconstructed scales vs {len(f_org)}")
    h, w = image_hw
    acc = np.zeros((h, w), dtype=np.float64)
    for rec, org in zip(f_rec, f_org):
        acc += bilinear_upsample(scale_score_map(rec, org), h, w)
    return (acc / len(f_rec)).astype(np.float32)


def _valid_box_mean(grid, kh, kw):
    """Means of every fully-contained kh x kw window."""
    ii = np.zeros((grid.shape[0] + 1, grid.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(grid, axis=0, dtype=np.float64), axis=1, out=ii[1:, 1:])
    sums = ii[kh:, kw:] - ii[:-kh, kw:] - ii[kh:, :-kw] + ii[:-kh, :-kw]
    return sums / (kh * kw)


def image_score(smap, smooth_window=4):
    """Image-level statistic: max of the mean-smoothed score map."""
    kh = min(smooth_window, smap.shape[0])
    kw = min(smooth_window, smap.shape[1])
    return float(_valid_box_mean(smap, kh, kw).max())


def write_pgm(smap, path, bounds_path=None):
    """8-bit binary PGM, min-max normalized per image; the normalization
    bounds go to a sidecar so scores can be recovered."""
    lo = float(smap.min())
    hi = float(smap.max())
    if hi > lo:
        scaled = np.round((smap - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(smap)
    body = scaled.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{smap.shape[1]} {smap.shape[0]}\n255\n".encode("ascii"))
        f.write(body.tobytes())
    if bounds_path is not None:
        with open(bounds_path, "w", encoding="ascii") as f:
            f.write(f"min={lo!r}\nmax={hi!r}\n")
