# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled float32 kernels. numpy_impl.py defines the reference semantics;
outputs agree with it to float rounding. Accumulations run in double."""

import numpy as np

cimport numpy as cnp
from libc.math cimport erff, expf

cnp.import_array()

cdef float MASK_FILL = -1.0e9
cdef float INV_SQRT2 = 0.7071067811865476
cdef float INV_SQRT_2PI = 0.3989422804014327


def softmax_fwd(const float[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    out_arr = np.empty((n, m), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef float zmax, e
    cdef double s
    for i in range(n):
        zmax = x[i, 0]
        for j in range(1, m):
            if x[i, j] > zmax:
                zmax = x[i, j]
        s = 0.0
        for j in range(m):
            e = expf(x[i, j] - zmax)
            out[i, j] = e
            s += e
        for j in range(m):
            out[i, j] = <float> (out[i, j] / s)
    return out_arr


def masked_softmax_fwd(const float[:, ::1] x, const unsigned char[:, ::1] blocked):
    # branch-free inner loops so gcc can vectorize them (incl. expf/libmvec)
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    out_arr = np.empty((n, m), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef float zmax, z, e, inv
    cdef double s
    for i in range(n):
        zmax = -3.0e38
        for j in range(m):
            z = x[i, j] + MASK_FILL * blocked[i, j]
            out[i, j] = z
            if z > zmax:
                zmax = z
        for j in range(m):
            out[i, j] = expf(out[i, j] - zmax)
        s = 0.0
        for j in range(m):
            s += out[i, j]
        inv = <float> (1.0 / s)
        for j in range(m):
            out[i, j] = out[i, j] * inv * (1 - blocked[i, j])
    return out_arr


def masked_softmax_bwd(const float[:, ::1] p, const float[:, ::1] g):
    cdef Py_ssize_t n = p.shape[0], m = p.shape[1]
    out_arr = np.empty((n, m), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(m):
            dot += g[i, j] * p[i, j]
        for j in range(m):
            out[i, j] = p[i, j] * <float> (g[i, j] - dot)
    return out_arr


def layer_norm_fwd(const float[:, ::1] x, const float[::1] gain,
                   const float[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    out_arr = np.empty((n, c), dtype=np.float32)
    xhat_arr = np.empty((n, c), dtype=np.float32)
    ivar_arr = np.empty((n, 1), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef float[:, ::1] xhat = xhat_arr
    cdef float[:, ::1] ivar = ivar_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, d
    cdef float iv, xc
    for i in range(n):
        mu = 0.0
        for j in range(c):
            mu += x[i, j]
        mu /= c
        var = 0.0
        for j in range(c):
            d = x[i, j] - mu
            var += d * d
        var /= c
        iv = <float> (1.0 / ((var + eps) ** 0.5))
        ivar[i, 0] = iv
        for j in range(c):
            xc = <float> (x[i, j] - mu)
            xhat[i, j] = xc * iv
            out[i, j] = xhat[i, j] * gain[j] + bias[j]
    return out_arr, xhat_arr, ivar_arr


def layer_norm_bwd(const float[:, ::1] g, const float[:, ::1] xhat,
                   const float[:, ::1] ivar, const float[::1] gain):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1]
    dx_arr = np.empty((n, c), dtype=np.float32)
    dgain_arr = np.zeros(c, dtype=np.float64)
    dbias_arr = np.zeros(c, dtype=np.float64)
    cdef float[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_arr
    cdef double[::1] dbias = dbias_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, dh
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(c):
            dh = g[i, j] * gain[j]
            m1 += dh
            m2 += dh * xhat[i, j]
        m1 /= c
        m2 /= c
        for j in range(c):
            dh = g[i, j] * gain[j]
            dx[i, j] = <float> ((dh - m1 - xhat[i, j] * m2) * ivar[i, 0])
            dgain[j] += g[i, j] * xhat[i, j]
            dbias[j] += g[i, j]
    return dx_arr, dgain_arr.astype(np.float32), dbias_arr.astype(np.float32)


def gelu_fwd(const float[:, :] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    out_arr = np.empty((n, c), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef float v
    for i in range(n):
        for j in range(c):
            v = x[i, j]
            out[i, j] = 0.5 * v * (1.0 + erff(v * INV_SQRT2))
    return out_arr


def gelu_bwd(const float[:, :] x, const float[:, :] g):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    out_arr = np.empty((n, c), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef float v, cdf, pdf
    for i in range(n):
        for j in range(c):
            v = x[i, j]
            cdf = 0.5 * (1.0 + erff(v * INV_SQRT2))
            pdf = expf(-0.5 * v * v) * INV_SQRT_2PI
            out[i, j] = g[i, j] * (cdf + v * pdf)
    return out_arr


def box_mean_2d(const float[:, :, ::1] src, Py_ssize_t p):
    cdef Py_ssize_t c = src.shape[0], h = src.shape[1], w = src.shape[2]
    cdef Py_ssize_t r = p // 2
    out_arr = np.empty((c, h, w), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t k, i, j, a, b, a0, a1, b0, b1
    cdef double s
    for k in range(c):
        for i in range(h):
            a0 = i - r
            if a0 < 0:
                a0 = 0
            a1 = i + r
            if a1 > h - 1:
                a1 = h - 1
            for j in range(w):
                b0 = j - r
                if b0 < 0:
                    b0 = 0
                b1 = j + r
                if b1 > w - 1:
                    b1 = w - 1
                s = 0.0
                for a in range(a0, a1 + 1):
                    for b in range(b0, b1 + 1):
                        s += src[k, a, b]
                out[k, i, j] = <float> (s / ((a1 - a0 + 1) * (b1 - b0 + 1)))
    return out_arr


def bilinear_resize(const float[:, ::1] src, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    out_arr = np.empty((out_h, out_w), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, ylo, xlo, y1, x1
    cdef double y, x, fy, fx, top, bot
    for i in range(out_h):
        y = (i + 0.5) * (<double> h / out_h) - 0.5
        if y < 0.0:
            y = 0.0
        if y > h - 1.0:
            y = h - 1.0
        ylo = <Py_ssize_t> y
        if h > 1 and ylo > h - 2:
            ylo = h - 2
        fy = y - ylo
        y1 = ylo + 1 if h > 1 else ylo
        for j in range(out_w):
            x = (j + 0.5) * (<double> w / out_w) - 0.5
            if x < 0.0:
                x = 0.0
            if x > w - 1.0:
                x = w - 1.0
            xlo = <Py_ssize_t> x
            if w > 1 and xlo > w - 2:
                xlo = w - 2
            fx = x - xlo
            x1 = xlo + 1 if w > 1 else xlo
            top = src[ylo, xlo] + (src[ylo, x1] - src[ylo, xlo]) * fx
            bot = src[y1, xlo] + (src[y1, x1] - src[y1, xlo]) * fx
            out[i, j] = <float> (top + (bot - top) * fy)
    return out_arr
