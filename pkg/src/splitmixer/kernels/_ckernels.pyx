# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled hot kernels: depthwise 1D/2D convolutions and GELU.

Mirrors the call surface of pykernels; accumulation order per output element
is bias first then ascending tap index, matching the NumPy fallback.
"""

import numpy as np

from libc.math cimport erf, erff, exp, expf

ctypedef fused floating:
    float
    double

cdef double SQRT2 = 1.4142135623730951
cdef double INV_SQRT_2PI = 0.3989422804014327
cdef float SQRT2_F = 1.4142135623730951
cdef float INV_SQRT_2PI_F = 0.3989422804014327


def dwconv1d_fwd(floating[:, :, :, ::1] x, floating[:, ::1] w,
                 floating[::1] b, int axis):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hh = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef Py_ssize_t i, ch, y, o, j, t
    cdef floating acc
    out_np = np.empty((n, c, hh, ww), dtype=np.asarray(x).dtype)
    cdef floating[:, :, :, ::1] out = out_np
    if axis == 3:
        for i in range(n):
            for ch in range(c):
                for y in range(hh):
                    for o in range(ww):
                        acc = b[ch]
                        for j in range(k):
                            t = o + j - pad
                            if 0 <= t < ww:
                                acc = acc + w[ch, j] * x[i, ch, y, t]
                        out[i, ch, y, o] = acc
    elif axis == 2:
        for i in range(n):
            for ch in range(c):
                for o in range(hh):
                    for y in range(ww):
                        acc = b[ch]
                        for j in range(k):
                            t = o + j - pad
                            if 0 <= t < hh:
                                acc = acc + w[ch, j] * x[i, ch, t, y]
                        out[i, ch, o, y] = acc
    else:
        raise ValueError(f"axis must be 2 or 3, got {axis}")
    return out_np


def dwconv1d_bwd(floating[:, :, :, ::1] x, floating[:, ::1] w,
                 floating[:, :, :, ::1] gy, int axis):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hh = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef Py_ssize_t i, ch, y, o, j, t
    cdef floating acc
    cdef double accw, accb
    dt = np.asarray(x).dtype
    gx_np = np.empty((n, c, hh, ww), dtype=dt)
    gw_np = np.zeros((c, k), dtype=dt)
    gb_np = np.zeros(c, dtype=dt)
    cdef floating[:, :, :, ::1] gx = gx_np
    cdef floating[:, ::1] gw = gw_np
    cdef floating[::1] gb = gb_np
    if axis == 3:
        for i in range(n):
            for ch in range(c):
                for y in range(hh):
                    for o in range(ww):
                        acc = 0
                        for j in range(k):
                            t = o - j + pad
                            if 0 <= t < ww:
                                acc = acc + w[ch, j] * gy[i, ch, y, t]
                        gx[i, ch, y, o] = acc
        for ch in range(c):
            accb = 0
            for j in range(k):
                accw = 0
                for i in range(n):
                    for y in range(hh):
                        for o in range(ww):
                            t = o + j - pad
                            if 0 <= t < ww:
                                accw += gy[i, ch, y, o] * x[i, ch, y, t]
                gw[ch, j] = <floating> accw
            for i in range(n):
                for y in range(hh):
                    for o in range(ww):
                        accb += gy[i, ch, y, o]
            gb[ch] = <floating> accb
    elif axis == 2:
        for i in range(n):
            for ch in range(c):
                for o in range(hh):
                    for y in range(ww):
                        acc = 0
                        for j in range(k):
                            t = o - j + pad
                            if 0 <= t < hh:
                                acc = acc + w[ch, j] * gy[i, ch, t, y]
                        gx[i, ch, o, y] = acc
        for ch in range(c):
            accb = 0
            for j in range(k):
                accw = 0
                for i in range(n):
                    for o in range(hh):
                        for y in range(ww):
                            t = o + j - pad
                            if 0 <= t < hh:
                                accw += gy[i, ch, o, y] * x[i, ch, t, y]
                gw[ch, j] = <floating> accw
            for i in range(n):
                for o in range(hh):
                    for y in range(ww):
                        accb += gy[i, ch, o, y]
            gb[ch] = <floating> accb
    else:
        raise ValueError(f"axis must be 2 or 3, got {axis}")
    return gx_np, gw_np, gb_np


def dwconv2d_fwd(floating[:, :, :, ::1] x, floating[:, :, ::1] w,
                 floating[::1] b):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hh = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ph = (kh - 1) // 2, pw = (kw - 1) // 2
    cdef Py_ssize_t i, ch, oy, ox, a, d, ty, tx
    cdef floating acc
    out_np = np.empty((n, c, hh, ww), dtype=np.asarray(x).dtype)
    cdef floating[:, :, :, ::1] out = out_np
    for i in range(n):
        for ch in range(c):
            for oy in range(hh):
                for ox in range(ww):
                    acc = b[ch]
                    for a in range(kh):
                        ty = oy + a - ph
                        if 0 <= ty < hh:
                            for d in range(kw):
                                tx = ox + d - pw
                                if 0 <= tx < ww:
                                    acc = acc + w[ch, a, d] * x[i, ch, ty, tx]
                    out[i, ch, oy, ox] = acc
    return out_np


def dwconv2d_bwd(floating[:, :, :, ::1] x, floating[:, :, ::1] w,
                 floating[:, :, :, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hh = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ph = (kh - 1) // 2, pw = (kw - 1) // 2
    cdef Py_ssize_t i, ch, oy, ox, a, d, ty, tx
    cdef floating acc
    cdef double accw, accb
    dt = np.asarray(x).dtype
    gx_np = np.empty((n, c, hh, ww), dtype=dt)
    gw_np = np.zeros((c, kh, kw), dtype=dt)
    gb_np = np.zeros(c, dtype=dt)
    cdef floating[:, :, :, ::1] gx = gx_np
    cdef floating[:, :, ::1] gw = gw_np
    cdef floating[::1] gb = gb_np
    for i in range(n):
        for ch in range(c):
            for oy in range(hh):
                for ox in range(ww):
                    acc = 0
                    for a in range(kh):
                        ty = oy - a + ph
                        if 0 <= ty < hh:
                            for d in range(kw):
                                tx = ox - d + pw
                                if 0 <= tx < ww:
                                    acc = acc + w[ch, a, d] * gy[i, ch, ty, tx]
                    gx[i, ch, oy, ox] = acc
    for ch in range(c):
        accb = 0
        for a in range(kh):
            for d in range(kw):
                accw = 0
                for i in range(n):
                    for oy in range(hh):
                        ty = oy + a - ph
                        if not 0 <= ty < hh:
                            continue
                        for ox in range(ww):
                            tx = ox + d - pw
                            if 0 <= tx < ww:
                                accw += gy[i, ch, oy, ox] * x[i, ch, ty, tx]
                gw[ch, a, d] = <floating> accw
        for i in range(n):
            for oy in range(hh):
                for ox in range(ww):
                    accb += gy[i, ch, oy, ox]
        gb[ch] = <floating> accb
    return gx_np, gw_np, gb_np


def gelu_fwd(floating[:, :, :, ::1] x):
    cdef Py_ssize_t total = x.shape[0] * x.shape[1] * x.shape[2] * x.shape[3]
    cdef Py_ssize_t i
    out_np = np.empty((x.shape[0], x.shape[1], x.shape[2], x.shape[3]),
                      dtype=np.asarray(x).dtype)
    cdef floating[:, :, :, ::1] out4 = out_np
    cdef floating* xp = &x[0, 0, 0, 0]
    cdef floating* op = &out4[0, 0, 0, 0]
    cdef double v
    cdef float vf
    if floating is float:
        for i in range(total):
            vf = xp[i]
            op[i] = vf * 0.5 * (1.0 + erff(vf / SQRT2_F))
    else:
        for i in range(total):
            v = xp[i]
            op[i] = v * 0.5 * (1.0 + erf(v / SQRT2))
    return out_np


def gelu_bwd(floating[:, :, :, ::1] x, floating[:, :, :, ::1] gy):
    cdef Py_ssize_t total = x.shape[0] * x.shape[1] * x.shape[2] * x.shape[3]
    cdef Py_ssize_t i
    out_np = np.empty((x.shape[0], x.shape[1], x.shape[2], x.shape[3]),
                      dtype=np.asarray(x).dtype)
    cdef floating[:, :, :, ::1] out4 = out_np
    cdef floating* xp = &x[0, 0, 0, 0]
    cdef floating* gp = &gy[0, 0, 0, 0]
    cdef floating* op = &out4[0, 0, 0, 0]
    cdef double v, cdf, pdf
    cdef float vf, cdff, pdff
    if floating is float:
        for i in range(total):
            vf = xp[i]
            cdff = 0.5 * (1.0 + erff(vf / SQRT2_F))
            pdff = INV_SQRT_2PI_F * expf(-0.5 * vf * vf)
            op[i] = gp[i] * (cdff + vf * pdff)
    else:
        for i in range(total):
            v = xp[i]
            cdf = 0.5 * (1.0 + erf(v / SQRT2))
            pdf = INV_SQRT_2PI * exp(-0.5 * v * v)
            op[i] = gp[i] * (cdf + v * pdf)
    return out_np
