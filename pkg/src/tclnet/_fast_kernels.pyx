# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: im2col/col2im gathers, 2x2 max-pool, 2x upsample.

Semantics mirror kernels_numpy exactly; the dispatcher in kernels.py picks
whichever is importable.
"""

import numpy as np

cimport numpy as cnp
from libc.string cimport memset

ctypedef fused floating:
    float
    double

ctypedef Py_ssize_t isize


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef isize b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef isize oh = (h + 2 * pad - kh) // stride + 1
    cdef isize ow = (w + 2 * pad - kw) // stride + 1
    out_np = np.empty((b * oh * ow, c * kh * kw),
                      dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, ::1] cols = out_np
    cdef isize bi, ci, i, j, r, s, ih, iw, row, base
    with nogil:
        for bi in range(b):
            for r in range(oh):
                for s in range(ow):
                    row = (bi * oh + r) * ow + s
                    for ci in range(c):
                        for i in range(kh):
                            ih = r * stride + i - pad
                            base = (ci * kh + i) * kw
                            if ih < 0 or ih >= h:
                                for j in range(kw):
                                    cols[row, base + j] = 0
                                continue
                            for j in range(kw):
                                iw = s * stride + j - pad
                                if iw < 0 or iw >= w:
                                    cols[row, base + j] = 0
                                else:
                                    cols[row, base + j] = x[bi, ci, ih, iw]
    return out_np


def col2im(floating[:, ::1] cols, isize b, isize c, isize h, isize w,
           int kh, int kw, int stride, int pad):
    cdef isize oh = (h + 2 * pad - kh) // stride + 1
    cdef isize ow = (w + 2 * pad - kw) // stride + 1
    out_np = np.zeros((b, c, h, w),
                      dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, :, ::1] dx = out_np
    cdef isize bi, ci, i, j, r, s, ih, iw, row, base
    with nogil:
        for bi in range(b):
            for r in range(oh):
                for s in range(ow):
                    row = (bi * oh + r) * ow + s
                    for ci in range(c):
                        for i in range(kh):
                            ih = r * stride + i - pad
                            if ih < 0 or ih >= h:
                                continue
                            base = (ci * kh + i) * kw
                            for j in range(kw):
                                iw = s * stride + j - pad
                                if 0 <= iw < w:
                                    dx[bi, ci, ih, iw] += cols[row, base + j]
    return out_np


def maxpool2x2_forward(floating[:, :, :, ::1] x):
    cdef isize b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef isize oh = h // 2, ow = w // 2
    out_np = np.empty((b, c, oh, ow),
                      dtype=np.float32 if floating is float else np.float64)
    idx_np = np.empty((b, c, oh, ow), dtype=np.uint8)
    cdef floating[:, :, :, ::1] out = out_np
    cdef unsigned char[:, :, :, ::1] idx = idx_np
    cdef isize bi, ci, r, s, k
    cdef floating v, best
    cdef unsigned char besti
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for r in range(oh):
                    for s in range(ow):
                        best = x[bi, ci, 2 * r, 2 * s]
                        besti = 0
                        v = x[bi, ci, 2 * r, 2 * s + 1]
                        if v > best:
                            best = v
                            besti = 1
                        v = x[bi, ci, 2 * r + 1, 2 * s]
                        if v > best:
                            best = v
                            besti = 2
                        v = x[bi, ci, 2 * r + 1, 2 * s + 1]
                        if v > best:
                            best = v
                            besti = 3
                        out[bi, ci, r, s] = best
                        idx[bi, ci, r, s] = besti
    return out_np, idx_np


def maxpool2x2_backward(floating[:, :, :, ::1] g, unsigned char[:, :, :, ::1] idx):
    cdef isize b = g.shape[0], c = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    out_np = np.zeros((b, c, oh * 2, ow * 2),
                      dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, :, ::1] dx = out_np
    cdef isize bi, ci, r, s
    cdef unsigned char k
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for r in range(oh):
                    for s in range(ow):
                        k = idx[bi, ci, r, s]
                        dx[bi, ci, 2 * r + (k >> 1), 2 * s + (k & 1)] = g[bi, ci, r, s]
    return out_np


def upsample2x_forward(floating[:, :, :, ::1] x):
    cdef isize b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out_np = np.empty((b, c, 2 * h, 2 * w),
                      dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, :, ::1] out = out_np
    cdef isize bi, ci, r, s
    cdef floating v
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for r in range(h):
                    for s in range(w):
                        v = x[bi, ci, r, s]
                        out[bi, ci, 2 * r, 2 * s] = v
                        out[bi, ci, 2 * r, 2 * s + 1] = v
                        out[bi, ci, 2 * r + 1, 2 * s] = v
                        out[bi, ci, 2 * r + 1, 2 * s + 1] = v
    return out_np


def upsample2x_backward(floating[:, :, :, ::1] g):
    cdef isize b = g.shape[0], c = g.shape[1], h2 = g.shape[2], w2 = g.shape[3]
    cdef isize h = h2 // 2, w = w2 // 2
    out_np = np.empty((b, c, h, w),
                      dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, :, ::1] dx = out_np
    cdef isize bi, ci, r, s
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for r in range(h):
                    for s in range(w):
                        dx[bi, ci, r, s] = (g[bi, ci, 2 * r, 2 * s]
                                            + g[bi, ci, 2 * r, 2 * s + 1]
                                            + g[bi, ci, 2 * r + 1, 2 * s]
                                            + g[bi, ci, 2 * r + 1, 2 * s + 1])
    return out_np
