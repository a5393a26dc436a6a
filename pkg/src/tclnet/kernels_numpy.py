"""Pure-numpy implementations of the hot kernels.

Fallback twin of the compiled `_fast_kernels` extension; both expose the
same six functions with identical semantics so either can back the layer
ops. im2col rows are ordered (batch, out_row, out_col) and columns
(channel, k_row, k_col), matching the (Cout, Cin*kh*kw) weight matrix.
"""

import numpy as np


def im2col(x, kh, kw, stride, pad):
    b, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * kh * kw)


def col2im(cols, b, c, h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:-pad, pad:-pad])
    return xp


def maxpool2x2_forward(x):
    b, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    windows = x.reshape(b, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, 4)
    # argmax is first-occurrence, i.e. row-major order inside each window
    idx = windows.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(windows, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(g, idx):
    b, c, oh, ow = g.shape
    dwin = np.zeros((b, c, oh, ow, 4), dtype=g.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    dx = dwin.reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh * 2, ow * 2)
    return np.ascontiguousarray(dx)


def upsample2x_forward(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2x_backward(g):
    # explicit left-to-right addition so float32 results match the compiled
    # backend bit for bit
    return (g[:, :, 0::2, 0::2] + g[:, :, 0::2, 1::2]
            + g[:, :, 1::2, 0::2] + g[:, :, 1::2, 1::2])
