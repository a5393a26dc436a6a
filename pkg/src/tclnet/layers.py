"""Network layer primitives: conv, batchnorm, pooling, upsampling, and the
ConvBlock / ResBlock composites the model is assembled from.

Each layer owns its parameters as Tensor leaves and exposes a forward that
records a backward closure on the tape. Convolution runs as im2col + GEMM
with a tensordot fast path for 1x1 kernels; the im2col gather itself comes
from the active kernel backend. Columns are recomputed in backward rather
than cached, trading one extra gather for not holding the largest buffers
across the whole graph.
"""

from __future__ import annotations

import numpy as np

from tclnet import kernels
from tclnet.errors import ConfigError, ContractError, DomainError, ShapeError
from tclnet.tensor import SINGLE, Tensor, add

_MODES = ("train", "eval")


def _check_mode(mode):
    if mode not in _MODES:
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")


def _check_image(x, name="input"):
    if not isinstance(x, Tensor) or x.data.ndim != 4:
        got = x.data.ndim if isinstance(x, Tensor) else type(x).__name__
        raise ShapeError(f"{name} must be a 4-D (B,C,H,W) tensor, got {got}")


# -- stateless taped ops -------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.data.dtype.type(0))

    def backprop(g):
        # subgradient at 0 is 0
        return (g * mask,)

    return Tensor._from_op(out, (x,), backprop, "relu")


def maxpool2x2(x: Tensor) -> Tensor:
    _check_image(x)
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even extents, got {h}x{w}")
    out, idx = kernels.maxpool2x2_forward(x.data)

    def backprop(g):
        return (kernels.maxpool2x2_backward(np.ascontiguousarray(g), idx),)

    return Tensor._from_op(out, (x,), backprop, "maxpool2x2")


def upsample_nearest2x(x: Tensor) -> Tensor:
    _check_image(x)
    out = kernels.upsample2x_forward(x.data)

    def backprop(g):
        return (kernels.upsample2x_backward(np.ascontiguousarray(g)),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backprop, "upsample2x")


# -- convolution ---------------------------------------------------------------


class Conv2d:
    """2-D cross-correlation with zero padding and optional bias.

    Default padding is the same-size rule (k // 2) so spatial extent maps to
    H/stride exactly for the architecture's sizes.
    """

    KERNELS = (1, 3, 7)
    STRIDES = (1, 2)

    def __init__(self, in_channels, out_channels, kernel, stride=1,
                 padding=None, bias=True, rng=None, dtype=SINGLE):
        if in_channels < 1 or out_channels < 1:
            raise ConfigError(f"channel counts must be positive, got "
                              f"{in_channels}->{out_channels}")
        if kernel not in self.KERNELS:
            raise ConfigError(f"kernel size {kernel} not in {self.KERNELS}")
        if stride not in self.STRIDES:
            raise ConfigError(f"stride {stride} not in {self.STRIDES}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else int(padding)
        if self.padding < 0:
            raise ConfigError(f"padding must be nonnegative, got {self.padding}")
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = in_channels * kernel * kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       size=(out_channels, in_channels, kernel, kernel))
        self.weight = Tensor(w, requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True,
                           dtype=dtype) if bias else None

    def out_extent(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def parameters(self):
        named = [("weight", self.weight)]
        if self.bias is not None:
            named.append(("bias", self.bias))
        return named

    def buffers(self):
        return []

    def forward(self, x: Tensor) -> Tensor:
        _check_image(x)
        b, cin, h, w = x.data.shape
        if cin != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} input channels, "
                             f"got {cin}")
        k, s, p = self.kernel, self.stride, self.padding
        if h + 2 * p < k or w + 2 * p < k:
            raise ShapeError(f"padded extent {h + 2 * p}x{w + 2 * p} smaller "
                             f"than kernel {k}")
        if k == 1 and s == 1 and p == 0:
            return self._forward_1x1(x)
        return self._forward_im2col(x)

    __call__ = forward

    def _forward_1x1(self, x: Tensor) -> Tensor:
        b, cin, h, w = x.data.shape
        cout = self.out_channels
        w2 = self.weight.data.reshape(cout, cin)
        out = np.tensordot(x.data, w2, axes=([1], [1]))  # (B,H,W,Cout)
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        if self.bias is not None:
            out += self.bias.data.reshape(1, cout, 1, 1)
        x_data = x.data

        def backprop(g):
            dw2 = np.tensordot(g, x_data, axes=([0, 2, 3], [0, 2, 3]))
            dw = dw2.reshape(cout, cin, 1, 1)
            dx = np.tensordot(g, w2, axes=([1], [0]))  # (B,H,W,Cin)
            dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
            if self.bias is None:
                return dx, dw
            return dx, dw, g.sum(axis=(0, 2, 3))

        parents = (x, self.weight) if self.bias is None else (x, self.weight, self.bias)
        return Tensor._from_op(out, parents, backprop, "conv1x1")

    def _forward_im2col(self, x: Tensor) -> Tensor:
        b, cin, h, w = x.data.shape
        cout, k, s, p = self.out_channels, self.kernel, self.stride, self.padding
        oh, ow = self.out_extent(h, w)
        wmat = self.weight.data.reshape(cout, cin * k * k)
        cols = kernels.im2col(x.data, k, k, s, p)
        out = cols @ wmat.T  # (B*OH*OW, Cout)
        del cols
        out = np.ascontiguousarray(
            out.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2))
        if self.bias is not None:
            out += self.bias.data.reshape(1, cout, 1, 1)
        x_data = x.data

        def backprop(g):
            gmat = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, cout)
            cols = kernels.im2col(x_data, k, k, s, p)
            dw = (gmat.T @ cols).reshape(self.weight.data.shape)
            del cols
            dcols = np.ascontiguousarray(gmat @ wmat)
            dx = kernels.col2im(dcols, b, cin, h, w, k, k, s, p)
            if self.bias is None:
                return dx, dw
            return dx, dw, g.sum(axis=(0, 2, 3))

        parents = (x, self.weight) if self.bias is None else (x, self.weight, self.bias)
        return Tensor._from_op(out, parents, backprop, "conv2d")


def conv2d_naive(x, layer: Conv2d) -> np.ndarray:
    """Quadruple-loop direct cross-correlation, the reference the fast path
    is tested against. Test-only: quadratic-time scalar loops."""
    x_data = x.data if isinstance(x, Tensor) else np.asarray(x)
    b, cin, h, w = x_data.shape
    if cin != layer.in_channels:
        raise ShapeError(f"conv expects {layer.in_channels} input channels, got {cin}")
    k, s, p = layer.kernel, layer.stride, layer.padding
    oh, ow = layer.out_extent(h, w)
    weight = layer.weight.data
    out = np.zeros((b, layer.out_channels, oh, ow), dtype=x_data.dtype)
    for bi in range(b):
        for co in range(layer.out_channels):
            for r in range(oh):
                for t in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for i in range(k):
                            ih = r * s + i - p
                            if ih < 0 or ih >= h:
                                continue
                            for j in range(k):
                                iw = t * s + j - p
                                if 0 <= iw < w:
                                    acc += float(x_data[bi, ci, ih, iw]) * \
                                        float(weight[co, ci, i, j])
                    if layer.bias is not None:
                        acc += float(layer.bias.data[co])
                    out[bi, co, r, t] = acc
    return out


# -- batch normalization --------------------------------------------------------


class BatchNorm2d:
    """Per-channel batch normalization with learned affine and running stats.

    Train mode normalizes by biased batch statistics and folds them into the
    running estimates as running <- (1-momentum)*running + momentum*batch;
    eval mode normalizes by the running estimates only.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=SINGLE):
        if channels < 1:
            raise ConfigError(f"channels must be positive, got {channels}")
        if not 0.0 <= momentum <= 1.0:
            raise ConfigError(f"momentum must be in [0,1], got {momentum}")
        self.channels = channels
        self.momentum = float(momentum)
        self.eps = float(eps)
        dt = np.dtype(dtype)
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dt)
        self.beta = Tensor(np.zeros(channels), requires_grad=True, dtype=dt)
        self.running_mean = np.zeros(channels, dtype=dt)
        self.running_var = np.ones(channels, dtype=dt)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean),
                ("running_var", self.running_var)]

    def forward(self, x: Tensor, mode="train") -> Tensor:
        _check_image(x)
        _check_mode(mode)
        b, c, h, w = x.data.shape
        if c != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {c}")
        if mode == "train":
            n = b * h * w
            if n < 2:
                raise DomainError("batchnorm train mode needs at least 2 "
                                  "elements per channel for a variance")
            mean = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean = ((1.0 - m) * self.running_mean
                                 + m * mean).astype(self.running_mean.dtype)
            self.running_var = ((1.0 - m) * self.running_var
                                + m * var).astype(self.running_var.dtype)
        else:
            mean = self.running_mean.astype(x.data.dtype)
            var = self.running_var.astype(x.data.dtype)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
        out = (self.gamma.data.reshape(1, c, 1, 1) * xhat
               + self.beta.data.reshape(1, c, 1, 1))
        gamma_data = self.gamma.data

        if mode == "train":
            n = b * h * w

            def backprop(g):
                dgamma = (g * xhat).sum(axis=(0, 2, 3))
                dbeta = g.sum(axis=(0, 2, 3))
                dxhat = g * gamma_data.reshape(1, c, 1, 1)
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (inv.reshape(1, c, 1, 1) / n) * (n * dxhat - s1 - xhat * s2)
                return dx, dgamma, dbeta
        else:
            def backprop(g):
                dgamma = (g * xhat).sum(axis=(0, 2, 3))
                dbeta = g.sum(axis=(0, 2, 3))
                dx = g * (gamma_data * inv).reshape(1, c, 1, 1)
                return dx, dgamma, dbeta

        return Tensor._from_op(out.astype(x.data.dtype, copy=False),
                               (x, self.gamma, self.beta), backprop, "batchnorm")

    __call__ = forward


# -- composites ------------------------------------------------------------------


def _prefixed(prefix, named):
    return [(f"{prefix}.{name}", value) for name, value in named]


class ConvBlock:
    """conv -> batchnorm -> ReLU, in that fixed order."""

    def __init__(self, in_channels, out_channels, kernel, stride=1,
                 rng=None, dtype=SINGLE, momentum=0.1, eps=1e-5):
        self.conv = Conv2d(in_channels, out_channels, kernel, stride=stride,
                           bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(out_channels, momentum=momentum, eps=eps, dtype=dtype)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel

    def parameters(self):
        return _prefixed("conv", self.conv.parameters()) + \
            _prefixed("bn", self.bn.parameters())

    def buffers(self):
        return _prefixed("bn", self.bn.buffers())

    def forward(self, x: Tensor, mode="train") -> Tensor:
        return relu(self.bn.forward(self.conv.forward(x), mode))

    __call__ = forward


class ResBlock:
    """Bottleneck residual unit.

    1x1 compress to out_channels/ratio (plain conv, bias only), two 3x3
    ConvBlocks at that width, 1x1 expand back to out_channels, added to the
    skip path. The skip is the identity when channel counts match, else a
    1x1 projection conv.
    """

    def __init__(self, in_channels, out_channels, bottleneck_ratio=2,
                 rng=None, dtype=SINGLE, momentum=0.1, eps=1e-5):
        if bottleneck_ratio < 1:
            raise ConfigError(f"bottleneck_ratio must be >= 1, got {bottleneck_ratio}")
        if out_channels % bottleneck_ratio:
            raise ConfigError(f"out_channels {out_channels} not divisible by "
                              f"bottleneck_ratio {bottleneck_ratio}")
        width = out_channels // bottleneck_ratio
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.width = width
        self.compress = Conv2d(in_channels, width, 1, rng=rng, dtype=dtype)
        self.body1 = ConvBlock(width, width, 3, rng=rng, dtype=dtype,
                               momentum=momentum, eps=eps)
        self.body2 = ConvBlock(width, width, 3, rng=rng, dtype=dtype,
                               momentum=momentum, eps=eps)
        self.expand = Conv2d(width, out_channels, 1, rng=rng, dtype=dtype)
        self.skip = None if in_channels == out_channels else \
            Conv2d(in_channels, out_channels, 1, rng=rng, dtype=dtype)

    def parameters(self):
        named = _prefixed("compress", self.compress.parameters())
        named += _prefixed("body1", self.body1.parameters())
        named += _prefixed("body2", self.body2.parameters())
        named += _prefixed("expand", self.expand.parameters())
        if self.skip is not None:
            named += _prefixed("skip", self.skip.parameters())
        return named

    def buffers(self):
        return _prefixed("body1", self.body1.buffers()) + \
            _prefixed("body2", self.body2.buffers())

    def forward(self, x: Tensor, mode="train") -> Tensor:
        _check_image(x)
        if x.data.shape[1] != self.in_channels:
            raise ShapeError(f"resblock expects {self.in_channels} channels, "
                             f"got {x.data.shape[1]}")
        h = self.compress.forward(x)
        h = self.body1.forward(h, mode)
        h = self.body2.forward(h, mode)
        h = self.expand.forward(h)
        s = x if self.skip is None else self.skip.forward(x)
        return add(s, h)

    __call__ = forward
