"""Layer primitives: forward oracles, gradient checks, and error contracts.

Gradient checks always use a random-target quadratic loss mean((f(x)-r)^2):
a plain mean(f(x)^2) probe is degenerate for batchnorm, whose normalized
output makes that loss nearly constant in x.
"""

import numpy as np
import pytest

from tclnet.errors import ConfigError, ContractError, DomainError, ShapeError
from tclnet.layers import (BatchNorm2d, Conv2d, ConvBlock, ResBlock,
                           conv2d_naive, maxpool2x2, relu, upsample_nearest2x)
from tclnet.tensor import Tensor, backward, grad_check, reduce_mean, reduce_sum, sub

GRAD_TOL = 1e-5


def _target_loss(out, r):
    d = sub(out, r)
    return reduce_mean(d * d)


def _rand(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


# -- stateless ops ----------------------------------------------------------------


def test_relu_values_and_zero_subgradient():
    x = Tensor(np.array([[[[-1.0, 0.0], [0.5, 2.0]]]]), requires_grad=True,
               dtype="double")
    out = relu(x)
    assert np.array_equal(out.data, [[[[0.0, 0.0], [0.5, 2.0]]]])
    backward(reduce_sum(out))
    assert np.array_equal(x.grad, [[[[0.0, 0.0], [1.0, 1.0]]]])


def test_maxpool_values_and_first_max_tie_routing():
    x = Tensor(np.array([[[[1.0, 3.0, 5.0, 5.0],
                           [2.0, 0.0, 5.0, 5.0],
                           [7.0, 7.0, 0.0, 1.0],
                           [7.0, 7.0, 2.0, 2.0]]]]), requires_grad=True,
               dtype="double")
    out = maxpool2x2(x)
    assert np.array_equal(out.data, [[[[3.0, 5.0], [7.0, 2.0]]]])
    backward(reduce_sum(out))
    # each window routes its unit gradient to the first maximum, row-major
    expect = np.array([[[[0.0, 1.0, 1.0, 0.0],
                         [0.0, 0.0, 0.0, 0.0],
                         [1.0, 0.0, 0.0, 0.0],
                         [0.0, 0.0, 1.0, 0.0]]]])
    assert np.array_equal(x.grad, expect)


def test_maxpool_rejects_odd_extent():
    with pytest.raises(ShapeError):
        maxpool2x2(Tensor(np.zeros((1, 1, 3, 4))))


def test_upsample_values_and_backward_sums_quads():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), requires_grad=True,
               dtype="double")
    out = upsample_nearest2x(x)
    assert np.array_equal(out.data, [[[[1.0, 1.0, 2.0, 2.0],
                                       [1.0, 1.0, 2.0, 2.0],
                                       [3.0, 3.0, 4.0, 4.0],
                                       [3.0, 3.0, 4.0, 4.0]]]])
    g = np.arange(16.0).reshape(1, 1, 4, 4)
    backward(reduce_sum(out * Tensor(g, dtype="double")))
    # each source cell collects its 2x2 quad: [[0+1+4+5, ...], ...]
    assert np.array_equal(x.grad, [[[[10.0, 18.0], [42.0, 50.0]]]])


# -- convolution ------------------------------------------------------------------


def test_conv_config_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        Conv2d(1, 1, 5, rng=rng)  # kernel outside the architecture's set
    with pytest.raises(ConfigError):
        Conv2d(1, 1, 3, stride=3, rng=rng)
    with pytest.raises(ConfigError):
        Conv2d(0, 1, 3, rng=rng)
    with pytest.raises(ConfigError):
        Conv2d(1, 1, 3, padding=-1, rng=rng)


def test_conv_same_padding_and_out_extent():
    conv = Conv2d(1, 1, 3, rng=np.random.default_rng(0))
    assert conv.padding == 1
    assert conv.out_extent(8, 8) == (8, 8)
    s2 = Conv2d(1, 1, 7, stride=2, rng=np.random.default_rng(0))
    assert s2.padding == 3
    assert s2.out_extent(512, 512) == (256, 256)


def test_conv_center_pixel_hand_computed():
    # 3x3 input, 3x3 kernel, pad 1: the center output is the full dot product
    conv = Conv2d(1, 1, 3, bias=False, rng=np.random.default_rng(0),
                  dtype="double")
    conv.weight.data[:] = np.arange(9.0).reshape(1, 1, 3, 3)
    x = Tensor(np.arange(9.0).reshape(1, 1, 3, 3) + 1.0, dtype="double")
    out = conv.forward(x)
    assert out.data[0, 0, 1, 1] == sum((i) * (i + 1.0) for i in range(9))


def test_conv_matches_naive_oracle_all_kernel_stride_pairs():
    rng = np.random.default_rng(3)
    for k in Conv2d.KERNELS:
        for s in Conv2d.STRIDES:
            conv = Conv2d(3, 4, k, stride=s, rng=rng, dtype="double")
            x = Tensor(rng.normal(size=(2, 3, 12, 12)), dtype="double")
            fast = conv.forward(x).data
            assert np.allclose(fast, conv2d_naive(x, conv), atol=1e-12), (k, s)


def test_conv_1x1_fast_path_matches_naive():
    rng = np.random.default_rng(5)
    conv = Conv2d(6, 2, 1, rng=rng, dtype="double")
    conv.bias.data[:] = rng.normal(size=2)
    x = Tensor(rng.normal(size=(2, 6, 5, 5)), dtype="double")
    assert np.allclose(conv.forward(x).data, conv2d_naive(x, conv), atol=1e-12)


def test_conv_channel_and_extent_errors():
    conv = Conv2d(3, 4, 3, rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        conv.forward(Tensor(np.zeros((1, 2, 8, 8))))
    tight = Conv2d(1, 1, 7, padding=0, rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        tight.forward(Tensor(np.zeros((1, 1, 4, 4))))


@pytest.mark.parametrize("kernel,stride", [(1, 1), (3, 1), (3, 2), (7, 2)])
def test_conv_grad_check(kernel, stride):
    rng = np.random.default_rng(11)
    conv = Conv2d(2, 3, kernel, stride=stride, rng=rng, dtype="double")
    x = Tensor(rng.normal(size=(2, 2, 8, 8)), dtype="double")
    oh, ow = conv.out_extent(8, 8)
    r = Tensor(rng.normal(size=(2, 3, oh, ow)), dtype="double")
    assert grad_check(lambda t: _target_loss(conv.forward(t), r), x) < GRAD_TOL
    assert grad_check(lambda t: _target_loss(conv.forward(t), r),
                      Tensor(x.data)) < GRAD_TOL


def test_conv_weight_and_bias_grad_check():
    rng = np.random.default_rng(13)
    conv = Conv2d(2, 2, 3, rng=rng, dtype="double")
    x = Tensor(rng.normal(size=(1, 2, 6, 6)), dtype="double")
    r = Tensor(rng.normal(size=(1, 2, 6, 6)), dtype="double")

    def wrt_weight(w):
        conv.weight = w
        return _target_loss(conv.forward(x), r)

    def wrt_bias(b):
        conv.bias = b
        return _target_loss(conv.forward(x), r)

    assert grad_check(wrt_weight, Tensor(conv.weight.data.copy())) < GRAD_TOL
    assert grad_check(wrt_bias, Tensor(conv.bias.data.copy())) < GRAD_TOL


# -- batch normalization ----------------------------------------------------------


def test_batchnorm_train_forward_and_running_stats_one_step():
    bn = BatchNorm2d(2, momentum=0.1, dtype="double")
    x_data = _rand((3, 2, 4, 4), seed=17)
    out = bn.forward(Tensor(x_data, dtype="double"), "train")
    # independent oracle for the normalization and the running update
    mean = x_data.mean(axis=(0, 2, 3))
    var = x_data.var(axis=(0, 2, 3))
    expect = (x_data - mean.reshape(1, 2, 1, 1)) / \
        np.sqrt(var.reshape(1, 2, 1, 1) + 1e-5)
    assert np.allclose(out.data, expect, atol=1e-12)
    assert np.allclose(bn.running_mean, 0.9 * 0.0 + 0.1 * mean, atol=1e-12)
    assert np.allclose(bn.running_var, 0.9 * 1.0 + 0.1 * var, atol=1e-12)


def test_batchnorm_eval_uses_running_stats():
    bn = BatchNorm2d(1, dtype="double")
    bn.running_mean[:] = 2.0
    bn.running_var[:] = 4.0
    x = Tensor(np.full((1, 1, 2, 2), 6.0), dtype="double")
    out = bn.forward(x, "eval")
    assert np.allclose(out.data, (6.0 - 2.0) / np.sqrt(4.0 + 1e-5))
    # eval mode must not touch the running estimates
    assert np.all(bn.running_mean == 2.0) and np.all(bn.running_var == 4.0)


def test_batchnorm_affine_applies_gamma_beta():
    bn = BatchNorm2d(1, dtype="double")
    bn.gamma.data[:] = 3.0
    bn.beta.data[:] = -1.0
    x = Tensor(_rand((2, 1, 3, 3), seed=19), dtype="double")
    out = bn.forward(x, "train")
    xhat = (x.data - x.data.mean()) / np.sqrt(x.data.var() + 1e-5)
    assert np.allclose(out.data, 3.0 * xhat - 1.0, atol=1e-12)


def test_batchnorm_errors():
    bn = BatchNorm2d(2)
    with pytest.raises(ShapeError):
        bn.forward(Tensor(np.zeros((1, 3, 2, 2))), "train")
    with pytest.raises(DomainError):
        BatchNorm2d(1).forward(Tensor(np.zeros((1, 1, 1, 1))), "train")
    with pytest.raises(ContractError):
        bn.forward(Tensor(np.zeros((1, 2, 2, 2))), "predict")
    with pytest.raises(ConfigError):
        BatchNorm2d(0)
    with pytest.raises(ConfigError):
        BatchNorm2d(1, momentum=1.5)


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_grad_check(mode):
    rng = np.random.default_rng(23)
    bn = BatchNorm2d(3, dtype="double")
    bn.running_mean[:] = rng.normal(size=3)
    bn.running_var[:] = rng.uniform(0.5, 2.0, size=3)
    x = Tensor(rng.normal(size=(2, 3, 4, 4)), dtype="double")
    r = Tensor(rng.normal(size=(2, 3, 4, 4)), dtype="double")
    assert grad_check(lambda t: _target_loss(bn.forward(t, mode), r), x) < GRAD_TOL


def test_batchnorm_gamma_beta_grad_check():
    rng = np.random.default_rng(29)
    bn = BatchNorm2d(2, dtype="double")
    x = Tensor(rng.normal(size=(2, 2, 3, 3)), dtype="double")
    r = Tensor(rng.normal(size=(2, 2, 3, 3)), dtype="double")

    def wrt_gamma(gm):
        bn.gamma = gm
        return _target_loss(bn.forward(x, "train"), r)

    assert grad_check(wrt_gamma, Tensor(rng.normal(size=2))) < GRAD_TOL


# -- composites -------------------------------------------------------------------


def test_convblock_is_conv_bn_relu():
    rng = np.random.default_rng(31)
    block = ConvBlock(1, 2, 3, rng=rng, dtype="double")
    x = Tensor(_rand((2, 1, 6, 6), seed=37), dtype="double")
    out = block.forward(x, "train")
    assert out.shape == (2, 2, 6, 6)
    assert np.all(out.data >= 0.0)  # post-ReLU
    assert block.conv.bias is None  # batchnorm absorbs the bias
    # matches composing the pieces by hand
    manual = relu(block.bn.forward(block.conv.forward(
        Tensor(x.data, dtype="double")), "train"))
    # second train-mode call shifted the running stats, so compare in eval
    a = block.forward(Tensor(x.data, dtype="double"), "eval")
    b = relu(block.bn.forward(block.conv.forward(
        Tensor(x.data, dtype="double")), "eval"))
    assert np.array_equal(a.data, b.data)
    assert manual.shape == out.shape


def test_convblock_grad_check():
    rng = np.random.default_rng(41)
    block = ConvBlock(2, 2, 3, rng=rng, dtype="double")
    x = Tensor(rng.normal(size=(2, 2, 4, 4)) + 0.3, dtype="double")
    r = Tensor(rng.normal(size=(2, 2, 4, 4)), dtype="double")
    assert grad_check(lambda t: _target_loss(block.forward(t, "train"), r),
                      x) < GRAD_TOL


def test_resblock_identity_skip_iff_channels_match():
    rng = np.random.default_rng(43)
    same = ResBlock(8, 8, rng=rng)
    proj = ResBlock(4, 8, rng=rng)
    assert same.skip is None
    assert proj.skip is not None and proj.skip.kernel == 1


def test_resblock_zero_residual_reduces_to_skip():
    rng = np.random.default_rng(47)
    block = ResBlock(4, 4, rng=rng, dtype="double")
    block.expand.weight.data[:] = 0.0
    block.expand.bias.data[:] = 0.0
    x = Tensor(_rand((1, 4, 6, 6), seed=53), dtype="double")
    out = block.forward(x, "train")
    assert np.array_equal(out.data, x.data)


def test_resblock_width_is_out_over_ratio():
    block = ResBlock(4, 8, bottleneck_ratio=2, rng=np.random.default_rng(0))
    assert block.width == 4
    assert block.compress.out_channels == 4
    assert block.expand.in_channels == 4
    with pytest.raises(ConfigError):
        ResBlock(4, 6, bottleneck_ratio=4, rng=np.random.default_rng(0))
    with pytest.raises(ConfigError):
        ResBlock(4, 8, bottleneck_ratio=0, rng=np.random.default_rng(0))


def test_resblock_grad_check_both_skip_kinds():
    rng = np.random.default_rng(59)
    for cin, cout in ((4, 4), (2, 4)):
        block = ResBlock(cin, cout, rng=rng, dtype="double")
        x = Tensor(rng.normal(size=(2, cin, 4, 4)), dtype="double")
        r = Tensor(rng.normal(size=(2, cout, 4, 4)), dtype="double")
        err = grad_check(lambda t: _target_loss(block.forward(t, "train"), r), x)
        assert err < GRAD_TOL, (cin, cout, err)


def test_parameter_naming_is_prefixed_and_complete():
    block = ResBlock(2, 4, rng=np.random.default_rng(0))
    names = [n for n, _ in block.parameters()]
    assert "compress.weight" in names and "skip.weight" in names
    assert "body1.conv.weight" in names and "body2.bn.gamma" in names
    buf_names = [n for n, _ in block.buffers()]
    assert "body1.bn.running_mean" in buf_names
