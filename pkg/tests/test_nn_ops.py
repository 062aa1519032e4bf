import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from awnet import nn_ops
from awnet.autodiff import Parameter, Tape, grad_check
from awnet import autodiff as ad
from awnet.errors import ShapeError, UsageError
from awnet.nn_ops import BatchNormState
from awnet.oracles import reference_conv


def _v(x):
    return Tape().constant(np.asarray(x, dtype=np.float64))


def conv(x, w, **kw):
    t = Tape()
    return nn_ops.conv2d(t.constant(np.asarray(x, float)), t.constant(np.asarray(w, float)), **kw).value


def test_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    assert np.array_equal(conv(x, np.ones((1, 1, 1, 1))), x)


def test_all_ones_same_padding():
    out = conv(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), padding=1)[0, 0]
    assert out.tolist() == [[4, 6, 4], [6, 9, 6], [4, 6, 4]]


def test_conv_matches_reference_on_random_instances(rng):
    for _ in range(20):
        n, c, co = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        h, w = rng.integers(3, 7, size=2)
        x = rng.standard_normal((n, c, h, w))
        k = rng.standard_normal((co, c, 3, 3))
        assert np.abs(conv(x, k, padding=1) - reference_conv(x, k, 1, 1)).max() < 1e-10


def test_conv_errors():
    with pytest.raises(ShapeError):
        conv(np.ones((1, 3, 4, 4)), np.ones((2, 2, 3, 3)))
    with pytest.raises(ShapeError):
        conv(np.ones((1, 4, 4, 4)), np.ones((2, 3, 3, 3)), groups=2)
    with pytest.raises(ShapeError):
        conv(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)))


def test_conv_bias():
    t = Tape()
    out = nn_ops.conv2d(t.constant(np.zeros((1, 1, 2, 2))), t.constant(np.ones((2, 1, 1, 1))),
                        t.constant(np.array([1.0, -2.0])))
    assert out.value[0, 0].tolist() == [[1, 1], [1, 1]] and np.all(out.value[0, 1] == -2)


def test_adaptive_avgpool():
    out = nn_ops.adaptive_avgpool2d(_v([[[[1, 3], [5, 7]]]]), 1, 1).value
    assert out.item() == 4.0
    x = _v(np.arange(16.0).reshape(1, 1, 4, 4))
    assert np.array_equal(nn_ops.adaptive_avgpool2d(x, 4, 4).value, x.value)
    assert nn_ops._bins(4, 3) == [(0, 2), (1, 3), (2, 4)]


@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 5), st.integers(1, 5))
def test_adaptive_avgpool_bins_cover_input(h, w, oh, ow):
    out = nn_ops.adaptive_avgpool2d(_v(np.ones((1, 2, h, w))), oh, ow).value
    assert np.array_equal(out, np.ones((1, 2, oh, ow)))


def test_pointwise_conv():
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    t = Tape()
    assert np.array_equal(nn_ops.pointwise_conv(t.constant(x), t.constant(np.eye(3)[:, :, None, None])).value, x)
    ab = np.zeros((1, 2, 1, 1))
    ab[0, :, 0, 0] = [2.0, 5.0]
    t = Tape()
    out = nn_ops.pointwise_conv(t.constant(ab), t.constant(np.ones((1, 2, 1, 1)))).value
    assert out.item() == 7.0
    w = np.random.default_rng(1).standard_normal((4, 3, 1, 1))
    t = Tape()
    assert np.array_equal(nn_ops.pointwise_conv(t.constant(x), t.constant(w)).value,
                          nn_ops.conv2d(t.constant(x), t.constant(w)).value)
    with pytest.raises(ShapeError):
        nn_ops.pointwise_conv(t.constant(x), t.constant(np.ones((4, 3, 3, 3))))


def test_batchnorm_identity_on_standardized_input(rng):
    x = rng.standard_normal((4, 2, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = nn_ops.batchnorm2d(_v(x), BatchNormState.create(2, np.float64)).value
    # the only deviation is the eps in the denominator
    assert np.abs(out - x / np.sqrt(1 + 1e-5)).max() < 1e-12
    assert np.abs(out - x).max() <= 1e-5 * np.abs(x).max()


def test_batchnorm_constant_channel_gives_beta():
    s = BatchNormState.create(2, np.float64)
    s.beta.value[...] = [0.3, -1.2]
    out = nn_ops.batchnorm2d(_v(np.full((3, 2, 2, 2), 4.0)), s).value
    assert np.allclose(out[:, 0], 0.3, atol=0, rtol=0) and np.allclose(out[:, 1], -1.2, atol=0, rtol=0)


def test_batchnorm_eval_is_affine(rng):
    s = BatchNormState.create(3, np.float64)
    s.gamma.value[...] = [1.0, 2.0, -1.0]
    s.beta.value[...] = [0.0, 1.0, 0.5]
    s.mode = "eval"
    s.eps = 0.0
    x = rng.standard_normal((2, 3, 2, 2))
    out = nn_ops.batchnorm2d(_v(x), s).value
    assert np.allclose(out, s.gamma.value.reshape(1, 3, 1, 1) * x + s.beta.value.reshape(1, 3, 1, 1),
                       rtol=0, atol=1e-15)


def test_batchnorm_running_stats_update(rng):
    s = BatchNormState.create(2, np.float64)
    x = rng.standard_normal((4, 2, 3, 3)) * 3 + 1
    nn_ops.batchnorm2d(_v(x), s)
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3), ddof=1)
    assert np.allclose(s.running_mean, 0.1 * mu)
    assert np.allclose(s.running_var, 0.9 + 0.1 * var)


def test_batchnorm_empty_batch_is_usage_error():
    with pytest.raises(UsageError):
        nn_ops.batchnorm2d(_v(np.ones((0, 2, 3, 3))), BatchNormState.create(2, np.float64))


@given(st.integers(0, 10_000), st.integers(2, 5))
def test_batchnorm_train_output_standardized(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 3, 4, 4)) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
    st_ = BatchNormState.create(3, np.float64)
    st_.eps = 0.0
    out = nn_ops.batchnorm2d(_v(x), st_).value
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-5
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-5
    # with the default eps the variance shrinks to var / (var + eps) exactly
    v = x.var(axis=(0, 2, 3))
    out = nn_ops.batchnorm2d(_v(x), BatchNormState.create(3, np.float64)).value
    assert np.allclose(out.var(axis=(0, 2, 3)), v / (v + 1e-5), rtol=1e-10, atol=0)


def test_relu_sigmoid_values():
    assert nn_ops.relu(_v([-1.0, 2.0])).value.tolist() == [0.0, 2.0]
    assert nn_ops.sigmoid(_v([0.0])).value.item() == 0.5


@given(st.floats(allow_nan=False, allow_infinity=False, width=32))
def test_sigmoid_open_interval(v):
    for dt in (np.float32, np.float64):
        s = nn_ops.sigmoid_value(np.array([v], dtype=dt))
        assert 0 < s[0] < 1


def test_maxpool():
    assert nn_ops.maxpool2d(_v([[[[1, 2], [3, 4]]]]), 2, 2).value.item() == 4.0


def test_cross_entropy():
    t = Tape()
    loss = nn_ops.softmax_cross_entropy(t.constant(np.zeros((3, 4))), [0, 1, 3])
    assert math.isclose(loss.value.item(), math.log(4), rel_tol=1e-15)
    with pytest.raises(UsageError):
        nn_ops.softmax_cross_entropy(t.constant(np.zeros((2, 4))), [0, 4])


def test_linear_identity(rng):
    x = rng.standard_normal((3, 4))
    t = Tape()
    out = nn_ops.linear(t.constant(x), t.constant(np.eye(4)), t.constant(np.zeros(4))).value
    assert np.array_equal(out, x)


def test_relu_grad_away_from_kink(rng):
    v = rng.standard_normal((3, 4))
    v = np.where(np.abs(v) < 1e-3, 1e-3 * np.sign(v + 1e-12), v)  # keep >= 1e-3 from 0
    x = Parameter(v)
    W = rng.standard_normal((3, 4))
    rep = grad_check(lambda t: ad.sum_all(ad.mul(nn_ops.relu(t.param(x)), t.constant(W))), [x])
    assert rep.passed, rep
