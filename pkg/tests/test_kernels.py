import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from awnet import kernels

needs_numba = pytest.mark.skipif(kernels.numba_impl is None, reason="numba not importable")


def _case(data):
    n = data.draw(st.integers(1, 3))
    c = data.draw(st.integers(1, 4))
    k = data.draw(st.sampled_from([1, 2, 3, 5]))
    h = data.draw(st.integers(k, 9))
    w = data.draw(st.integers(k, 9))
    stride = data.draw(st.integers(1, 3))
    padding = data.draw(st.integers(0, k // 2))
    seed = data.draw(st.integers(0, 2**31 - 1))
    x = np.random.default_rng(seed).standard_normal((n, c, h, w))
    return x, k, stride, padding


def _naive_im2col(x, k, stride, padding, pad_value=0.0):
    n, c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.full((n, c, k, k, ho, wo), pad_value, dtype=x.dtype)
    for j in range(k):
        for i in range(k):
            for oh in range(ho):
                for ow in range(wo):
                    r, q = oh * stride + j - padding, ow * stride + i - padding
                    if 0 <= r < h and 0 <= q < w:
                        out[:, :, j, i, oh, ow] = x[:, :, r, q]
    return out


@given(st.data())
def test_numpy_im2col_matches_naive(data):
    x, k, s, p = _case(data)
    assert np.array_equal(kernels.numpy_impl.im2col(x, k, k, s, p), _naive_im2col(x, k, s, p))


@given(st.data())
def test_col2im_is_adjoint_of_im2col(data):
    # <im2col(x), y> == <x, col2im(y)>
    x, k, s, p = _case(data)
    cols = kernels.im2col(x, k, k, s, p)
    y = np.random.default_rng(0).standard_normal(cols.shape)
    back = kernels.col2im(y, x.shape[2], x.shape[3], s, p)
    assert np.isclose((cols * y).sum(), (x * back).sum(), rtol=1e-12, atol=1e-12)


@needs_numba
@given(st.data())
def test_backends_agree_bitwise(data):
    x, k, s, p = _case(data)
    for dtype in (np.float32, np.float64):
        xd = x.astype(dtype)
        a = kernels.numpy_impl.im2col(xd, k, k, s, p)
        b = kernels.numba_impl.im2col(xd, k, k, s, p)
        assert np.array_equal(a, b)
        h, w = x.shape[2:]
        assert np.array_equal(kernels.numpy_impl.col2im(a, h, w, s, p),
                              kernels.numba_impl.col2im(b, h, w, s, p))


@needs_numba
def test_pad_value_respected_by_both_backends():
    x = np.ones((1, 1, 2, 2))
    for impl in (kernels.numpy_impl, kernels.numba_impl):
        cols = impl.im2col(x, 3, 3, 1, 1, -np.inf)
        assert np.isneginf(cols).sum() == 4 * 9 - 16


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, AWK_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "from awnet import kernels; print(kernels.backend_name())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
