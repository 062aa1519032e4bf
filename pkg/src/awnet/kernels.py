"""Patch extraction kernels behind every convolution and pooling op.

Two implementations share one contract:

* ``numba_impl`` -- ``@njit`` loop nests, parallel over (sample, channel).
* ``numpy_impl`` -- a loop over kernel taps with strided slice copies.

The active backend is chosen once at import: numba when it is importable,
unless ``AWK_NUMBA=0``.  Both backends add col2im contributions to each
output element in the same (tap-row, tap-col) order, so they agree bitwise.
"""
from __future__ import annotations

import os
import types

import numpy as np


def _out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _np_im2col(x, kh, kw, stride, padding, pad_value=0.0):
    n, c, h, w = x.shape
    ho = _out_size(h, kh, stride, padding)
    wo = _out_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=pad_value)
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for j in range(kh):
        for k in range(kw):
            cols[:, :, j, k] = x[:, :, j:j + stride * ho:stride, k:k + stride * wo:stride]
    return cols


def _np_col2im(cols, h, w, stride, padding):
    n, c, kh, kw, ho, wo = cols.shape
    buf = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for j in range(kh):
        for k in range(kw):
            buf[:, :, j:j + stride * ho:stride, k:k + stride * wo:stride] += cols[:, :, j, k]
    return np.ascontiguousarray(buf[:, :, padding:padding + h, padding:padding + w])


numpy_impl = types.SimpleNamespace(name="numpy", im2col=_np_im2col, col2im=_np_col2im)


def _build_numba():
    import numba
    from numba import njit, prange

    # the bundled TBB is too old for numba; probing it only produces a warning
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    threads = int(os.environ.get("AWK_THREADS", "1"))
    numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))

    @njit(parallel=True, cache=True)
    def _im2col_kernel(x, kh, kw, stride, padding, pad_value, cols):
        n, c, h, w = x.shape
        ho = cols.shape[4]
        wo = cols.shape[5]
        for nc in prange(n * c):
            b = nc // c
            ch = nc % c
            for j in range(kh):
                for k in range(kw):
                    for oh in range(ho):
                        ih = oh * stride + j - padding
                        for ow in range(wo):
                            iw = ow * stride + k - padding
                            if 0 <= ih < h and 0 <= iw < w:
                                cols[b, ch, j, k, oh, ow] = x[b, ch, ih, iw]
                            else:
                                cols[b, ch, j, k, oh, ow] = pad_value

    @njit(parallel=True, cache=True)
    def _col2im_kernel(cols, stride, padding, out):
        n, c, kh, kw, ho, wo = cols.shape
        h = out.shape[2]
        w = out.shape[3]
        for nc in prange(n * c):
            b = nc // c
            ch = nc % c
            for j in range(kh):
                for k in range(kw):
                    for oh in range(ho):
                        ih = oh * stride + j - padding
                        if ih < 0 or ih >= h:
                            continue
                        for ow in range(wo):
                            iw = ow * stride + k - padding
                            if 0 <= iw < w:
                                out[b, ch, ih, iw] += cols[b, ch, j, k, oh, ow]

    def im2col(x, kh, kw, stride, padding, pad_value=0.0):
        n, c, h, w = x.shape
        ho = _out_size(h, kh, stride, padding)
        wo = _out_size(w, kw, stride, padding)
        x = np.ascontiguousarray(x)
        cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
        _im2col_kernel(x, kh, kw, stride, padding, x.dtype.type(pad_value), cols)
        return cols

    def col2im(cols, h, w, stride, padding):
        n, c = cols.shape[:2]
        out = np.zeros((n, c, h, w), dtype=cols.dtype)
        _col2im_kernel(np.ascontiguousarray(cols), stride, padding, out)
        return out

    return types.SimpleNamespace(name="numba", im2col=im2col, col2im=col2im)


try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

if os.environ.get("AWK_NUMBA", "1") != "0" and numba_impl is not None:
    active = numba_impl
else:
    active = numpy_impl


def im2col(x, kh, kw, stride=1, padding=0, pad_value=0.0):
    """Patches of ``x`` (N,C,H,W) as (N,C,kh,kw,Ho,Wo); out-of-bounds taps read ``pad_value``."""
    return active.im2col(x, kh, kw, stride, padding, pad_value)


def col2im(cols, h, w, stride=1, padding=0):
    """Adjoint of :func:`im2col` with zero padding: scatter-add patches back to (N,C,H,W)."""
    return active.col2im(cols, h, w, stride, padding)


def backend_name() -> str:
    return active.name
