"""Differentiable layer primitives.

All functions take and return :class:`~awnet.autodiff.Node` objects and
record their backward rule on the input's tape.  Convolutions lower to
im2col followed by one batched matrix multiply per (sample, group).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import Node, Parameter, Tape, reshape
from .errors import ShapeError, UsageError


@dataclass
class Conv2dParams:
    weight: Parameter
    bias: Parameter | None = None
    stride: int = 1
    padding: int = 0
    groups: int = 1


@dataclass
class BatchNormState:
    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"

    @classmethod
    def create(cls, channels, dtype=np.float32, name="bn", momentum=0.1, eps=1e-5):
        return cls(Parameter(np.ones(channels, dtype), f"{name}.weight", decay=False),
                   Parameter(np.zeros(channels, dtype), f"{name}.bias", decay=False),
                   np.zeros(channels, dtype), np.ones(channels, dtype), momentum, eps)


def same_padding(k: int) -> int:
    return (k - 1) // 2


def conv_output_size(size, k, stride, padding):
    out = (size + 2 * padding - k) // stride + 1
    if out < 1:
        raise ShapeError(f"kernel {k} with padding {padding} does not fit input extent {size}")
    return out


def conv2d(x: Node, w: Node, bias: Node | None = None, stride=1, padding=0, groups=1) -> Node:
    """O[l,p,m,n] = sum_{o,j,k} I[l,o,m*s+j-pad,n*s+k-pad] * K[p,o,j,k] (+ bias[p])."""
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    if groups < 1 or c % groups or cout % groups or cg * groups != c:
        raise ShapeError(f"conv2d: input channels {c}, weight {w.shape}, groups {groups} mismatch")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    g = groups
    kdim = cg * kh * kw
    cols = kernels.im2col(x.value, kh, kw, stride, padding).reshape(n, g, kdim, ho * wo)
    wmat = w.value.reshape(g, cout // g, kdim)
    out = np.matmul(wmat[None], cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out += bias.value.reshape(1, cout, 1, 1)

    def vjp(gout):
        gm = gout.reshape(n, g, cout // g, ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.matmul(gm, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
        if x.requires_grad:
            gcols = np.matmul(wmat.transpose(0, 2, 1)[None], gm)
            gx = kernels.col2im(gcols.reshape(n, c, kh, kw, ho, wo), h, wd, stride, padding)
        if bias is not None and bias.requires_grad:
            gb = gout.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, w, bias) if bias is not None else (x, w)
    return x.tape.record("conv2d", inputs, out, vjp)


def pointwise_conv(x: Node, w: Node) -> Node:
    if w.value.ndim != 4 or w.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise_conv expects a (Cout,Cin,1,1) weight, got {w.shape}")
    return conv2d(x, w)


def _bins(size, out):
    return [(math.floor(i * size / out), math.ceil((i + 1) * size / out)) for i in range(out)]


def adaptive_avgpool2d(x: Node, out_h: int, out_w: int) -> Node:
    """Bin (i, j) averages rows [floor(iH/oh), ceil((i+1)H/oh)) and likewise for columns."""
    if out_h < 1 or out_w < 1:
        raise ShapeError("adaptive_avgpool2d output size must be positive")
    n, c, h, w = x.shape
    rows, cols = _bins(h, out_h), _bins(w, out_w)
    if out_h == h and out_w == w:
        return x.tape.record("avgpool", (x,), x.value.copy(), lambda g: (g,))
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x.value[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def vjp(g):
        gx = np.zeros_like(x.value)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                cnt = x.dtype.type((r1 - r0) * (c1 - c0))
                gx[:, :, r0:r1, c0:c1] += (g[:, :, i, j] / cnt)[:, :, None, None]
        return (gx,)

    return x.tape.record("avgpool", (x,), out, vjp)


def global_avgpool(x: Node) -> Node:
    return adaptive_avgpool2d(x, 1, 1)


def maxpool2d(x: Node, k: int, stride: int, padding: int = 0) -> Node:
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    cols = kernels.im2col(x.value.reshape(n * c, 1, h, w), k, k, stride, padding,
                          pad_value=-np.inf).reshape(n * c, k * k, ho * wo)
    idx = np.argmax(cols, axis=1)
    x.tape.branch(idx)
    out = np.take_along_axis(cols, idx[:, None, :], axis=1).reshape(n, c, ho, wo)

    def vjp(g):
        gcols = np.zeros_like(cols)
        np.put_along_axis(gcols, idx[:, None, :], g.reshape(n * c, 1, ho * wo), axis=1)
        gx = kernels.col2im(gcols.reshape(n * c, 1, k, k, ho, wo), h, w, stride, padding)
        return (gx.reshape(n, c, h, w),)

    return x.tape.record("maxpool", (x,), out, vjp)


def batchnorm2d(x: Node, s: BatchNormState) -> Node:
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with biased batch statistics and folds the unbiased
    batch variance into the running estimate; eval mode uses running
    statistics only.
    """
    if x.value.ndim != 4 or x.shape[1] != s.gamma.shape[0]:
        raise ShapeError(f"batchnorm2d: input {x.shape} vs {s.gamma.shape[0]} channels")
    n, c, h, w = x.shape
    m = n * h * w
    if m == 0:
        raise UsageError("batchnorm2d on an empty batch")
    tape = x.tape
    gamma, beta = tape.param(s.gamma), tape.param(s.beta)
    dt = x.dtype.type
    gv = gamma.value.reshape(1, c, 1, 1)
    if s.mode == "train":
        mu = x.value.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.value - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + dt(s.eps))
        xhat = xc * inv
        mom = dt(s.momentum)
        unbiased = var.reshape(c) * dt(m / (m - 1)) if m > 1 else var.reshape(c)
        s.running_mean[...] = (1 - mom) * s.running_mean + mom * mu.reshape(c)
        s.running_var[...] = (1 - mom) * s.running_var + mom * unbiased
    else:
        inv = 1.0 / np.sqrt(s.running_var.reshape(1, c, 1, 1) + dt(s.eps))
        xhat = (x.value - s.running_mean.reshape(1, c, 1, 1)) * inv
    out = gv * xhat + beta.value.reshape(1, c, 1, 1)
    training = s.mode == "train"

    def vjp(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        dxhat = g * gv
        if training:
            gx = inv / dt(m) * (dt(m) * dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        else:
            gx = dxhat * inv
        return gx, gg, gb

    return tape.record("batchnorm2d", (x, gamma, beta), out, vjp)


def relu(x: Node) -> Node:
    mask = x.value > 0
    x.tape.branch(mask)
    return x.tape.record("relu", (x,), np.where(mask, x.value, x.dtype.type(0)),
                         lambda g: (g * mask,))


def sigmoid_value(v: np.ndarray) -> np.ndarray:
    """Logistic function, clamped into the open interval (0, 1) for every finite input."""
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(v.dtype, copy=False)
    fi = np.finfo(v.dtype)
    return np.clip(s, fi.tiny, 1 - fi.epsneg)


def sigmoid(x: Node) -> Node:
    s = sigmoid_value(x.value)
    return x.tape.record("sigmoid", (x,), s, lambda g: (g * s * (1 - s),))


def linear(x: Node, w: Node, b: Node | None = None) -> Node:
    """x (N, in) @ W(out, in).T + b."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {w.shape}")
    out = x.value @ w.value.T
    if b is not None:
        out = out + b.value

    def vjp(g):
        grads = (g @ w.value, g.T @ x.value)
        return grads + (g.sum(axis=0),) if b is not None else grads

    return x.tape.record("linear", (x, w, b) if b is not None else (x, w), out, vjp)


def flatten(x: Node) -> Node:
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


def log_softmax_value(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Node, labels) -> Node:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross entropy: logits {logits.shape}, labels {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise UsageError(f"label out of range [0, {k})")
    n = logits.shape[0]
    logp = log_softmax_value(logits.value)
    rows = np.arange(n)
    loss = np.asarray([-logp[rows, labels].mean()], dtype=logits.dtype)

    def vjp(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g.reshape(()) / logits.dtype.type(n)),)

    return logits.tape.record("cross_entropy", (logits,), loss, vjp)


__all__ = [
    "BatchNormState", "Conv2dParams", "Tape", "adaptive_avgpool2d", "batchnorm2d", "conv2d",
    "conv_output_size", "flatten", "global_avgpool", "linear", "maxpool2d", "pointwise_conv",
    "relu", "same_padding", "sigmoid", "sigmoid_value", "softmax_cross_entropy",
]
