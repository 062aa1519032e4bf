"""AW-convolution: convolution with per-sample, attention-modulated weights.

A layer holds an ordinary kernel ``K`` of shape (C2, C1, h, w) and a small
attention branch.  For an input batch ``I`` it computes

    A  = expand_c1(sigmoid(BN2(pc2(relu(BN1(pc1(avgpool_hw(I))))))))
    AK = K + A * K                          # (N, C2, C1, h, w)
    O[l] = conv2d(I[l], AK[l])

``A`` lies in (0, 1) and has the shape of the kernel (plus a batch axis), so
every sample is convolved with its own kernel set.  Because convolution is
linear in the kernel, ``O = conv2d(I, K) + aw_conv2d(I, A * K)``.

:func:`aw_conv2d` lowers the per-sample convolutions to a single grouped
convolution: the batch is folded into the channel axis and each sample's
kernel set becomes one group.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .autodiff import Node, concat, expand, mul, add, reshape, take, unsqueeze
from .errors import ShapeError
from .layers import Module, kaiming_normal
from .autodiff import Parameter
from .nn_ops import (BatchNormState, adaptive_avgpool2d, batchnorm2d, conv2d, pointwise_conv,
                     relu, same_padding, sigmoid)


@dataclass(frozen=True)
class AttentionConfig:
    """Attention-branch shape parameters.

    ``r`` is the channel reduction of the first pointwise conv; ``r_c1`` is
    the replication ratio along the input-channel axis (``None`` means C1,
    i.e. one attention value shared by all input channels).  Only C1
    expansion is supported, so ``r_c2`` and ``r_hw`` are fixed at 1.
    ``branch_bn="running"`` keeps the branch's BN layers on running
    statistics even in train mode.
    """

    r: int = 16
    r_c1: int | None = None
    r_c2: int = 1
    r_hw: int = 1
    branch_bn: str = "batch"

    def __post_init__(self):
        if self.r_c2 != 1 or self.r_hw != 1:
            raise ShapeError("only expansion along C1 is supported (r_c2 = r_hw = 1)")
        if self.r < 1:
            raise ShapeError("reduction ratio r must be positive")
        if self.branch_bn not in ("batch", "running"):
            raise ValueError(f"branch_bn must be 'batch' or 'running', got {self.branch_bn!r}")

    def ratio_c1(self, c1: int) -> int:
        r_c1 = c1 if self.r_c1 is None else self.r_c1
        if r_c1 < 1 or c1 % r_c1:
            raise ShapeError(f"r_c1={r_c1} does not divide C1={c1}")
        return r_c1

    def mid_channels(self, c1: int) -> int:
        return max(c1 // self.r, 1)

    def branch_out_channels(self, c1: int, c2: int) -> int:
        return c2 * c1 // self.ratio_c1(c1)

    def branch_params(self, c1: int, c2: int) -> int:
        """Parameters added by the branch: two pointwise convs and two BN affines."""
        mid = self.mid_channels(c1)
        out = self.branch_out_channels(c1, c2)
        return c1 * mid + mid * out + 2 * mid + 2 * out


def expand_c1(a2: Node, c1: int, r_c1: int) -> Node:
    """(N, C2*C1/r_c1, h, w) -> (N, C2, C1, h, w), repeating each value r_c1 times along C1."""
    n, ch, h, w = a2.shape
    if r_c1 < 1 or c1 % r_c1:
        raise ShapeError(f"r_c1={r_c1} does not divide C1={c1}")
    reduced = c1 // r_c1
    if ch % reduced:
        raise ShapeError(f"channel extent {ch} is not a multiple of C1/r_c1={reduced}")
    c2 = ch // reduced
    x = reshape(a2, (n, c2, reduced, h, w))
    x = unsqueeze(x, 3)
    x = expand(x, (n, c2, reduced, r_c1, h, w))
    return reshape(x, (n, c2, c1, h, w))


def expand_c1_array(a2: np.ndarray, c1: int, r_c1: int) -> np.ndarray:
    """Array version of :func:`expand_c1` built from the tensor primitives."""
    n, ch, h, w = a2.shape
    if r_c1 < 1 or c1 % r_c1 or ch % (c1 // r_c1):
        raise ShapeError(f"cannot expand {a2.shape} with C1={c1}, r_c1={r_c1}")
    reduced = c1 // r_c1
    c2 = ch // reduced
    x = T.reshape(a2, (n, c2, reduced, h, w))
    x = T.unsqueeze(x, 3)
    x = T.expand(x, (n, c2, reduced, r_c1, h, w))
    return T.reshape(x, (n, c2, c1, h, w))


def attentional_weights(A: Node, K: Node) -> Node:
    """AK[l] = K + A[l] * K."""
    if A.value.ndim != 5 or A.shape[1:] != K.shape:
        raise ShapeError(f"attention maps {A.shape} do not match kernel {K.shape}")
    k5 = reshape(K, (1,) + K.shape)
    return add(k5, mul(A, k5))


def aw_conv2d(I: Node, AK: Node, stride=1, padding=0, method="grouped") -> Node:
    """Convolve sample l of ``I`` with kernel set ``AK[l]``.

    ``method="grouped"`` folds the batch into channels and runs one grouped
    convolution with N groups; ``method="loop"`` convolves sample by sample.
    """
    if I.value.ndim != 4 or AK.value.ndim != 5:
        raise ShapeError(f"aw_conv2d expects I (N,C1,H,W) and AK (N,C2,C1,h,w); "
                         f"got {I.shape} and {AK.shape}")
    n, c1, h, w = I.shape
    if AK.shape[0] != n:
        raise ShapeError(f"batch mismatch: I has {n} samples, AK has {AK.shape[0]}")
    _, c2, kc1, kh, kw = AK.shape
    if kc1 != c1:
        raise ShapeError(f"AK input channels {kc1} != I channels {c1}")
    if method == "grouped":
        x = reshape(I, (1, n * c1, h, w))
        k = reshape(AK, (n * c2, c1, kh, kw))
        out = conv2d(x, k, stride=stride, padding=padding, groups=n)
        return reshape(out, (n, c2) + out.shape[2:])
    if method == "loop":
        outs = []
        for l in range(n):
            kl = reshape(take(AK, l), (c2, c1, kh, kw))
            outs.append(conv2d(take(I, l), kl, stride=stride, padding=padding))
        return concat(outs, axis=0)
    raise ValueError(f"unknown aw_conv2d method {method!r}")


class AwConv2d(Module):
    """Drop-in replacement for a ``Conv2d`` without bias.

    ``attention_override`` may be set to an array broadcastable to
    (N, C2, C1, h, w); the branch is then skipped and that array is used as
    ``A``.  This is how tests inject A = 0.
    """

    def __init__(self, cin, cout, k, stride=1, padding=None, config: AttentionConfig | None = None,
                 *, rng, dtype=np.float32, method="grouped"):
        self.config = config or AttentionConfig()
        self.cin, self.cout, self.k = cin, cout, k
        self.stride = stride
        self.padding = same_padding(k) if padding is None else padding
        self.method = method
        self.r_c1 = self.config.ratio_c1(cin)
        mid = self.config.mid_channels(cin)
        out = self.config.branch_out_channels(cin, cout)
        self.weight = Parameter(kaiming_normal(rng, (cout, cin, k, k), cin * k * k, dtype))
        self.pc1 = Parameter(kaiming_normal(rng, (mid, cin, 1, 1), cin, dtype))
        self.bn1 = BatchNormState.create(mid, dtype)
        self.pc2 = Parameter(kaiming_normal(rng, (out, mid, 1, 1), mid, dtype))
        self.bn2 = BatchNormState.create(out, dtype)
        self.attention_override = None

    def named_parameters(self, prefix=""):
        yield f"{prefix}weight", self.weight
        yield f"{prefix}attn.pc1.weight", self.pc1
        yield f"{prefix}attn.bn1.weight", self.bn1.gamma
        yield f"{prefix}attn.bn1.bias", self.bn1.beta
        yield f"{prefix}attn.pc2.weight", self.pc2
        yield f"{prefix}attn.bn2.weight", self.bn2.gamma
        yield f"{prefix}attn.bn2.bias", self.bn2.beta

    def named_buffers(self, prefix=""):
        for key in ("bn1", "bn2"):
            s = getattr(self, key)
            yield f"{prefix}attn.{key}.running_mean", s.running_mean
            yield f"{prefix}attn.{key}.running_var", s.running_var

    def _bn_mode(self, key, training):
        if self.config.branch_bn == "running":
            return "eval"
        return "train" if training else "eval"

    def forward(self, x):
        return aw_layer_forward(x, self)


def compute_attention(I: Node, layer: AwConv2d) -> Node:
    """Attention maps of shape (N, C2, C1, h, w), every element in (0, 1)."""
    if I.value.ndim != 4 or I.shape[1] != layer.cin:
        raise ShapeError(f"input {I.shape} does not match layer with C1={layer.cin}")
    t = I.tape
    a0 = adaptive_avgpool2d(I, layer.k, layer.k)
    a1 = relu(batchnorm2d(pointwise_conv(a0, t.param(layer.pc1)), layer.bn1))
    a2 = sigmoid(batchnorm2d(pointwise_conv(a1, t.param(layer.pc2)), layer.bn2))
    return expand_c1(a2, layer.cin, layer.r_c1)


def aw_layer_forward(I: Node, layer: AwConv2d) -> Node:
    t = I.tape
    K = t.param(layer.weight)
    if layer.attention_override is not None:
        shape = (I.shape[0],) + K.shape
        A = t.constant(np.broadcast_to(np.asarray(layer.attention_override, dtype=K.dtype),
                                       shape).copy())
    else:
        A = compute_attention(I, layer)
    AK = attentional_weights(A, K)
    return aw_conv2d(I, AK, layer.stride, layer.padding, layer.method)
