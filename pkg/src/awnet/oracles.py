"""Slow loop-nest reference implementations used only for verification.

Every function here works in float64, carries no autodiff, and computes each
output element as an explicit sum over its taps so that it can be read
against the formulas it transcribes.  Index convention: for an output
position (m, n) the tap (j, k) reads input row ``m*stride + j - padding``
and column ``n*stride + k - padding``; out-of-range taps read zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UsageError

MAX_OUTPUT_ELEMENTS = 10**6


@dataclass(frozen=True)
class OracleReport:
    max_abs_diff: float
    max_rel_diff: float
    num_elements: int

    def within(self, tol: float) -> bool:
        return self.max_abs_diff < tol


def compare(actual, expected) -> OracleReport:
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    if a.shape != e.shape:
        raise ShapeError(f"cannot compare shapes {a.shape} and {e.shape}")
    diff = np.abs(a - e)
    rel = diff / np.maximum(np.abs(e), 1e-12)
    return OracleReport(float(diff.max(initial=0.0)), float(rel.max(initial=0.0)), int(a.size))


def _f64(x, name):
    x = np.asarray(x)
    if x.dtype != np.float64:
        raise UsageError(f"oracles are f64 only; {name} is {x.dtype}")
    return x


def _out_hw(h, w, kh, kw, stride, padding):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("kernel larger than padded input")
    return ho, wo


def _guard(*shape):
    if int(np.prod(shape)) > MAX_OUTPUT_ELEMENTS:
        raise UsageError(f"oracle output {shape} exceeds {MAX_OUTPUT_ELEMENTS} elements")


def _default_padding(kh, padding):
    return (kh - 1) // 2 if padding is None else padding


def reference_conv(I, K, stride=1, padding=None, groups=1):
    """Direct convolution. ``padding=None`` means same padding (h-1)/2."""
    I, K = _f64(I, "I"), _f64(K, "K")
    if I.ndim != 4 or K.ndim != 4:
        raise ShapeError("reference_conv expects 4-d I and K")
    N, C1, H, W = I.shape
    C2, Cg, kh, kw = K.shape
    if Cg * groups != C1 or C2 % groups:
        raise ShapeError(f"channel mismatch: I {I.shape}, K {K.shape}, groups {groups}")
    padding = _default_padding(kh, padding)
    Ho, Wo = _out_hw(H, W, kh, kw, stride, padding)
    _guard(N, C2, Ho, Wo)
    per_group = C2 // groups
    O = np.zeros((N, C2, Ho, Wo))
    for l in range(N):
        for p in range(C2):
            g = p // per_group
            for m in range(Ho):
                for n in range(Wo):
                    acc = 0.0
                    for o in range(Cg):
                        for j in range(kh):
                            for k in range(kw):
                                r = m * stride + j - padding
                                c = n * stride + k - padding
                                if 0 <= r < H and 0 <= c < W:
                                    acc += I[l, g * Cg + o, r, c] * K[p, o, j, k]
                    O[l, p, m, n] = acc
    return O


def attend_activations_then_conv(I, A, K, stride=1, padding=None):
    """Attend each input tap with a weight-shaped map, then multiply by the kernel.

    ``A`` is (N, C1, h, w), shared by all output channels, or
    (N, C2, C1, h, w), one map per output channel.  The product is formed as
    ``(I * A) * K`` -- the activation side first.
    """
    I, A, K = _f64(I, "I"), _f64(A, "A"), _f64(K, "K")
    N, C1, H, W = I.shape
    C2, _, kh, kw = K.shape
    if A.ndim == 4:
        if A.shape != (N, C1, kh, kw):
            raise ShapeError(f"shared attention map must be {(N, C1, kh, kw)}, got {A.shape}")
    elif A.ndim == 5:
        if A.shape != (N, C2, C1, kh, kw):
            raise ShapeError(f"full attention map must be {(N, C2, C1, kh, kw)}, got {A.shape}")
    else:
        raise ShapeError(f"attention map must be rank 4 or 5, got {A.shape}")
    padding = _default_padding(kh, padding)
    Ho, Wo = _out_hw(H, W, kh, kw, stride, padding)
    _guard(N, C2, Ho, Wo)
    O = np.zeros((N, C2, Ho, Wo))
    for l in range(N):
        for p in range(C2):
            for m in range(Ho):
                for n in range(Wo):
                    acc = 0.0
                    for o in range(C1):
                        for j in range(kh):
                            for k in range(kw):
                                r = m * stride + j - padding
                                c = n * stride + k - padding
                                if 0 <= r < H and 0 <= c < W:
                                    a = A[l, o, j, k] if A.ndim == 4 else A[l, p, o, j, k]
                                    acc += (I[l, o, r, c] * a) * K[p, o, j, k]
                    O[l, p, m, n] = acc
    return O


def channel_pair_attention_conv(I, A_ic, K, stride=1, padding=None):
    """Rescale input channel o by A_ic[l, p, o] separately for every output channel p."""
    I, A_ic, K = _f64(I, "I"), _f64(A_ic, "A_ic"), _f64(K, "K")
    N, C1, H, W = I.shape
    C2 = K.shape[0]
    if A_ic.shape != (N, C2, C1, 1, 1):
        raise ShapeError(f"A_ic must be {(N, C2, C1, 1, 1)}, got {A_ic.shape}")
    O = None
    for l in range(N):
        for p in range(C2):
            scaled = np.empty((1, C1, H, W))
            for o in range(C1):
                scaled[0, o] = I[l, o] * A_ic[l, p, o, 0, 0]
            out = reference_conv(scaled, K[p:p + 1], stride, padding)
            if O is None:
                O = np.zeros((N, C2) + out.shape[2:])
            O[l, p] = out[0, 0]
    return O


def per_sample_aw_conv(I, AK, stride=1, padding=None):
    """Convolve sample l with its own kernel set AK[l]."""
    I, AK = _f64(I, "I"), _f64(AK, "AK")
    if AK.ndim != 5 or AK.shape[0] != I.shape[0]:
        raise ShapeError(f"AK must be (N, C2, C1, h, w) with N={I.shape[0]}, got {AK.shape}")
    outs = [reference_conv(I[l:l + 1], AK[l], stride, padding) for l in range(I.shape[0])]
    return np.concatenate(outs, axis=0)
