"""Activation-side attention gates: squeeze-and-excitation and CBAM."""
from __future__ import annotations

import numpy as np

from . import nn_ops
from .autodiff import Node, Tape, amax, concat, mean, mul, reshape, add
from .layers import Linear, Module, Conv2d, BatchNorm2d

CBAM_VARIANTS = ("full", "maxpool", "spatial")


class _ChannelMLP(Module):
    def __init__(self, channels, reduction, *, rng, dtype):
        hidden = max(channels // reduction, 1)
        self.fc1 = Linear(channels, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng=rng, dtype=dtype)

    def forward(self, v):
        return self.fc2(nn_ops.relu(self.fc1(v)))


class SeModule(Module):
    """x * sigmoid(fc2(relu(fc1(avgpool(x))))), the gate broadcast over H and W."""

    def __init__(self, channels, reduction=16, *, rng, dtype=np.float32):
        self.channels = channels
        self.reduction = reduction
        self.mlp = _ChannelMLP(channels, reduction, rng=rng, dtype=dtype)

    def named_parameters(self, prefix=""):
        yield from self.mlp.named_parameters(prefix)

    def gate(self, x: Node) -> Node:
        n, c = x.shape[:2]
        pooled = reshape(nn_ops.global_avgpool(x), (n, c))
        return reshape(nn_ops.sigmoid(self.mlp(pooled)), (n, c, 1, 1))

    def gates(self, x: Node) -> list[Node]:
        return [self.gate(x)]

    def forward(self, x):
        return mul(x, self.gate(x))


class CbamModule(Module):
    """Channel gate from pooled descriptors, then a 7x7 spatial gate.

    Variants: ``full`` uses avg- and max-pooled channel descriptors plus the
    spatial gate; ``maxpool`` keeps both descriptors but drops the spatial
    gate; ``spatial`` drops the max-pooled descriptor and keeps the spatial
    gate.
    """

    def __init__(self, channels, reduction=16, variant="full", spatial_bn=False, *, rng,
                 dtype=np.float32):
        if variant not in CBAM_VARIANTS:
            raise ValueError(f"unknown CBAM variant {variant!r}; choose from {CBAM_VARIANTS}")
        self.channels = channels
        self.reduction = reduction
        self.variant = variant
        self.mlp = _ChannelMLP(channels, reduction, rng=rng, dtype=dtype)
        self.spatial = None
        self.spatial_bn = None
        if variant != "maxpool":
            self.spatial = Conv2d(2, 1, 7, padding=3, rng=rng, dtype=dtype)
            if spatial_bn:
                self.spatial_bn = BatchNorm2d(1, dtype)

    def named_parameters(self, prefix=""):
        yield from self.mlp.named_parameters(prefix)
        if self.spatial is not None:
            yield f"{prefix}spatial.weight", self.spatial.weight
        if self.spatial_bn is not None:
            yield from self.spatial_bn.named_parameters(f"{prefix}spatial_bn.")

    def named_buffers(self, prefix=""):
        if self.spatial_bn is not None:
            yield from self.spatial_bn.named_buffers(f"{prefix}spatial_bn.")

    def channel_gate(self, x: Node) -> Node:
        n, c = x.shape[:2]
        pre = self.mlp(reshape(nn_ops.global_avgpool(x), (n, c)))
        if self.variant != "spatial":
            flat = reshape(x, (n, c, x.shape[2] * x.shape[3]))
            mx = reshape(amax(flat, axis=2), (n, c))
            pre = add(pre, self.mlp(mx))
        return reshape(nn_ops.sigmoid(pre), (n, c, 1, 1))

    def spatial_gate(self, x: Node) -> Node:
        desc = concat([mean(x, axis=1, keepdims=True), amax(x, axis=1)], axis=1)
        s = self.spatial(desc)
        if self.spatial_bn is not None:
            s = self.spatial_bn(s)
        return nn_ops.sigmoid(s)

    def gates(self, x: Node) -> list[Node]:
        cg = self.channel_gate(x)
        out = [cg]
        if self.spatial is not None:
            out.append(self.spatial_gate(mul(x, cg)))
        return out

    def forward(self, x):
        x = mul(x, self.channel_gate(x))
        if self.spatial is not None:
            x = mul(x, self.spatial_gate(x))
        return x


def gate_range_check(module, X) -> bool:
    """True iff every gate the module produces for ``X`` is finite and inside (0, 1)."""
    tape = Tape()
    for g in module.gates(tape.constant(np.asarray(X))):
        v = g.value
        if not (np.all(np.isfinite(v)) and np.all(v > 0) and np.all(v < 1)):
            return False
    return True


def se_params(channels, reduction=16) -> int:
    hidden = max(channels // reduction, 1)
    return 2 * channels * hidden + hidden + channels


def cbam_params(channels, reduction=16, variant="full", spatial_bn=False) -> int:
    extra = 0 if variant == "maxpool" else 2 * 7 * 7 + (2 if spatial_bn else 0)
    return se_params(channels, reduction) + extra
