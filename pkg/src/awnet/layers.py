"""Stateful layer objects wrapping the functional ops in :mod:`awnet.nn_ops`.

A :class:`Module` owns :class:`~awnet.autodiff.Parameter` objects and
batch-norm states, discovers them by attribute walk, and maps a node to a
node on the input's tape.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import nn_ops
from .autodiff import Node, Parameter, add
from .nn_ops import BatchNormState


def kaiming_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Module:
    training = True

    def __call__(self, x: Node) -> Node:
        return self.forward(x)

    def forward(self, x: Node) -> Node:  # pragma: no cover - abstract
        raise NotImplementedError

    def _members(self):
        for key, val in vars(self).items():
            if isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    yield f"{key}.{i}", item
            else:
                yield key, val

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in self._members():
            if isinstance(val, Module):
                yield key, val

    def named_parameters(self, prefix="") -> Iterator[tuple[str, Parameter]]:
        for key, val in self._members():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, BatchNormState):
                yield f"{name}.weight", val.gamma
                yield f"{name}.bias", val.beta
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{name}.")

    def named_buffers(self, prefix="") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in self._members():
            name = f"{prefix}{key}"
            if isinstance(val, BatchNormState):
                yield f"{name}.running_mean", val.running_mean
                yield f"{name}.running_var", val.running_var
            elif isinstance(val, Module):
                yield from val.named_buffers(f"{name}.")

    def bn_states(self) -> Iterator[BatchNormState]:
        for _, val in self._members():
            if isinstance(val, BatchNormState):
                yield val
            elif isinstance(val, Module):
                yield from val.bn_states()

    def parameters(self) -> list[Parameter]:
        params = []
        for name, p in self.named_parameters():
            p.name = name
            params.append(p)
        return params

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        for key, val in self._members():
            if isinstance(val, BatchNormState):
                val.mode = self._bn_mode(key, mode)
        return self

    def _bn_mode(self, key, training):
        return "train" if training else "eval"

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.value for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state, strict=True):
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        if strict and (missing or any(k not in own for k in state)):
            extra = [k for k in state if k not in own]
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, arr in own.items():
            if name in state:
                src = np.asarray(state[name])
                if src.shape != arr.shape:
                    raise ValueError(f"{name}: shape {src.shape} != {arr.shape}")
                arr[...] = src


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=None, groups=1, bias=False, *,
                 rng, dtype=np.float32):
        self.cin, self.cout, self.k = cin, cout, k
        self.stride = stride
        self.padding = nn_ops.same_padding(k) if padding is None else padding
        self.groups = groups
        fan_in = cin // groups * k * k
        self.weight = Parameter(kaiming_normal(rng, (cout, cin // groups, k, k), fan_in, dtype))
        self.bias = Parameter(np.zeros(cout, dtype)) if bias else None

    def forward(self, x):
        t = x.tape
        b = t.param(self.bias) if self.bias is not None else None
        return nn_ops.conv2d(x, t.param(self.weight), b, self.stride, self.padding, self.groups)


class BatchNorm2d(Module):
    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        self.bn = BatchNormState.create(channels, dtype, momentum=momentum, eps=eps)

    def forward(self, x):
        return nn_ops.batchnorm2d(x, self.bn)

    def named_parameters(self, prefix=""):
        # flatten so names read "<layer>.weight" rather than "<layer>.bn.weight"
        yield f"{prefix}weight", self.bn.gamma
        yield f"{prefix}bias", self.bn.beta

    def named_buffers(self, prefix=""):
        yield f"{prefix}running_mean", self.bn.running_mean
        yield f"{prefix}running_var", self.bn.running_var


class ReLU(Module):
    def forward(self, x):
        return nn_ops.relu(x)


class MaxPool2d(Module):
    def __init__(self, k, stride, padding=0):
        self.k, self.stride, self.padding = k, stride, padding

    def forward(self, x):
        return nn_ops.maxpool2d(x, self.k, self.stride, self.padding)


class GlobalAvgPool(Module):
    def forward(self, x):
        return nn_ops.flatten(nn_ops.global_avgpool(x))


class Linear(Module):
    def __init__(self, fin, fout, bias=True, *, rng, dtype=np.float32):
        bound = 1.0 / np.sqrt(fin)
        self.weight = Parameter(rng.uniform(-bound, bound, (fout, fin)).astype(dtype))
        self.bias = Parameter(np.zeros(fout, dtype), decay=False) if bias else None

    def forward(self, x):
        t = x.tape
        return nn_ops.linear(x, t.param(self.weight),
                             t.param(self.bias) if self.bias is not None else None)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def named_parameters(self, prefix=""):
        for name, child in self.named_layers():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for name, child in self.named_layers():
            yield from child.named_buffers(f"{prefix}{name}.")

    def named_layers(self):
        for i, layer in enumerate(self.layers):
            yield getattr(layer, "label", None) or str(i), layer

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class Residual(Module):
    """relu(body(x) + shortcut(x)); identity shortcut when ``shortcut`` is None."""

    def __init__(self, body: Module, shortcut: Module | None = None):
        self.body = body
        self.shortcut = shortcut

    def forward(self, x):
        y = self.body(x)
        s = self.shortcut(x) if self.shortcut is not None else x
        return nn_ops.relu(add(y, s))
