"""Declarative architecture descriptions and their builders.

A :class:`LayerGraph` is a tree of frozen layer specs.  The same graph feeds
the analytic profiler (:mod:`awnet.profile`) and :func:`instantiate`, which
turns it into a trainable :class:`~awnet.layers.Module`.

Attention variants: ``none``, ``aw``, ``se``, ``cbam``, ``aw_se``,
``aw_cbam`` (dashes are accepted too).  CBAM takes an optional variant
suffix, e.g. ``cbam_maxpool`` or ``aw_cbam_spatial``.  AW variants replace
the 3x3 convolution of every residual block with an AW-convolution;
SE/CBAM gates sit after the last BN of the block, before the residual add.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .attention_zoo import CbamModule, SeModule
from .awconv import AttentionConfig, AwConv2d
from .errors import BuildError
from .layers import (BatchNorm2d, Conv2d, GlobalAvgPool, Linear, MaxPool2d, Module, ReLU,
                     Residual, Sequential)
from .nn_ops import same_padding


@dataclass(frozen=True)
class ConvSpec:
    name: str
    cin: int
    cout: int
    k: int
    stride: int = 1
    padding: int | None = None
    groups: int = 1
    bias: bool = False
    aw: AttentionConfig | None = None

    @property
    def pad(self) -> int:
        return same_padding(self.k) if self.padding is None else self.padding


@dataclass(frozen=True)
class BNSpec:
    name: str
    channels: int


@dataclass(frozen=True)
class ReLUSpec:
    name: str


@dataclass(frozen=True)
class MaxPoolSpec:
    name: str
    k: int
    stride: int
    padding: int = 0


@dataclass(frozen=True)
class GlobalPoolSpec:
    name: str


@dataclass(frozen=True)
class LinearSpec:
    name: str
    fin: int
    fout: int
    bias: bool = True


@dataclass(frozen=True)
class GateSpec:
    name: str
    kind: str  # "se" or "cbam"
    channels: int
    reduction: int = 16
    variant: str = "full"


@dataclass(frozen=True)
class StageSpec:
    name: str
    layers: tuple


@dataclass(frozen=True)
class ResidualSpec:
    name: str
    body: tuple
    shortcut: tuple | None = None


LayerSpec = Union[ConvSpec, BNSpec, ReLUSpec, MaxPoolSpec, GlobalPoolSpec, LinearSpec, GateSpec,
                  StageSpec, ResidualSpec]


@dataclass(frozen=True)
class LayerGraph:
    name: str
    layers: tuple
    stem: str
    classes: int
    widths: tuple
    in_channels: int = 3
    attention: str = "none"

    def walk(self):
        """Yield every leaf spec with its dotted path name."""
        def rec(specs, prefix):
            for s in specs:
                path = f"{prefix}{s.name}"
                if isinstance(s, StageSpec):
                    yield from rec(s.layers, f"{path}.")
                elif isinstance(s, ResidualSpec):
                    yield from rec(s.body, f"{path}.")
                    if s.shortcut:
                        yield from rec(s.shortcut, f"{path}.shortcut.")
                else:
                    yield path, s
        yield from rec(self.layers, "")

    def aw_convs(self):
        return [(p, s) for p, s in self.walk() if isinstance(s, ConvSpec) and s.aw is not None]


ATTENTIONS = ("none", "aw", "se", "cbam", "aw_se", "aw_cbam")


def parse_attention(attention: str) -> tuple[bool, str | None, str]:
    """Split an attention string into (uses_aw, gate_kind, cbam_variant)."""
    a = attention.lower().replace("-", "_")
    variant = "full"
    for v in ("maxpool", "spatial", "full"):
        if a.endswith(f"cbam_{v}"):
            a, variant = a[: -len(v) - 1], v
    if a not in ATTENTIONS:
        raise BuildError(f"unknown attention {attention!r}; choose from {', '.join(ATTENTIONS)}")
    aw = a.startswith("aw")
    gate = None
    if a.endswith("se"):
        gate = "se"
    elif a.endswith("cbam"):
        gate = "cbam"
    return aw, gate, variant


@dataclass(frozen=True)
class BlockSpec:
    in_ch: int
    mid: int
    out: int
    stride: int = 1
    attention: str = "none"
    # the 1x1 reduce carries the stride unless this is set
    stride_on_3x3: bool = False
    aw_config: AttentionConfig = field(default_factory=AttentionConfig)


def _gate(spec_attention, channels, name="gate"):
    _, kind, variant = parse_attention(spec_attention)
    if kind is None:
        return ()
    return (GateSpec(name, kind, channels, 16, variant),)


def _shortcut(cin, cout, stride):
    if stride == 1 and cin == cout:
        return None
    return (ConvSpec("conv", cin, cout, 1, stride, 0), BNSpec("bn", cout))


def build_bottleneck(spec: BlockSpec, name="block") -> ResidualSpec:
    if spec.out != 4 * spec.mid:
        raise BuildError(f"bottleneck needs out = 4*mid, got mid={spec.mid}, out={spec.out}")
    if min(spec.in_ch, spec.mid, spec.stride) < 1:
        raise BuildError(f"invalid bottleneck {spec}")
    aw, _, _ = parse_attention(spec.attention)
    s1, s2 = (1, spec.stride) if spec.stride_on_3x3 else (spec.stride, 1)
    body = (
        ConvSpec("conv1", spec.in_ch, spec.mid, 1, s1, 0),
        BNSpec("bn1", spec.mid),
        ReLUSpec("relu1"),
        ConvSpec("conv2", spec.mid, spec.mid, 3, s2, 1, aw=spec.aw_config if aw else None),
        BNSpec("bn2", spec.mid),
        ReLUSpec("relu2"),
        ConvSpec("conv3", spec.mid, spec.out, 1, 1, 0),
        BNSpec("bn3", spec.out),
    ) + _gate(spec.attention, spec.out)
    return ResidualSpec(name, body, _shortcut(spec.in_ch, spec.out, spec.stride))


def build_basic_block(in_ch, out, stride=1, attention="none", name="block",
                      aw_config: AttentionConfig | None = None) -> ResidualSpec:
    """Two 3x3 convs; AW variants replace the second (stride-1, out->out) one."""
    aw, _, _ = parse_attention(attention)
    body = (
        ConvSpec("conv1", in_ch, out, 3, stride, 1),
        BNSpec("bn1", out),
        ReLUSpec("relu1"),
        ConvSpec("conv2", out, out, 3, 1, 1, aw=(aw_config or AttentionConfig()) if aw else None),
        BNSpec("bn2", out),
    ) + _gate(attention, out)
    return ResidualSpec(name, body, _shortcut(in_ch, out, stride))


RESNET_BLOCKS = {50: (3, 4, 6, 3), 101: (3, 4, 23, 3)}


def _stem(kind, cin, width):
    if kind == "imagenet":
        return StageSpec("stem", (ConvSpec("conv", cin, width, 7, 2, 3), BNSpec("bn", width),
                                  ReLUSpec("relu"), MaxPoolSpec("maxpool", 3, 2, 1)))
    if kind == "cifar":
        return StageSpec("stem", (ConvSpec("conv", cin, width, 3, 1, 1), BNSpec("bn", width),
                                  ReLUSpec("relu")))
    raise BuildError(f"unknown stem {kind!r}; use imagenet or cifar")


def _head(fin, classes):
    return (GlobalPoolSpec("pool"), LinearSpec("fc", fin, classes))


def build_resnet(depth=50, stem="imagenet", classes=1000, attention="none",
                 stride_on_3x3=False) -> LayerGraph:
    if depth not in RESNET_BLOCKS:
        raise BuildError(f"unsupported ResNet depth {depth}; use 50 or 101")
    parse_attention(attention)
    mids = (64, 128, 256, 512)
    layers = [_stem(stem, 3, 64)]
    cin = 64
    for si, (mid, nblocks) in enumerate(zip(mids, RESNET_BLOCKS[depth])):
        blocks = []
        for b in range(nblocks):
            stride = 2 if (b == 0 and si > 0) else 1
            blocks.append(build_bottleneck(
                BlockSpec(cin, mid, 4 * mid, stride, attention, stride_on_3x3), str(b)))
            cin = 4 * mid
        layers.append(StageSpec(f"layer{si + 1}", tuple(blocks)))
    layers.extend(_head(cin, classes))
    return LayerGraph(f"resnet{depth}-{stem}", tuple(layers), stem, classes,
                      tuple(4 * m for m in mids), attention=attention)


MOBILENET_BLOCKS = ((32, 64, 1), (64, 128, 2), (128, 128, 1), (128, 256, 2), (256, 256, 1),
                    (256, 512, 2), (512, 512, 1), (512, 512, 1), (512, 512, 1), (512, 512, 1),
                    (512, 512, 1), (512, 1024, 2), (1024, 1024, 1))


def build_mobilenet(classes=1000, attention="none") -> LayerGraph:
    """MobileNet (width 1.0).  ``aw_pointwise`` makes the pointwise conv of
    every second depthwise-separable block (the 2nd, 4th, ...) an AW conv."""
    a = attention.lower().replace("-", "_")
    if a in ("aw", "aw_pointwise"):
        aw = True
    elif a == "none":
        aw = False
    else:
        raise BuildError(f"MobileNet supports attention none or aw_pointwise, got {attention!r}")
    layers = [StageSpec("stem", (ConvSpec("conv", 3, 32, 3, 2, 1), BNSpec("bn", 32),
                                 ReLUSpec("relu")))]
    blocks = []
    for i, (cin, cout, stride) in enumerate(MOBILENET_BLOCKS):
        use_aw = aw and i % 2 == 1
        blocks.append(StageSpec(str(i), (
            ConvSpec("dw", cin, cin, 3, stride, 1, groups=cin), BNSpec("bn1", cin),
            ReLUSpec("relu1"),
            ConvSpec("pw", cin, cout, 1, 1, 0, aw=AttentionConfig() if use_aw else None),
            BNSpec("bn2", cout), ReLUSpec("relu2"))))
    layers.append(StageSpec("features", tuple(blocks)))
    layers.extend(_head(1024, classes))
    return LayerGraph("mobilenet", tuple(layers), "imagenet", classes, (1024,),
                      attention="aw_pointwise" if aw else "none")


TINY_WIDTHS = (16, 32, 64)
# with r=16 a 16-channel AW conv gets a 1-channel branch, and BN2 then makes
# pc2 scale-invariant per output channel; r=4 keeps >= 4 branch channels
TINY_AW_CONFIG = AttentionConfig(r=4)


def build_tiny_resnet(classes=3, attention="none", widths=TINY_WIDTHS, blocks_per_stage=2,
                      aw_config: AttentionConfig | None = None) -> LayerGraph:
    parse_attention(attention)
    layers = [_stem("cifar", 3, widths[0])]
    cin = widths[0]
    for si, w in enumerate(widths):
        blocks = []
        for b in range(blocks_per_stage):
            stride = 2 if (b == 0 and si > 0) else 1
            blocks.append(build_basic_block(cin, w, stride, attention, str(b),
                                            aw_config or TINY_AW_CONFIG))
            cin = w
        layers.append(StageSpec(f"layer{si + 1}", tuple(blocks)))
    layers.extend(_head(cin, classes))
    return LayerGraph("tiny", tuple(layers), "cifar", classes, tuple(widths), attention=attention)


ARCHS = ("resnet50", "resnet101", "resnet50-cifar", "resnet101-cifar", "mobilenet", "tiny")


def build_arch(arch: str, attention="none", classes: int | None = None) -> LayerGraph:
    """Build a graph from a CLI-style architecture name."""
    if arch in ("resnet50", "resnet101"):
        return build_resnet(int(arch[6:]), "imagenet", classes or 1000, attention)
    if arch in ("resnet50-cifar", "resnet101-cifar"):
        return build_resnet(int(arch.split("-")[0][6:]), "cifar", classes or 100, attention)
    if arch == "mobilenet":
        return build_mobilenet(classes or 1000, attention)
    if arch == "tiny":
        return build_tiny_resnet(classes or 3, attention)
    raise BuildError(f"unknown architecture {arch!r}; choose from {', '.join(ARCHS)}")


# ---------------------------------------------------------------------------
# instantiation

class _Block(Residual):
    def named_parameters(self, prefix=""):
        yield from self.body.named_parameters(prefix)
        if self.shortcut is not None:
            yield from self.shortcut.named_parameters(f"{prefix}shortcut.")

    def named_buffers(self, prefix=""):
        yield from self.body.named_buffers(prefix)
        if self.shortcut is not None:
            yield from self.shortcut.named_buffers(f"{prefix}shortcut.")


class Model(Sequential):
    def __init__(self, graph: LayerGraph, layers):
        super().__init__(*layers)
        self.graph = graph

    def aw_layers(self) -> list[AwConv2d]:
        out = []

        def rec(m):
            if isinstance(m, AwConv2d):
                out.append(m)
            for _, child in m.children():
                rec(child)
        rec(self)
        return out


def _make(spec, rng, dtype):
    if isinstance(spec, ConvSpec):
        if spec.aw is not None:
            if spec.groups != 1:
                raise BuildError(f"{spec.name}: AW-convolution needs groups=1")
            m = AwConv2d(spec.cin, spec.cout, spec.k, spec.stride, spec.pad, spec.aw,
                         rng=rng, dtype=dtype)
        else:
            m = Conv2d(spec.cin, spec.cout, spec.k, spec.stride, spec.pad, spec.groups, spec.bias,
                       rng=rng, dtype=dtype)
    elif isinstance(spec, BNSpec):
        m = BatchNorm2d(spec.channels, dtype)
    elif isinstance(spec, ReLUSpec):
        m = ReLU()
    elif isinstance(spec, MaxPoolSpec):
        m = MaxPool2d(spec.k, spec.stride, spec.padding)
    elif isinstance(spec, GlobalPoolSpec):
        m = GlobalAvgPool()
    elif isinstance(spec, LinearSpec):
        m = Linear(spec.fin, spec.fout, spec.bias, rng=rng, dtype=dtype)
    elif isinstance(spec, GateSpec):
        if spec.kind == "se":
            m = SeModule(spec.channels, spec.reduction, rng=rng, dtype=dtype)
        else:
            m = CbamModule(spec.channels, spec.reduction, spec.variant, rng=rng, dtype=dtype)
    elif isinstance(spec, StageSpec):
        m = Sequential(*[_make(s, rng, dtype) for s in spec.layers])
    elif isinstance(spec, ResidualSpec):
        body = Sequential(*[_make(s, rng, dtype) for s in spec.body])
        short = None
        if spec.shortcut:
            short = Sequential(*[_make(s, rng, dtype) for s in spec.shortcut])
        m = _Block(body, short)
    else:
        raise BuildError(f"unknown layer spec {spec!r}")
    m.label = spec.name
    return m


def instantiate(graph: LayerGraph, seed=0, dtype=np.float32, rng=None) -> Model:
    """Create parameters for ``graph``; initialization order follows the graph."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    model = Model(graph, [_make(s, rng, dtype) for s in graph.layers])
    model.parameters()  # assigns dotted names
    return model
