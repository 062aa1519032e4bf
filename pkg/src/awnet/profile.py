"""Analytic parameter and FLOP accounting over a :class:`~awnet.models.LayerGraph`.

Convention: one multiply-accumulate counts as one FLOP.  ``flops`` covers
convolutions, linear layers, the AW attention branch's pointwise convs and
the attentional-weight products ``K + A*K`` (one fused multiply-add per
kernel element per sample).  Element-wise work -- BN, activations,
pooling, gating, residual adds -- is tallied at one op per element in the
separate ``elementwise`` column and is not part of the GFLOPs total.
Counts are per sample (batch size 1).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .attention_zoo import cbam_params, se_params
from .errors import BuildError
from .models import (BNSpec, ConvSpec, GateSpec, GlobalPoolSpec, LayerGraph, LinearSpec,
                     MaxPoolSpec, ReLUSpec, ResidualSpec, StageSpec)

CONVENTION = ("1 multiply-accumulate = 1 FLOP; per sample; element-wise ops "
              "(BN, activations, pooling, gates, residual adds) counted separately")


@dataclass(frozen=True)
class ProfileRow:
    name: str
    kind: str
    params: int
    flops: int
    elementwise: int = 0
    out_shape: tuple = ()


@dataclass
class ProfileReport:
    graph: str
    input_hw: tuple
    rows: list = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def total_elementwise(self) -> int:
        return sum(r.elementwise for r in self.rows)

    def table(self, per_layer=False) -> str:
        lines = [f"# {self.graph} @ {self.input_hw[0]}x{self.input_hw[1]}",
                 f"# convention: {CONVENTION}"]
        if per_layer:
            lines.append(f"{'layer':<40} {'kind':<8} {'params':>12} {'flops':>15} {'elementwise':>13}")
            for r in self.rows:
                lines.append(f"{r.name:<40} {r.kind:<8} {r.params:>12,} {r.flops:>15,} "
                             f"{r.elementwise:>13,}")
        lines.append(f"params: {fmt_millions(self.total_params)} ({self.total_params:,})")
        lines.append(f"GFLOPs: {fmt_giga(self.total_flops)} ({self.total_flops:,} MACs)")
        lines.append(f"elementwise ops: {self.total_elementwise:,}")
        return "\n".join(lines)

    def records(self) -> str:
        """One JSON object per layer, then a totals record."""
        out = [json.dumps({"name": r.name, "kind": r.kind, "params": r.params, "flops": r.flops,
                           "elementwise": r.elementwise}) for r in self.rows]
        out.append(json.dumps({"name": "__total__", "graph": self.graph,
                               "input": list(self.input_hw), "params": self.total_params,
                               "flops": self.total_flops, "elementwise": self.total_elementwise,
                               "convention": CONVENTION}))
        return "\n".join(out)


def fmt_millions(n: int) -> str:
    return f"{n / 1e6:.2f}M"


def fmt_giga(n: int) -> str:
    g = n / 1e9
    return f"{g:.3f}G" if g < 1 else f"{g:.2f}G"


def _conv_out(size, k, stride, pad):
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise BuildError(f"kernel {k} does not fit spatial size {size}")
    return out


def _walk(specs, prefix, shape, rows):
    c, h, w = shape
    for s in specs:
        name = f"{prefix}{s.name}"
        if isinstance(s, StageSpec):
            c, h, w = _walk(s.layers, f"{name}.", (c, h, w), rows)
        elif isinstance(s, ResidualSpec):
            out = _walk(s.body, f"{name}.", (c, h, w), rows)
            if s.shortcut:
                short = _walk(s.shortcut, f"{name}.shortcut.", (c, h, w), rows)
            else:
                short = (c, h, w)
            if short != out:
                raise BuildError(f"{name}: body {out} and shortcut {short} shapes differ")
            c, h, w = out
            rows.append(ProfileRow(f"{name}.add", "add", 0, 0, 2 * c * h * w, out))
        elif isinstance(s, ConvSpec):
            if s.cin != c:
                raise BuildError(f"{name}: expects {s.cin} channels, got {c}")
            ho, wo = _conv_out(h, s.k, s.stride, s.pad), _conv_out(w, s.k, s.stride, s.pad)
            kdim = s.cin // s.groups * s.k * s.k
            params = s.cout * kdim + (s.cout if s.bias else 0)
            rows.append(ProfileRow(name, "conv", params, ho * wo * s.cout * kdim, 0,
                                   (s.cout, ho, wo)))
            if s.aw is not None:
                rows.append(aw_branch_row(f"{name}.attn", s, (c, h, w)))
            c, h, w = s.cout, ho, wo
        elif isinstance(s, BNSpec):
            if s.channels != c:
                raise BuildError(f"{name}: expects {s.channels} channels, got {c}")
            rows.append(ProfileRow(name, "bn", 2 * c, 0, c * h * w, (c, h, w)))
        elif isinstance(s, ReLUSpec):
            rows.append(ProfileRow(name, "relu", 0, 0, c * h * w, (c, h, w)))
        elif isinstance(s, MaxPoolSpec):
            elems = c * h * w
            h, w = _conv_out(h, s.k, s.stride, s.padding), _conv_out(w, s.k, s.stride, s.padding)
            rows.append(ProfileRow(name, "maxpool", 0, 0, elems, (c, h, w)))
        elif isinstance(s, GlobalPoolSpec):
            rows.append(ProfileRow(name, "pool", 0, 0, c * h * w, (c, 1, 1)))
            h = w = 1
        elif isinstance(s, LinearSpec):
            if s.fin != c * h * w:
                raise BuildError(f"{name}: expects {s.fin} features, got {c * h * w}")
            rows.append(ProfileRow(name, "linear", s.fin * s.fout + (s.fout if s.bias else 0),
                                   s.fin * s.fout, 0, (s.fout, 1, 1)))
            c, h, w = s.fout, 1, 1
        elif isinstance(s, GateSpec):
            rows.append(gate_row(name, s, (c, h, w)))
        else:
            raise BuildError(f"cannot profile {s!r}")
    return c, h, w


def aw_branch_row(name: str, s: ConvSpec, in_shape) -> ProfileRow:
    """Attention branch of one AW conv: pool to k x k, two pointwise convs, BN, product with K."""
    c1, h, w = in_shape
    cfg = s.aw
    mid = cfg.mid_channels(c1)
    out = cfg.branch_out_channels(c1, s.cout)
    hw = s.k * s.k
    branch_macs = hw * (c1 * mid + mid * out)
    ak_macs = s.cout * c1 * hw
    # pool reads the input once; BN + activation on both branch outputs
    elem = c1 * h * w + 2 * hw * mid + 2 * hw * out
    return ProfileRow(name, "aw", cfg.branch_params(c1, s.cout), branch_macs + ak_macs, elem,
                      (s.cout, c1, s.k, s.k))


def gate_row(name: str, s: GateSpec, shape) -> ProfileRow:
    c, h, w = shape
    hidden = max(c // s.reduction, 1)
    mlp = 2 * c * hidden
    if s.kind == "se":
        return ProfileRow(name, "se", se_params(c, s.reduction), mlp, 2 * c * h * w, shape)
    if s.kind != "cbam":
        raise BuildError(f"unknown gate {s.kind!r}")
    macs = mlp
    elem = 2 * c * h * w
    if s.variant != "spatial":
        macs += mlp
        elem += c * h * w
    if s.variant != "maxpool":
        macs += h * w * 2 * 49
        elem += 3 * c * h * w
    return ProfileRow(name, "cbam", cbam_params(c, s.reduction, s.variant), macs, elem, shape)


def profile(graph: LayerGraph, input_hw=224) -> ProfileReport:
    if isinstance(input_hw, int):
        input_hw = (input_hw, input_hw)
    if min(input_hw) < 1:
        raise BuildError("input resolution must be positive")
    rows: list[ProfileRow] = []
    _walk(graph.layers, "", (graph.in_channels,) + tuple(input_hw), rows)
    return ProfileReport(graph.name + ("" if graph.attention == "none" else f"/{graph.attention}"),
                         tuple(input_hw), rows)


def count_params(graph: LayerGraph) -> ProfileReport:
    """Parameter counts per layer; spatial size is irrelevant but a legal one is used."""
    return profile(graph, 224 if graph.stem == "imagenet" else 32)


def count_flops(graph: LayerGraph, input_hw=224) -> ProfileReport:
    return profile(graph, input_hw)


def aw_param_formula(graph: LayerGraph) -> int:
    """Closed-form parameter cost of every AW branch in ``graph``."""
    return sum(s.aw.branch_params(s.cin, s.cout) for _, s in graph.aw_convs())
