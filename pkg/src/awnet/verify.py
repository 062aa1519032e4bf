"""Property suites: fast paths against the loop oracles, algebraic identities
of AW-convolution, structural invariants of the attention maps, and
finite-difference gradient checks.

Every suite returns a list of :class:`PropertyResult`; ``run_all`` is what
``awnet verify`` prints.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn_ops
from .attention_zoo import CbamModule, SeModule
from .autodiff import Parameter, Tape, grad_check
from .awconv import (AttentionConfig, AwConv2d, attentional_weights, aw_conv2d, compute_attention,
                     expand_c1, expand_c1_array)
from .models import BlockSpec, _make, build_basic_block, build_bottleneck
from .nn_ops import BatchNormState
from .oracles import (attend_activations_then_conv, channel_pair_attention_conv, compare,
                      per_sample_aw_conv, reference_conv)

TOL = {np.float64: 1e-10, np.float32: 1e-4}


@dataclass
class PropertyResult:
    name: str
    passed: bool
    max_diff: float
    instances: int
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" {self.detail}" if self.detail else ""
        return f"{status} {self.name:<42} max_diff={self.max_diff:.3e} n={self.instances}{extra}"


@dataclass
class Instance:
    I: np.ndarray
    K: np.ndarray
    A: np.ndarray  # (N, C2, C1, h, w) in (0, 1)
    stride: int
    padding: int


def random_instance(rng, max_n=3, max_c=4, max_hw=8, kernel_sizes=(1, 3)) -> Instance:
    n = int(rng.integers(1, max_n + 1))
    c1, c2 = (int(v) for v in rng.integers(1, max_c + 1, size=2))
    k = int(rng.choice(kernel_sizes))
    h, w = (int(v) for v in rng.integers(max(k, 2), max_hw + 1, size=2))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, k // 2 + 1))
    I = rng.standard_normal((n, c1, h, w))
    K = rng.standard_normal((c2, c1, k, k))
    A = rng.uniform(0.01, 0.99, size=(n, c2, c1, k, k))
    return Instance(I, K, A, stride, padding)


def _c(t: Tape, x, dtype):
    return t.constant(np.asarray(x, dtype=dtype))


def _fast_aw(inst: Instance, AK, dtype, method="grouped"):
    t = Tape()
    return aw_conv2d(_c(t, inst.I, dtype), _c(t, AK, dtype), inst.stride, inst.padding,
                     method).value


def _fast_conv(I, K, stride, padding, dtype, groups=1):
    t = Tape()
    return nn_ops.conv2d(_c(t, I, dtype), _c(t, K, dtype), stride=stride, padding=padding,
                         groups=groups).value


def _cast(x, dtype):
    # the oracle sees exactly the values the fast path sees
    return np.asarray(x, dtype=dtype).astype(np.float64)


class _Tracker:
    def __init__(self, name, tol):
        self.name, self.tol = name, tol
        self.worst = 0.0
        self.n = 0
        self.failed_at = None

    def add(self, actual, expected, where=""):
        d = compare(actual, expected).max_abs_diff
        self.n += 1
        if d > self.worst:
            self.worst = d
        if not d < self.tol and self.failed_at is None:
            self.failed_at = where or f"instance {self.n - 1}"

    def result(self) -> PropertyResult:
        detail = f"tol={self.tol:g}"
        if self.failed_at:
            detail += f" first failure: {self.failed_at}"
        return PropertyResult(self.name, self.failed_at is None and self.n > 0, self.worst,
                              self.n, detail)


def _suffix(dtype):
    return "f64" if dtype is np.float64 else "f32"


# ---------------------------------------------------------------------------
# oracle equivalence

def oracle_suite(n=200, seed=0, dtypes=(np.float64, np.float32)) -> list[PropertyResult]:
    out = []
    for dtype in dtypes:
        rng = np.random.default_rng([seed, 0])
        conv = _Tracker(f"conv2d == reference_conv [{_suffix(dtype)}]", TOL[dtype])
        grouped = _Tracker(f"aw_conv2d(grouped) == per_sample [{_suffix(dtype)}]", TOL[dtype])
        loop = _Tracker(f"aw_conv2d(loop) == per_sample [{_suffix(dtype)}]", TOL[dtype])
        for i in range(n):
            inst = random_instance(rng)
            I, K = _cast(inst.I, dtype), _cast(inst.K, dtype)
            conv.add(_fast_conv(I, K, inst.stride, inst.padding, dtype),
                     reference_conv(I, K, inst.stride, inst.padding), f"instance {i}")
            AK = _cast(inst.K[None] * (1 + inst.A), dtype)
            ref = per_sample_aw_conv(I, AK, inst.stride, inst.padding)
            grouped.add(_fast_aw(inst, AK, dtype), ref, f"instance {i}")
            loop.add(_fast_aw(inst, AK, dtype, "loop"), ref, f"instance {i}")
        out += [conv.result(), grouped.result(), loop.result()]
        # grouped convolution proper, where groups divides both channel counts
        gconv = _Tracker(f"conv2d(groups) == reference_conv [{_suffix(dtype)}]", TOL[dtype])
        for i in range(max(n // 4, 1)):
            g = int(rng.integers(1, 4))
            cg, cog = (int(v) for v in rng.integers(1, 3, size=2))
            k = int(rng.choice((1, 3)))
            I = _cast(rng.standard_normal((int(rng.integers(1, 4)), g * cg, 6, 5)), dtype)
            K = _cast(rng.standard_normal((g * cog, cg, k, k)), dtype)
            gconv.add(_fast_conv(I, K, 1, k // 2, dtype, groups=g),
                      reference_conv(I, K, 1, k // 2, groups=g), f"instance {i}")
        out.append(gconv.result())
    return out


# ---------------------------------------------------------------------------
# identities

def identity_suite(n=50, seed=0, dtypes=(np.float64, np.float32)) -> list[PropertyResult]:
    out = []
    for dtype in dtypes:
        rng = np.random.default_rng([seed, 1])
        sfx = _suffix(dtype)
        tol = TOL[dtype]
        weights_vs_acts = _Tracker(f"attend weights == attend activations [{sfx}]", tol)
        residual = _Tracker(f"AW(I, K+A*K) == conv(I,K) + AW(I, A*K) [{sfx}]", tol)
        shared = _Tracker(f"shared weight-shaped map embeds [{sfx}]", tol)
        pair = _Tracker(f"channel-pair map embeds [{sfx}]", tol)
        zero = _Tracker(f"A=0 layer == plain conv [{sfx}]", tol)
        for i in range(n):
            inst = random_instance(rng)
            I, K, A = _cast(inst.I, dtype), _cast(inst.K, dtype), _cast(inst.A, dtype)
            s, p = inst.stride, inst.padding
            where = f"instance {i}"
            N, C2, C1, kh, kw = A.shape

            weights_vs_acts.add(_fast_aw(inst, A * K[None], dtype),
                                attend_activations_then_conv(I, A, K, s, p), where)

            t = Tape()
            Kn, An = _c(t, K, dtype), _c(t, A, dtype)
            In = _c(t, I, dtype)
            lhs = aw_conv2d(In, attentional_weights(An, Kn), s, p).value
            rhs = (nn_ops.conv2d(In, Kn, stride=s, padding=p).value
                   + aw_conv2d(In, ad.mul(An, ad.reshape(Kn, (1,) + K.shape)), s, p).value)
            residual.add(lhs, rhs, where)

            A4 = _cast(rng.uniform(0.01, 0.99, size=(N, C1, kh, kw)), dtype)
            shared.add(_fast_aw(inst, np.broadcast_to(A4[:, None], A.shape) * K[None], dtype),
                       attend_activations_then_conv(I, A4, K, s, p), where)

            Aic = _cast(rng.uniform(0.01, 0.99, size=(N, C2, C1, 1, 1)), dtype)
            pair.add(_fast_aw(inst, np.broadcast_to(Aic, A.shape) * K[None], dtype),
                     channel_pair_attention_conv(I, Aic, K, s, p), where)

            layer = AwConv2d(C1, C2, kh, s, p, AttentionConfig(r=2), rng=rng, dtype=dtype)
            layer.weight.value[...] = K
            layer.attention_override = 0.0
            t = Tape()
            zero.add(layer(_c(t, I, dtype)).value, reference_conv(I, K, s, p), where)
        out += [weights_vs_acts.result(), residual.result(), shared.result(), pair.result(),
                zero.result()]
    return out


# ---------------------------------------------------------------------------
# structural invariants

def structural_suite(n=50, seed=0) -> list[PropertyResult]:
    rng = np.random.default_rng([seed, 2])
    res = []

    # A strictly inside (0, 1), including inputs that saturate the sigmoid
    worst_margin = np.inf
    ok = True
    for i in range(n):
        c1, c2 = (int(v) for v in rng.integers(1, 9, size=2))
        scale = float(rng.choice([1.0, 1e3, 1e8]))
        layer = AwConv2d(c1, c2, 3, config=AttentionConfig(r=2), rng=rng, dtype=np.float32)
        for key in ("bn1", "bn2"):
            getattr(layer, key).gamma.value[...] = rng.normal(0, scale, size=getattr(layer, key).gamma.shape)
        X = (rng.standard_normal((3, c1, 6, 6)) * scale).astype(np.float32)
        A = compute_attention(Tape().constant(X), layer).value
        ok &= bool(np.all(np.isfinite(A)) and np.all(A > 0) and np.all(A < 1))
        worst_margin = min(worst_margin, float(A.min()), float(1 - A.max()))
    res.append(PropertyResult("A in (0,1) everywhere", ok, worst_margin, n,
                              "max_diff = smallest distance to {0,1}"))

    # r_c1 = C1: every input-channel slice equal
    worst = 0.0
    for i in range(n):
        c1, c2 = (int(v) for v in rng.integers(1, 9, size=2))
        layer = AwConv2d(c1, c2, int(rng.choice((1, 3))), config=AttentionConfig(r=2), rng=rng,
                         dtype=np.float64)
        A = compute_attention(Tape().constant(rng.standard_normal((2, c1, 5, 5))), layer).value
        worst = max(worst, float(np.abs(A - A[:, :, :1]).max()))
    res.append(PropertyResult("A constant along C1 when r_c1=C1", worst == 0.0, worst, n))

    # replication pattern of expand_c1
    worst = 0.0
    for i in range(n):
        reduced = int(rng.integers(1, 4))
        r_c1 = int(rng.integers(1, 4))
        c1 = reduced * r_c1
        c2, h, nb = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        a2 = rng.standard_normal((nb, c2 * reduced, h, h))
        want = np.repeat(a2.reshape(nb, c2, reduced, h, h), r_c1, axis=2)
        got = expand_c1(Tape().constant(a2), c1, r_c1).value
        got_arr = expand_c1_array(a2, c1, r_c1)
        worst = max(worst, float(np.abs(got - want).max()), float(np.abs(got_arr - want).max()))
    res.append(PropertyResult("expand_c1 replication pattern exact", worst == 0.0, worst, n))

    # eval-mode batch permutation equivariance, bitwise
    mismatches = 0
    trials = max(n // 5, 1)
    for i in range(trials):
        c1, c2 = (int(v) for v in rng.integers(2, 7, size=2))
        layer = AwConv2d(c1, c2, 3, config=AttentionConfig(r=2), rng=rng, dtype=np.float64)
        for key in ("bn1", "bn2"):
            st = getattr(layer, key)
            st.running_mean[...] = rng.normal(size=st.running_mean.shape)
            st.running_var[...] = rng.uniform(0.5, 2, size=st.running_var.shape)
        layer.eval()
        X = rng.standard_normal((4, c1, 6, 7))
        perm = rng.permutation(4)
        full = layer(Tape().constant(X)).value
        permuted = layer(Tape().constant(X[perm])).value
        mismatches += int(not np.array_equal(full[perm], permuted))
    res.append(PropertyResult("batch-permutation equivariance (eval, bitwise)", mismatches == 0,
                              float(mismatches), trials, "max_diff = mismatching trials"))
    return res


# ---------------------------------------------------------------------------
# gradient checks

GradCase = tuple  # (name, f(tape) -> scalar Node, [Parameter])


def _p(rng, *shape, low=None, name=""):
    if low is None:
        v = rng.standard_normal(shape)
    else:
        v = rng.uniform(low, 1.0, size=shape)
    return Parameter(v, name)


def _proj(rng, shape):
    """Fixed random projection so every output element enters the loss."""
    return rng.standard_normal(shape)


def _dot(t, node, W):
    return ad.sum_all(ad.mul(node, t.constant(W)))


def grad_cases(seed: int) -> list[GradCase]:
    rng = np.random.default_rng([seed, 3])
    cases: list[GradCase] = []

    def add_case(name, build, params):
        # the projection is drawn once so each call of f sees the same loss
        probe = build(Tape())
        W = _proj(rng, probe.shape)
        cases.append((name, lambda t: _dot(t, build(t), W), params))

    a, b = _p(rng, 3, 4), _p(rng, 4)
    add_case("add (broadcast)", lambda t: ad.add(t.param(a), t.param(b)), [a, b])
    add_case("sub (broadcast)", lambda t: ad.sub(t.param(a), t.param(b)), [a, b])
    add_case("mul (broadcast)", lambda t: ad.mul(t.param(a), t.param(b)), [a, b])
    add_case("scale", lambda t: ad.scale(t.param(a), -1.7), [a])
    add_case("reshape", lambda t: ad.reshape(t.param(a), (2, 6)), [a])
    add_case("unsqueeze", lambda t: ad.unsqueeze(t.param(a), 1), [a])
    c = _p(rng, 3, 1, 4)
    add_case("expand", lambda t: ad.expand(t.param(c), (3, 5, 4)), [c])
    add_case("mean", lambda t: ad.mean(t.param(c), axis=(0, 2), keepdims=True), [c])
    add_case("amax", lambda t: ad.amax(t.param(a), axis=1), [a])
    add_case("concat", lambda t: ad.concat([t.param(a), t.param(a)], axis=0), [a])
    add_case("take", lambda t: ad.take(t.param(a), 1), [a])
    cases.append(("sum_all", lambda t: ad.sum_all(ad.mul(t.param(a), t.param(a))), [a]))

    x = _p(rng, 2, 4, 6, 5)
    w = _p(rng, 6, 2, 3, 3)
    bias = _p(rng, 6)
    add_case("conv2d (stride 2, groups 2, bias)",
             lambda t: nn_ops.conv2d(t.param(x), t.param(w), t.param(bias), 2, 1, 2), [x, w, bias])
    pw = _p(rng, 3, 4, 1, 1)
    add_case("pointwise_conv", lambda t: nn_ops.pointwise_conv(t.param(x), t.param(pw)), [x, pw])
    add_case("adaptive_avgpool2d (uneven bins)",
             lambda t: nn_ops.adaptive_avgpool2d(t.param(x), 3, 2), [x])
    add_case("maxpool2d", lambda t: nn_ops.maxpool2d(t.param(x), 3, 2, 1), [x])
    add_case("relu", lambda t: nn_ops.relu(t.param(x)), [x])
    add_case("sigmoid", lambda t: nn_ops.sigmoid(t.param(x)), [x])
    add_case("flatten", lambda t: nn_ops.flatten(t.param(x)), [x])

    for mode in ("train", "eval"):
        st = BatchNormState.create(4, np.float64, f"bn_{mode}")
        st.gamma.value[...] = rng.normal(size=4)
        st.beta.value[...] = rng.normal(size=4)
        st.running_var[...] = rng.uniform(0.5, 2, size=4)
        st.mode = mode
        add_case(f"batchnorm2d ({mode})", lambda t, st=st: nn_ops.batchnorm2d(t.param(x), st),
                 [x, st.gamma, st.beta])

    v, lw, lb = _p(rng, 5, 4), _p(rng, 3, 4), _p(rng, 3)
    add_case("linear", lambda t: nn_ops.linear(t.param(v), t.param(lw), t.param(lb)), [v, lw, lb])
    labels = rng.integers(0, 3, size=5)
    cases.append(("softmax_cross_entropy",
                  lambda t: nn_ops.softmax_cross_entropy(
                      nn_ops.linear(t.param(v), t.param(lw), t.param(lb)), labels), [v, lw, lb]))

    A = _p(rng, 2, 3, 4, 3, 3, low=0.05)
    K = _p(rng, 3, 4, 3, 3)
    add_case("attentional_weights", lambda t: attentional_weights(t.param(A), t.param(K)), [A, K])
    AK = _p(rng, 2, 3, 4, 3, 3)
    for method in ("grouped", "loop"):
        add_case(f"aw_conv2d ({method})",
                 lambda t, m=method: aw_conv2d(t.param(x), t.param(AK), 2, 1, m), [x, AK])
    a2 = _p(rng, 2, 6, 3, 3)
    add_case("expand_c1", lambda t: expand_c1(t.param(a2), 4, 2), [a2])

    layer = AwConv2d(4, 3, 3, config=AttentionConfig(r=2), rng=rng, dtype=np.float64)
    add_case("AwConv2d layer (attention branch + conv)", lambda t: layer(t.param(x)),
             [x] + layer.parameters())

    xg = _p(rng, 2, 8, 4, 4)
    se = SeModule(8, 4, rng=rng, dtype=np.float64)
    add_case("SE gate", lambda t: se(t.param(xg)), [xg] + se.parameters())
    cbam = CbamModule(8, 4, "full", rng=rng, dtype=np.float64)
    add_case("CBAM gate", lambda t: cbam(t.param(xg)), [xg] + cbam.parameters())

    cfg = AttentionConfig(r=2)
    block = _make(build_bottleneck(BlockSpec(8, 4, 16, 2, "aw", aw_config=cfg)),
                  rng, np.float64)
    xb = _p(rng, 2, 8, 6, 6)
    add_case("AW bottleneck block", lambda t: block(t.param(xb)), [xb] + block.parameters())
    basic = _make(build_basic_block(4, 4, 1, "aw", aw_config=cfg), rng, np.float64)
    add_case("AW basic block", lambda t: basic(t.param(x)), [x] + basic.parameters())
    return cases


def gradcheck_suite(seeds=range(10), eps=1e-5, tol=1e-4, only: str | None = None,
                    max_per_param: int | None = 40) -> list[PropertyResult]:
    worst: dict[str, list] = {}
    for seed in seeds:
        for name, f, params in grad_cases(seed):
            if only and only not in name:
                continue
            rep = grad_check(f, params, eps=eps, tol=tol, max_per_param=max_per_param,
                             rng=np.random.default_rng(seed))
            entry = worst.setdefault(name, [0.0, 0, True, "", 0])
            if rep.max_rel_error >= entry[0]:
                entry[0] = rep.max_rel_error
                entry[3] = max(rep.per_param, key=rep.per_param.get) if rep.per_param else ""
            entry[1] += 1
            entry[2] &= rep.passed
            entry[4] += rep.kinks
    return [PropertyResult(f"grad {name}", ok, err, cnt,
                           f"tol={tol:g} eps={eps:g} worst={where} kinks={kinks}")
            for name, (err, cnt, ok, where, kinks) in worst.items()]


SUITES: dict[str, Callable[..., list[PropertyResult]]] = {
    "oracle": oracle_suite,
    "identity": identity_suite,
    "structural": structural_suite,
}


def run_all(seed=0, quick=False) -> list[PropertyResult]:
    scale = 4 if quick else 1
    return (oracle_suite(200 // scale, seed) + identity_suite(50 // scale, seed)
            + structural_suite(50 // scale, seed))
