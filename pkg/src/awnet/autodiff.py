"""Define-by-run reverse-mode automatic differentiation.

Every differentiable operation records a :class:`Node` on a :class:`Tape`
while the forward pass runs.  :meth:`Tape.backward` replays the records in
reverse and adds each node's gradient into ``node.grad``; gradients
accumulate across calls until :meth:`Tape.zero_grads` (or
:meth:`Parameter.zero_grad`) clears them.

Trainable state lives in :class:`Parameter` objects that outlive any one
tape.  ``tape.param(p)`` binds a parameter into a tape; the resulting leaf
node shares ``p.value`` and ``p.grad``, so backward writes straight into the
parameter's gradient buffer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, UsageError
from .tensor import broadcast_shape

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Parameter:
    """A named trainable tensor with a persistent gradient buffer."""

    def __init__(self, value: np.ndarray, name: str = "", decay: bool = True):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.name = name
        # weight decay applies to conv/linear weights, not BN affine terms
        self.decay = decay

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


class Node:
    __slots__ = ("value", "_grad", "tape", "op", "parents", "vjp", "requires_grad", "index")

    def __init__(self, value, tape, op, parents=(), vjp=None, requires_grad=False, grad=None):
        self.value = value
        self._grad = grad
        self.tape = tape
        self.op = op
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.index = -1

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # operator sugar for the elementary ops below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of operations plus the parameters bound into it."""

    def __init__(self, retain_grads: bool = True, track_branches: bool = False):
        self.nodes: list[Node] = []
        self.params: dict[int, Node] = {}
        # when False only leaves (parameters, variables) keep their gradient
        self.retain_grads = retain_grads
        # piecewise ops (relu, max, clamps) log which piece they took; grad_check
        # uses this to spot perturbations that cross a kink
        self.track_branches = track_branches
        self.branches: list[np.ndarray] = []

    def branch(self, choice: np.ndarray) -> None:
        if self.track_branches:
            self.branches.append(np.array(choice, copy=True))

    def _push(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def constant(self, value, op="const") -> Node:
        return self._push(Node(np.asarray(value), self, op))

    def variable(self, value) -> Node:
        """A differentiable leaf that is not a registered parameter."""
        return self._push(Node(np.asarray(value), self, "leaf", requires_grad=True))

    def param(self, p: Parameter) -> Node:
        node = self.params.get(id(p))
        if node is None:
            node = self._push(Node(p.value, self, "param", requires_grad=True, grad=p.grad))
            self.params[id(p)] = node
        return node

    def record(self, op: str, inputs: Sequence[Node], value: np.ndarray, vjp: VJP) -> Node:
        """Append the result of ``op`` on ``inputs``.

        ``vjp(g)`` maps the gradient w.r.t. the output to one gradient (or
        ``None``) per input.  If no input requires a gradient the node is
        recorded but excluded from backward.
        """
        for x in inputs:
            if not isinstance(x, Node):
                raise UsageError(f"{op}: inputs must be Nodes, got {type(x).__name__}")
            if x.tape is not self:
                raise UsageError(f"{op}: input node belongs to a different tape")
        needs = any(x.requires_grad for x in inputs)
        return self._push(Node(value, self, op, inputs, vjp if needs else None, needs))

    def backward(self, loss: Node) -> None:
        if loss.tape is not self:
            raise UsageError("loss belongs to a different tape")
        if loss.value.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        # local buffers keep repeated backward calls a clean accumulation
        local: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = local.pop(node.index, None)
            if g is None or not node.requires_grad:
                continue
            if self.retain_grads or not node.parents:
                node.grad[...] += g
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.value.shape:
                    raise ShapeError(
                        f"{node.op}: gradient shape {pg.shape} != input shape {parent.value.shape}")
                prev = local.get(parent.index)
                local[parent.index] = pg if prev is None else prev + pg

    def release(self) -> None:
        """Drop every recorded node; nodes point back at the tape, so without
        this a finished graph waits for the cyclic collector."""
        for node in self.nodes:
            node.parents = ()
            node.vjp = None
        self.nodes.clear()
        self.params.clear()
        self.branches.clear()

    def zero_grads(self) -> None:
        for node in self.nodes:
            if node._grad is not None:
                node._grad[...] = 0


def zero_grads(tape: Tape) -> None:
    tape.zero_grads()


def backward(loss: Node) -> None:
    loss.tape.backward(loss)


# ---------------------------------------------------------------------------
# elementary differentiable ops

def _lift(x, like: Node) -> Node:
    if isinstance(x, Node):
        return x
    return like.tape.constant(np.asarray(x, dtype=like.value.dtype))


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the adjoint of broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Node, b) -> Node:
    b = _lift(b, a)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return a.tape.record("add", (a, b), a.value + b.value,
                         lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a: Node, b) -> Node:
    b = _lift(b, a)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return a.tape.record("sub", (a, b), a.value - b.value,
                         lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a: Node, b) -> Node:
    """Hadamard product with broadcasting."""
    b = _lift(b, a)
    broadcast_shape(a.shape, b.shape)
    av, bv = a.value, b.value
    return a.tape.record("mul", (a, b), av * bv,
                         lambda g: (unbroadcast(g * bv, av.shape), unbroadcast(g * av, bv.shape)))


def scale(a: Node, s: float) -> Node:
    s = a.value.dtype.type(s)
    return a.tape.record("scale", (a,), a.value * s, lambda g: (g * s,))


def reshape(a: Node, shape) -> Node:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.value.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    src = a.shape
    return a.tape.record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(src),))


def unsqueeze(a: Node, dim: int) -> Node:
    if not 0 <= dim <= a.value.ndim:
        raise ShapeError(f"unsqueeze dim {dim} out of range for rank {a.value.ndim}")
    src = a.shape
    return a.tape.record("unsqueeze", (a,), np.expand_dims(a.value, dim),
                         lambda g: (g.reshape(src),))


def expand(a: Node, shape) -> Node:
    """Materialized broadcast of size-1 dims (same rank)."""
    shape = tuple(int(d) for d in shape)
    if len(shape) != a.value.ndim or any(s != d and s != 1 for s, d in zip(a.shape, shape)):
        raise ShapeError(f"cannot expand {a.shape} to {shape}")
    src = a.shape
    out = np.ascontiguousarray(np.broadcast_to(a.value, shape))
    return a.tape.record("expand", (a,), out, lambda g: (unbroadcast(g, src),))


def sum_all(a: Node) -> Node:
    src = a.shape
    out = np.asarray(a.value.sum(), dtype=a.dtype).reshape(1)
    return a.tape.record("sum", (a,), out, lambda g: (np.broadcast_to(g.reshape(()), src).copy(),))


def mean(a: Node, axis=None, keepdims=False) -> Node:
    src = a.shape
    if axis is None:
        axes = tuple(range(a.value.ndim))
    else:
        axes = tuple(sorted(ax % a.value.ndim for ax in np.atleast_1d(axis)))
    count = int(np.prod([src[ax] for ax in axes]))
    out = a.value.mean(axis=axes, keepdims=keepdims)
    if out.ndim == 0:
        out = out.reshape(1)

    def vjp(g):
        g = g.reshape([1 if i in axes else d for i, d in enumerate(src)])
        return (np.broadcast_to(g / a.dtype.type(count), src).copy(),)

    return a.tape.record("mean", (a,), np.asarray(out, dtype=a.dtype), vjp)


def amax(a: Node, axis: int, keepdims=True) -> Node:
    """Max along one axis; ties send the gradient to the first maximum."""
    idx = np.argmax(a.value, axis=axis)
    a.tape.branch(idx)
    out = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis)
    if not keepdims:
        out = out.squeeze(axis)

    def vjp(g):
        ga = np.zeros_like(a.value)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(ga, np.expand_dims(idx, axis), gg, axis)
        return (ga,)

    return a.tape.record("amax", (a,), np.ascontiguousarray(out), vjp)


def concat(parts: Sequence[Node], axis: int) -> Node:
    tape = parts[0].tape
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return tape.record("concat", tuple(parts), np.concatenate([p.value for p in parts], axis=axis), vjp)


def take(a: Node, i: int, axis: int = 0) -> Node:
    """Select index ``i`` along ``axis`` keeping the dim (size 1)."""
    src = a.shape

    def vjp(g):
        ga = np.zeros(src, dtype=g.dtype)
        sl = [slice(None)] * len(src)
        sl[axis] = slice(i, i + 1)
        ga[tuple(sl)] = g
        return (ga,)

    sl = [slice(None)] * len(src)
    sl[axis] = slice(i, i + 1)
    return a.tape.record("take", (a,), np.ascontiguousarray(a.value[tuple(sl)]), vjp)


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    num_checked: int
    passed: bool
    per_param: dict = field(default_factory=dict)
    nonfinite: bool = False
    message: str = ""
    kinks: int = 0  # elements skipped because +-eps changed a piecewise branch

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel={self.max_rel_error:.3e} max_abs={self.max_abs_error:.3e} "
                f"n={self.num_checked} kinks={self.kinks}"
                f"{' ' + self.message if self.message else ''}")


def rel_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(f: Callable[[Tape], Node], params: Sequence[Parameter], eps=1e-5, tol=1e-4,
               max_per_param: int | None = None, rng=None) -> GradCheckReport:
    """Compare backprop gradients of ``f`` against central differences.

    ``f(tape)`` must rebuild the forward pass on the given tape and return a
    scalar node; it is called once for the analytic gradient and twice per
    checked element.  ``max_per_param`` subsamples elements of large
    parameters (chosen with ``rng``); by default every element is checked.

    A central difference across a ReLU (or max, or clamp) kink measures a
    mix of two one-sided slopes, not the gradient.  Elements whose +eps and
    -eps evaluations take a different piece than the base point are skipped
    and counted in ``kinks``; the check fails if nothing is left to compare.
    """
    for p in params:
        if p.value.dtype != np.float64:
            raise UsageError(f"grad_check needs f64 parameters; {p.name or p} is {p.value.dtype}")
    saved = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    tape = Tape(track_branches=True)
    loss = f(tape)
    base_branches = list(tape.branches)
    if not np.all(np.isfinite(loss.value)):
        for p, g in zip(params, saved):
            p.grad[...] = g
        return GradCheckReport(np.inf, np.inf, 0, False, nonfinite=True,
                               message="non-finite loss at the base point")
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad[...] = g

    def evaluate():
        t = Tape(track_branches=True)
        value = float(f(t).value.reshape(-1)[0])
        same = len(t.branches) == len(base_branches) and all(
            np.array_equal(x, y) for x, y in zip(t.branches, base_branches))
        t.release()
        return value, same

    rng = rng if rng is not None else np.random.default_rng(0)
    worst_rel = worst_abs = 0.0
    count = kinks = 0
    nonfinite = False
    per_param = {}
    for pi, (p, a) in enumerate(zip(params, analytic)):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        p_rel = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp, same_p = evaluate()
            flat[i] = orig - eps
            fm, same_m = evaluate()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            if not (np.isfinite(fp) and np.isfinite(fm)):
                nonfinite = True
                continue
            if not (same_p and same_m):
                kinks += 1
                continue
            ai = a.reshape(-1)[i]
            r = float(rel_error(ai, num))
            p_rel = max(p_rel, r)
            worst_abs = max(worst_abs, abs(float(ai - num)))
            count += 1
        per_param[p.name or f"param{pi}"] = p_rel
        worst_rel = max(worst_rel, p_rel)
    passed = (not nonfinite) and count > 0 and worst_rel < tol
    msg = "non-finite loss during perturbation" if nonfinite else (
        "" if count else "every element crossed a kink")
    return GradCheckReport(worst_rel, worst_abs, count, passed, per_param, nonfinite, msg, kinks)


def directional_check(f: Callable[[Tape], Node], params: Sequence[Parameter], eps=1e-6,
                      rng=None) -> tuple[float, float, float]:
    """Compare the analytic directional derivative g.d along a random unit
    direction d (spanning every parameter) with its central difference.

    Returns (analytic, numeric, relative error).  Suited to whole networks,
    where single elements can have gradients below finite-difference noise.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    dirs = [rng.standard_normal(p.value.shape) for p in params]
    norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
    dirs = [d / norm for d in dirs]
    saved = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    tape = Tape()
    tape.backward(f(tape))
    analytic = sum(float((p.grad * d).sum()) for p, d in zip(params, dirs))
    for p, g in zip(params, saved):
        p.grad[...] = g
    base = [p.value.copy() for p in params]

    def shifted(step):
        for p, b, d in zip(params, base, dirs):
            p.value[...] = b + step * d
        return float(f(Tape()).value.reshape(-1)[0])

    try:
        numeric = (shifted(eps) - shifted(-eps)) / (2 * eps)
    finally:
        for p, b in zip(params, base):
            p.value[...] = b
    return analytic, numeric, float(rel_error(analytic, numeric))
