"""Wall-clock comparisons (informational only, never a pass/fail gate).

* per-sample loop vs. grouped lowering of :func:`awnet.awconv.aw_conv2d`
* numba vs. numpy patch-extraction kernels
"""
from __future__ import annotations

import timeit
from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tape, sum_all
from .awconv import aw_conv2d

AW_SWEEP = ((8, 16, 16, 16, 3), (16, 32, 32, 16, 3), (32, 64, 64, 8, 3), (16, 64, 64, 8, 1))
KERNEL_SWEEP = ((8, 16, 32, 3), (32, 32, 16, 3), (64, 64, 8, 3))


@dataclass
class Timing:
    case: str
    variant: str
    seconds: float  # best of ``repeat`` runs, per call


def _best(fn, repeat, number=1):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_aw(sweep=AW_SWEEP, repeat=3, seed=0, backward=True) -> list[Timing]:
    rng = np.random.default_rng(seed)
    out = []
    for n, c1, c2, hw, k in sweep:
        I = rng.standard_normal((n, c1, hw, hw)).astype(np.float32)
        AK = rng.standard_normal((n, c2, c1, k, k)).astype(np.float32)
        case = f"N={n} C1={c1} C2={c2} HW={hw} k={k}"
        for method in ("loop", "grouped"):
            def run(method=method):
                t = Tape(retain_grads=False)
                x, w = t.variable(I), t.variable(AK)
                o = aw_conv2d(x, w, 1, k // 2, method)
                if backward:
                    t.backward(sum_all(o))
                t.release()
            run()
            out.append(Timing(case, method, _best(run, repeat)))
    return out


def bench_kernels(sweep=KERNEL_SWEEP, repeat=5, seed=0) -> list[Timing]:
    rng = np.random.default_rng(seed)
    impls = [kernels.numpy_impl] + ([kernels.numba_impl] if kernels.numba_impl else [])
    out = []
    for n, c, hw, k in sweep:
        x = rng.standard_normal((n, c, hw, hw)).astype(np.float32)
        case = f"N={n} C={c} HW={hw} k={k}"
        for impl in impls:
            cols = impl.im2col(x, k, k, 1, k // 2)  # also warms the JIT
            impl.col2im(cols, hw, hw, 1, k // 2)
            t = _best(lambda: impl.col2im(impl.im2col(x, k, k, 1, k // 2), hw, hw, 1, k // 2),
                      repeat)
            out.append(Timing(case, impl.name, t))
    return out


def format_timings(rows: list[Timing], title: str) -> str:
    lines = [f"# {title}", f"{'case':<34} {'variant':<8} {'ms':>10} {'speedup':>8}"]
    base: dict[str, float] = {}
    for r in rows:
        ref = base.setdefault(r.case, r.seconds)
        lines.append(f"{r.case:<34} {r.variant:<8} {r.seconds * 1e3:>10.3f} {ref / r.seconds:>7.2f}x")
    return "\n".join(lines)
