"""Compare numba and numpy kernels, and loop vs grouped aw_conv2d.

    python benchmarks/bench_kernels.py [--repeat 5]

Timings are informational; the backends are checked for bitwise agreement
before timing.
"""
import argparse

import numpy as np

from awnet import bench, kernels


def check_agreement(seed=0):
    if kernels.numba_impl is None:
        return "numba unavailable; numpy only"
    rng = np.random.default_rng(seed)
    for n, c, hw, k in bench.KERNEL_SWEEP:
        x = rng.standard_normal((n, c, hw, hw)).astype(np.float32)
        a = kernels.numpy_impl.im2col(x, k, k, 1, k // 2)
        b = kernels.numba_impl.im2col(x, k, k, 1, k // 2)
        if not (np.array_equal(a, b) and np.array_equal(
                kernels.numpy_impl.col2im(a, hw, hw, 1, k // 2),
                kernels.numba_impl.col2im(b, hw, hw, 1, k // 2))):
            raise SystemExit(f"backends disagree on N={n} C={c} HW={hw} k={k}")
    return "numba and numpy kernels agree bitwise"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(check_agreement())
    print(bench.format_timings(bench.bench_kernels(repeat=args.repeat), "im2col+col2im"))
    print(bench.format_timings(bench.bench_aw(repeat=args.repeat), "aw_conv2d loop vs grouped"))


if __name__ == "__main__":
    main()
