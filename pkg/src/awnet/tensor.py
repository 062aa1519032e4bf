"""Dense row-major tensors.

A tensor is a C-contiguous ``numpy.ndarray`` of dtype float32 or float64.
The helpers here add the explicit shape checks the rest of the package
relies on; they never return views that alias their inputs.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str) and dtype in DTYPES:
        return np.dtype(DTYPES[dtype])
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise TypeError(f"unsupported dtype {dt}; use f32 or f64")
    return dt


def as_tensor(data, dtype="f64") -> np.ndarray:
    arr = np.array(data, dtype=resolve_dtype(dtype), order="C", copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if 0 in arr.shape:
        raise ShapeError(f"zero-sized extent in shape {arr.shape}")
    return arr


def broadcast_shape(a: Sequence[int], b: Sequence[int]) -> tuple[int, ...]:
    """Trailing-aligned broadcast of two shapes."""
    out = []
    for i in range(1, max(len(a), len(b)) + 1):
        da = a[-i] if i <= len(a) else 1
        db = b[-i] if i <= len(b) else 1
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"shapes {tuple(a)} and {tuple(b)} do not broadcast")
        out.append(max(da, db))
    return tuple(reversed(out))


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    broadcast_shape(a.shape, b.shape)
    return np.ascontiguousarray(a * b)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    broadcast_shape(a.shape, b.shape)
    return np.ascontiguousarray(a + b)


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    broadcast_shape(a.shape, b.shape)
    return np.ascontiguousarray(a - b)


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * a.dtype.type(s)


def fill(shape: Sequence[int], value: float, dtype="f64") -> np.ndarray:
    if any(int(d) < 1 for d in shape):
        raise ShapeError(f"invalid shape {tuple(shape)}")
    return np.full(tuple(shape), value, dtype=resolve_dtype(dtype))


def reshape(a: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    new_shape = tuple(int(d) for d in new_shape)
    if int(np.prod(new_shape)) != a.size or any(d < 1 for d in new_shape):
        raise ShapeError(f"cannot reshape {a.shape} to {new_shape}")
    return np.ascontiguousarray(a).reshape(new_shape).copy()


def unsqueeze(a: np.ndarray, dim: int) -> np.ndarray:
    if not 0 <= dim <= a.ndim:
        raise ShapeError(f"unsqueeze dim {dim} out of range for rank {a.ndim}")
    return np.expand_dims(a, dim).copy()


def expand(a: np.ndarray, target_shape: Sequence[int]) -> np.ndarray:
    """Replicate size-1 dims up to ``target_shape`` (same rank required)."""
    target_shape = tuple(int(d) for d in target_shape)
    if len(target_shape) != a.ndim:
        raise ShapeError(f"expand needs rank {a.ndim}, got target {target_shape}")
    for src, dst in zip(a.shape, target_shape):
        if src != dst and src != 1:
            raise ShapeError(f"cannot expand {a.shape} to {target_shape}")
    return np.ascontiguousarray(np.broadcast_to(a, target_shape))


def reduce_mean(a: np.ndarray, dims: Iterable[int], keepdims=False) -> np.ndarray:
    dims = tuple(dims)
    for d in dims:
        if not -a.ndim <= d < a.ndim:
            raise ShapeError(f"reduce dim {d} out of range for rank {a.ndim}")
    dims = tuple(sorted({d % a.ndim for d in dims}))
    out = a.mean(axis=dims, keepdims=True)
    # second pass adds back the rounding residual of the first one; this makes
    # the mean of replicated values exact
    with np.errstate(invalid="ignore"):
        corr = (a - out).mean(axis=dims, keepdims=True)
    out = np.where(np.isfinite(corr), out + corr, out)
    if not keepdims:
        out = out.reshape([n for i, n in enumerate(a.shape) if i not in dims])
    return as_tensor(out, a.dtype)


def transpose2d(a: np.ndarray) -> np.ndarray:
    if a.ndim != 2:
        raise ShapeError(f"transpose2d expects rank 2, got {a.shape}")
    return np.ascontiguousarray(a.T)
