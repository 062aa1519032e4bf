"""Datasets: CIFAR binary archives and a procedural shapes generator.

CIFAR record layout (one record per image, no header):

* CIFAR-10:  1 label byte, then 3072 pixel bytes (1024 R, 1024 G, 1024 B,
  each plane row-major 32x32) -- 3073 bytes.
* CIFAR-100: 1 coarse-label byte, 1 fine-label byte, then the same 3072
  pixel bytes -- 3074 bytes.  The fine label is the class label.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError

CIFAR_PIXELS = 3 * 32 * 32
CIFAR_LAYOUT = {"cifar10": (1, 10), "cifar100": (2, 100)}

NORMALIZATION = {
    "cifar10": ((0.4914, 0.4822, 0.4465), (0.2470, 0.2435, 0.2616)),
    "cifar100": ((0.5071, 0.4865, 0.4409), (0.2673, 0.2564, 0.2762)),
    "shapes": ((0.5, 0.5, 0.5), (0.25, 0.25, 0.25)),
}

SHAPE_CLASSES = ("rectangle", "triangle", "ellipse")


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    classes: int
    kind: str
    coarse: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        coarse = None if self.coarse is None else self.coarse[idx]
        return Dataset(self.images[idx], self.labels[idx], self.classes, self.kind, coarse)


@dataclass
class LabeledBatch:
    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def decode_cifar(raw: bytes, kind: str = "cifar10") -> Dataset:
    if kind not in CIFAR_LAYOUT:
        raise ValueError(f"kind must be cifar10 or cifar100, got {kind!r}")
    nlabels, classes = CIFAR_LAYOUT[kind]
    rec = nlabels + CIFAR_PIXELS
    if len(raw) == 0 or len(raw) % rec:
        whole = len(raw) // rec * rec
        raise FormatError(f"{kind} file of {len(raw)} bytes is not a whole number of "
                          f"{rec}-byte records", offset=whole)
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    fine = arr[:, nlabels - 1].astype(np.int64)
    bad = np.flatnonzero(fine >= classes)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"label {fine[i]} >= {classes} in record {i}", offset=i * rec + nlabels - 1)
    coarse = None
    if nlabels == 2:
        coarse = arr[:, 0].astype(np.int64)
        bad = np.flatnonzero(coarse >= 20)
        if bad.size:
            i = int(bad[0])
            raise FormatError(f"coarse label {coarse[i]} >= 20 in record {i}", offset=i * rec)
    images = arr[:, nlabels:].reshape(-1, 3, 32, 32).astype(np.float32) / np.float32(255)
    return Dataset(images, fine, classes, kind, coarse)


def read_cifar(path, kind: str = "cifar10") -> Dataset:
    return decode_cifar(Path(path).read_bytes(), kind)


def encode_cifar(ds: Dataset, kind: str | None = None) -> bytes:
    """Inverse of :func:`decode_cifar` (pixels are rounded to the nearest byte)."""
    kind = kind or (ds.kind if ds.kind in CIFAR_LAYOUT else "cifar10")
    nlabels, classes = CIFAR_LAYOUT[kind]
    if ds.images.shape[1:] != (3, 32, 32):
        raise ValueError(f"CIFAR records hold 3x32x32 images, got {ds.images.shape[1:]}")
    if ds.labels.max(initial=0) >= classes:
        raise ValueError(f"labels exceed {classes} classes")
    n = len(ds)
    out = np.empty((n, nlabels + CIFAR_PIXELS), dtype=np.uint8)
    if nlabels == 2:
        out[:, 0] = ds.coarse if ds.coarse is not None else 0
    out[:, nlabels - 1] = ds.labels
    pix = np.clip(np.rint(ds.images.astype(np.float64) * 255), 0, 255)
    out[:, nlabels:] = pix.reshape(n, -1).astype(np.uint8)
    return out.tobytes()


def _draw(rng, label, hw):
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64) + 0.5
    cy, cx = rng.uniform(0.4 * hw, 0.6 * hw, size=2)
    if label == 0:
        a, b = rng.uniform(0.2 * hw, 0.34 * hw, size=2)
        return (np.abs(xx - cx) <= a) & (np.abs(yy - cy) <= b)
    if label == 2:
        a, b = rng.uniform(0.24 * hw, 0.38 * hw, size=2)
        return ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
    r = rng.uniform(0.3 * hw, 0.4 * hw)
    th = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
    vx, vy = cx + r * np.cos(th), cy + r * np.sin(th)
    signs = []
    for i in range(3):
        j = (i + 1) % 3
        signs.append((vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i]))
    s = np.stack(signs)
    return np.all(s >= 0, axis=0) | np.all(s <= 0, axis=0)


def gen_shapes(seed: int, n: int, classes: int = 3, hw: int = 32, noise: float = 0.05) -> Dataset:
    """One rectangle, triangle or ellipse per image on a noisy uniform background.

    Labels follow ``SHAPE_CLASSES`` order and are balanced: every class gets
    ``n // classes`` images and the remainder goes to the lowest labels.
    """
    if not 1 <= classes <= len(SHAPE_CLASSES):
        raise ValueError(f"classes must be in [1, {len(SHAPE_CLASSES)}]")
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    images = np.empty((n, 3, hw, hw), dtype=np.float32)
    for i, lab in enumerate(labels):
        bg = rng.uniform(0.0, 1.0, size=3)
        fg = rng.uniform(0.0, 1.0, size=3)
        while np.max(np.abs(fg - bg)) < 0.4:
            fg = rng.uniform(0.0, 1.0, size=3)
        mask = _draw(rng, lab, hw)
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        img = img + rng.normal(0.0, noise, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels, classes, "shapes")


def load_source(kind: str, split: str = "train", seed: int = 0, n: int = 1500, path=None,
                hw: int = 32, classes: int = 3) -> Dataset:
    if split not in ("train", "val"):
        raise ValueError(f"split must be train or val, got {split!r}")
    if kind == "shapes":
        # val draws from an independent stream of the same seed
        s = int(np.random.SeedSequence([seed, 0 if split == "train" else 1]).generate_state(1)[0])
        return gen_shapes(s, n, classes, hw)
    if kind in CIFAR_LAYOUT:
        if path is None:
            raise ValueError(f"{kind} needs a path to a binary archive")
        return read_cifar(path, kind)
    raise ValueError(f"unknown dataset kind {kind!r}")


def hflip(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(images[..., ::-1])


def normalize(images: np.ndarray, kind: str, dtype=np.float32) -> np.ndarray:
    mean, std = NORMALIZATION.get(kind, NORMALIZATION["shapes"])
    m = np.asarray(mean, dtype=dtype).reshape(1, 3, 1, 1)
    s = np.asarray(std, dtype=dtype).reshape(1, 3, 1, 1)
    return ((images.astype(dtype) - m) / s).astype(dtype)


def _augment(images, rng, mode):
    out = images.copy()
    if mode in ("flip", "flip+crop", "both"):
        flip = rng.random(len(out)) < 0.5
        out[flip] = out[flip][..., ::-1]
    if mode in ("crop", "flip+crop", "both"):
        n, _, h, w = out.shape
        padded = np.pad(out, ((0, 0), (0, 0), (4, 4), (4, 4)))
        offs = rng.integers(0, 9, size=(n, 2))
        for i, (dy, dx) in enumerate(offs):
            out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    return out


AUGMENTS = ("none", "flip", "crop", "flip+crop", "both")


def batches(ds: Dataset, batch_size: int, shuffle_seed: int | None = None, augment: str = "none",
            epoch: int = 0, dtype=np.float32) -> Iterator[LabeledBatch]:
    """Normalized batches; the final partial batch is kept.

    Order and augmentation are a pure function of (shuffle_seed, epoch).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if augment not in AUGMENTS:
        raise ValueError(f"augment must be one of {AUGMENTS}")
    n = len(ds)
    order = np.arange(n)
    aug_rng = None
    if shuffle_seed is not None:
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(n)
        aug_rng = np.random.default_rng([shuffle_seed, epoch, 1])
    elif augment != "none":
        aug_rng = np.random.default_rng([0, epoch, 1])
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        imgs = ds.images[idx]
        if augment != "none":
            imgs = _augment(imgs, aug_rng, augment)
        yield LabeledBatch(normalize(imgs, ds.kind, dtype), ds.labels[idx].copy())
