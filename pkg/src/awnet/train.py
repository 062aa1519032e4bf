"""Desk-scale training: SGD with momentum, step decay, evaluation, checkpoints.

Checkpoint layout (all integers little-endian)::

    b"AWCK"                       magic
    u32  version                  currently 1
    u32  len, bytes               config echo, key=value lines (UTF-8)
    u32  epoch
    u32  len, bytes               RNG state, JSON (UTF-8)
    u32  count                    number of tensors
    count x:
        u16 len, bytes            tensor name (UTF-8)
        u8  dtype                 0 = f32, 1 = f64
        u8  ndim
        u32 x ndim                dims
        raw data                  row-major little-endian IEEE
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import Parameter, Tape
from .data import Dataset, batches, load_source
from .errors import DivergenceError, FormatError, UsageError
from .models import Model, build_arch, instantiate
from .nn_ops import softmax_cross_entropy
from .tensor import resolve_dtype

log = logging.getLogger(__name__)

MAGIC = b"AWCK"
VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}
MIN_TRAIN_BATCH = 8


@dataclass
class TrainConfig:
    arch: str = "tiny"
    attention: str = "none"
    data: str = "shapes"
    data_path: str | None = None
    val_path: str | None = None
    n_train: int = 1500
    n_val: int = 300
    classes: int = 3
    hw: int = 32
    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: str = ""  # comma list; empty = 50% and 75% of epochs
    lr_decay_factor: float = 0.1
    dtype: str = "f32"
    augment: str = "none"
    checkpoint: str | None = None
    history: str | None = None

    def __post_init__(self):
        if not self.lr >= 0:
            raise UsageError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise UsageError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.batch_size < MIN_TRAIN_BATCH:
            raise UsageError(f"batch_size must be >= {MIN_TRAIN_BATCH} (batch-stat BN)")
        resolve_dtype(self.dtype)

    def decay_epochs(self) -> list[int]:
        if self.lr_decay_epochs.strip():
            return sorted(int(e) for e in self.lr_decay_epochs.split(","))
        return [int(self.epochs * 0.5), int(self.epochs * 0.75)]

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.decay_epochs() if epoch >= e)
        return self.lr * self.lr_decay_factor ** drops

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={'' if v is None else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        base = base or cls.__new__(cls)
        current = {f.name: getattr(base, f.name, f.default) for f in fields(cls)}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise UsageError(f"unknown config key {key!r}")
            current[key] = _coerce(raw, types[key])
        return cls(**current)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        return cls.from_mapping(parse_kv(text), cls())

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(raw, typ):
    if not isinstance(raw, str):
        return raw
    optional = "None" in str(typ)
    if optional and raw == "":
        return None
    base = str(typ).split("|")[0].strip()
    try:
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
    except ValueError:
        raise UsageError(f"cannot parse {raw!r} as {base}") from None
    return raw


# ---------------------------------------------------------------------------

def sgd_step(params, grads, state: dict, lr: float, momentum: float, weight_decay: float):
    """v <- momentum*v + g + wd*p; p <- p - lr*v (wd only on params with ``decay``)."""
    for p, g in zip(params, grads):
        dt = p.value.dtype.type
        d = g + dt(weight_decay) * p.value if (weight_decay and p.decay) else g
        v = state.get(id(p))
        if v is None:
            v = state[id(p)] = np.zeros_like(p.value)
        v *= dt(momentum)
        v += d
        p.value -= dt(lr) * v


def build_model(cfg: TrainConfig) -> Model:
    graph = build_arch(cfg.arch, cfg.attention, cfg.classes)
    return instantiate(graph, seed=cfg.seed, dtype=resolve_dtype(cfg.dtype))


def load_data(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    if cfg.data == "shapes":
        train = load_source("shapes", "train", cfg.seed, cfg.n_train, hw=cfg.hw, classes=cfg.classes)
        val = load_source("shapes", "val", cfg.seed, cfg.n_val, hw=cfg.hw, classes=cfg.classes)
        return train, val
    train = load_source(cfg.data, "train", path=cfg.data_path)
    val = load_source(cfg.data, "val", path=cfg.val_path or cfg.data_path)
    return train, val


def predict(model: Model, images: np.ndarray) -> np.ndarray:
    tape = Tape(retain_grads=False)
    out = model(tape.constant(images)).value
    tape.release()
    return out


def evaluate(model: Model, ds: Dataset, batch_size: int = 200, dtype=None) -> float:
    """Top-1 accuracy with BN in eval mode; the model's mode is restored."""
    was_training = model.training
    model.eval()
    dtype = dtype or model.parameters()[0].value.dtype
    correct = 0
    try:
        for b in batches(ds, batch_size, dtype=dtype):
            correct += int((predict(model, b.images).argmax(axis=1) == b.labels).sum())
    finally:
        model.train(was_training)
    return correct / len(ds)


def fit(cfg: TrainConfig, model: Model | None = None, data=None, on_epoch=None) -> list[dict]:
    """Train ``cfg.epochs`` epochs; returns one record per epoch.

    Single-threaded numerics (``AWK_THREADS`` threads, default 1) make the
    history a pure function of the config.
    """
    threads = int(os.environ.get("AWK_THREADS", "1"))
    with threadpool_limits(limits=threads):
        return _fit(cfg, model, data, on_epoch)


def _fit(cfg, model, data, on_epoch):
    model = model or build_model(cfg)
    train, val = data or load_data(cfg)
    dtype = resolve_dtype(cfg.dtype)
    params = model.parameters()
    state: dict = {}
    history = []
    rng = np.random.default_rng(cfg.seed)
    hist_file = open(cfg.history, "w") if cfg.history else None
    try:
        for epoch in range(cfg.epochs):
            model.train()
            lr = cfg.lr_at(epoch)
            total, seen = 0.0, 0
            shuffle_seed = int(rng.integers(2**31))
            for b in batches(train, cfg.batch_size, shuffle_seed, cfg.augment, epoch, dtype):
                if len(b) < MIN_TRAIN_BATCH:
                    continue
                tape = Tape(retain_grads=False)
                loss = softmax_cross_entropy(model(tape.constant(b.images)), b.labels)
                value = float(loss.value[0])
                if not math.isfinite(value):
                    raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, "
                                          f"after {seen} samples (lr={lr})")
                for p in params:
                    p.zero_grad()
                tape.backward(loss)
                tape.release()
                sgd_step(params, [p.grad for p in params], state, lr, cfg.momentum,
                         cfg.weight_decay)
                total += value * len(b)
                seen += len(b)
            acc = evaluate(model, val, dtype=dtype)
            rec = {"epoch": epoch, "train_loss": total / max(seen, 1), "val_acc": acc, "lr": lr}
            history.append(rec)
            log.info("epoch %d loss %.4f val_acc %.4f", epoch, rec["train_loss"], acc)
            if hist_file:
                hist_file.write(json.dumps(rec) + "\n")
                hist_file.flush()
            if cfg.checkpoint:
                save_checkpoint(cfg.checkpoint, model, cfg, epoch + 1, rng.bit_generator.state)
            if on_epoch:
                on_epoch(rec)
    finally:
        if hist_file:
            hist_file.close()
    return history


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    config: dict
    epoch: int
    rng_state: dict
    tensors: dict

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_mapping(self.config, TrainConfig())


def encode_checkpoint(tensors: dict, config_text: str, epoch: int, rng_state) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    cfg = config_text.encode()
    out += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", epoch)]
    rs = json.dumps(rng_state or {}, sort_keys=True).encode()
    out += [struct.pack("<I", len(rs)), rs, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_TAGS:
            raise UsageError(f"{name}: cannot store dtype {arr.dtype}")
        nb = name.encode()
        out += [struct.pack("<H", len(nb)), nb, struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim),
                struct.pack(f"<{arr.ndim}I", *arr.shape), arr.astype(dt).tobytes(order="C")]
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated checkpoint while reading {what}: need {n} bytes, "
                              f"{len(self.raw) - self.pos} left", offset=self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic; not an AWCK checkpoint", offset=0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    (n,) = r.unpack("<I", "config length")
    text = r.take(n, "config").decode()
    (epoch,) = r.unpack("<I", "epoch")
    (n,) = r.unpack("<I", "rng state length")
    rng_state = json.loads(r.take(n, "rng state").decode())
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H", "name length")
        name = r.take(n, "name").decode()
        at = r.pos
        tag, ndim = r.unpack("<BB", f"{name} header")
        if tag not in _TAG_DTYPES:
            raise FormatError(f"{name}: unknown dtype tag {tag}", offset=at)
        dims = r.unpack(f"<{ndim}I", f"{name} dims")
        dt = _TAG_DTYPES[tag]
        size = int(np.prod(dims)) * dt.itemsize
        tensors[name] = np.frombuffer(r.take(size, f"{name} data"), dtype=dt).reshape(dims).copy()
    if r.pos != len(raw):
        raise FormatError(f"{len(raw) - r.pos} trailing bytes after last tensor", offset=r.pos)
    return Checkpoint(parse_kv(text), epoch, rng_state, tensors)


def save_checkpoint(path, model: Model, cfg: TrainConfig, epoch: int, rng_state=None):
    raw = encode_checkpoint(model.state_dict(), cfg.to_text(), epoch, rng_state)
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(raw)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def model_from_checkpoint(ck: Checkpoint) -> Model:
    model = build_model(ck.train_config())
    model.load_state_dict(ck.tensors)
    return model
