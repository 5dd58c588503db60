"""Datasets: synthetic image generation, CIFAR-10 binary ingestion, binary
dataset files, and adversarial set materialization.

The synthetic classes are distinct oriented bar/blob/corner patterns on a
small grayscale grid plus seeded uniform noise, built to be linearly
separable so a probe can certify any generated split.  Dataset files
round-trip bit-exactly: a small header followed by little-endian float64
features and 16-bit labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import AttackSpec, generate
from .model import Classifier
from .rng import stream

DATASET_MAGIC = b"DFDS"
DATASET_VERSION = 1
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 pixel bytes


class DataFormatError(ValueError):
    """Malformed dataset or CIFAR batch file."""


@dataclass
class Dataset:
    name: str
    num_classes: int
    feature_shape: tuple[int, ...]
    x: np.ndarray  # (count, features) float64 in [0, 1]
    y: np.ndarray  # (count,) integer labels
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise DataFormatError(
                f"{self.name}: features {self.x.shape} do not match "
                f"labels {self.y.shape}")
        if self.x.shape[1] != int(np.prod(self.feature_shape)):
            raise DataFormatError(
                f"{self.name}: feature dim {self.x.shape[1]} != "
                f"prod{self.feature_shape}")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def image_hw(self) -> tuple[int, int]:
        if len(self.feature_shape) != 2:
            raise DataFormatError(
                f"{self.name}: feature shape {self.feature_shape} is not a "
                f"single-channel image")
        return self.feature_shape  # type: ignore[return-value]


# ------------------------------------------------------------ synthetic data

def _base_pattern(kind: int, hw: tuple[int, int]) -> np.ndarray:
    """One of ten distinct grayscale patterns on an all-background canvas."""
    h, w = hw
    lo, hi = 0.15, 0.85
    img = np.full((h, w), lo)
    if kind == 0:      # upper horizontal bar
        img[h // 4, :] = hi
    elif kind == 1:    # lower horizontal bar
        img[(3 * h) // 4, :] = hi
    elif kind == 2:    # left vertical bar
        img[:, w // 4] = hi
    elif kind == 3:    # right vertical bar
        img[:, (3 * w) // 4] = hi
    elif kind == 4:    # main diagonal
        np.fill_diagonal(img, hi)
    elif kind == 5:    # anti-diagonal
        np.fill_diagonal(np.fliplr(img), hi)
    elif kind == 6:    # top-left corner block
        img[:h // 3 + 1, :w // 3 + 1] = hi
    elif kind == 7:    # bottom-right corner block
        img[-(h // 3 + 1):, -(w // 3 + 1):] = hi
    elif kind == 8:    # center block
        img[h // 2 - 1:h // 2 + 1, w // 2 - 1:w // 2 + 1] = hi
    else:              # border frame
        img[0, :] = img[-1, :] = hi
        img[:, 0] = img[:, -1] = hi
    return img


def class_template(label: int, hw: tuple[int, int]) -> np.ndarray:
    """Flattened template for ``label``; labels past ten shift the base set."""
    base = _base_pattern(label % 10, hw)
    roll = label // 10
    if roll:
        base = np.roll(base, roll, axis=1)
    return base.ravel()


def generate_synthetic(num_classes: int, per_class: int, seed: int,
                       hw: tuple[int, int] = (8, 8), noise: float = 0.1,
                       split: str = "train", name: str = "synthetic") -> Dataset:
    """Exactly ``per_class`` noisy copies of each class template, in [0, 1]."""
    if num_classes < 2:
        raise ValueError(f"need at least two classes, got {num_classes}")
    rng = stream(seed, "synthetic", 0 if split == "train" else 1)
    d = hw[0] * hw[1]
    x = np.empty((num_classes * per_class, d))
    y = np.empty(num_classes * per_class, dtype=np.int64)
    row = 0
    for label in range(num_classes):
        template = class_template(label, hw)
        for _ in range(per_class):
            x[row] = np.clip(template + rng.uniform(-noise, noise, size=d), 0, 1)
            y[row] = label
            row += 1
    return Dataset(name, num_classes, hw, x, y, split=split, seed=seed)


# ------------------------------------------------------------- dataset files

def save_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<ii", DATASET_VERSION, len(ds.feature_shape)))
        fh.write(struct.pack(f"<{len(ds.feature_shape)}i", *ds.feature_shape))
        fh.write(struct.pack("<iiQ", ds.num_classes, len(ds), ds.seed))
        fh.write(np.ascontiguousarray(ds.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.y, dtype="<u2").tobytes())


def load_dataset(path, name: str | None = None, split: str = "train") -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != DATASET_MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, ndim = struct.unpack_from("<ii", raw, 4)
    if version != DATASET_VERSION:
        raise DataFormatError(f"{path}: dataset version {version}")
    shape = struct.unpack_from(f"<{ndim}i", raw, 12)
    offset = 12 + 4 * ndim
    num_classes, count, seed = struct.unpack_from("<iiQ", raw, offset)
    offset += 16
    d = int(np.prod(shape))
    x = np.frombuffer(raw, dtype="<f8", count=count * d, offset=offset)
    offset += 8 * count * d
    y = np.frombuffer(raw, dtype="<u2", count=count, offset=offset)
    offset += 2 * count
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return Dataset(name or path.stem, num_classes, tuple(shape),
                   x.reshape(count, d).copy(), y.astype(np.int64), split=split,
                   seed=seed)


# ------------------------------------------------------------ CIFAR-10 batch

def load_cifar10_batch(path) -> Dataset:
    """Parse a CIFAR-10 binary batch: 3073-byte records of one label byte
    plus 3072 pixel bytes (R, G, B planes row-major), scaled to [0, 1]."""
    path = Path(path)
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES != 0:
        complete = (raw.size // CIFAR_RECORD_BYTES) * CIFAR_RECORD_BYTES
        raise DataFormatError(
            f"{path}: truncated record at byte offset {complete} "
            f"({raw.size - complete} stray bytes)")
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DataFormatError(
            f"{path}: label byte {labels[bad[0]]} > 9 at byte offset "
            f"{bad[0] * CIFAR_RECORD_BYTES}")
    x = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(path.stem, 10, (3, 32, 32), x, labels.astype(np.int64),
                   split="train", seed=0)


# ----------------------------------------------------- adversarial data sets

def materialize_attack_set(spec: AttackSpec, victim: Classifier, base: Dataset,
                           seed: int, name: str, batch: int = 256) -> Dataset:
    """Fixed adversarial copy of ``base`` attacking the frozen ``victim``."""
    if not victim.frozen:
        raise ValueError("attack victim must be a frozen snapshot")
    out = np.empty_like(base.x)
    for start in range(0, len(base), batch):
        stop = min(start + batch, len(base))
        out[start:stop] = generate(
            spec, victim, base.x[start:stop], base.y[start:stop],
            rng=stream(seed, "attack-start", start))
    return Dataset(name, base.num_classes, base.feature_shape, out,
                   base.y.copy(), split=base.split, seed=seed)
