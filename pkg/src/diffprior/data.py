"""Toy 2-D densities, IDX image loading and dataset splits."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DatasetError

TOY_KINDS = ("eight_gaussians", "two_moons", "checkerboard")
IDX_UBYTE_3D = 0x00000803


@dataclass(frozen=True)
class Dataset:
    name: str
    data: np.ndarray  # normalized, [N, d]
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    shift: np.ndarray  # raw = data * scale + shift
    scale: np.ndarray
    labels: Optional[np.ndarray] = None
    image_shape: Optional[tuple] = None

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def split(self, name: str) -> np.ndarray:
        try:
            idx = {"train": self.train_idx, "val": self.val_idx, "validation": self.val_idx, "test": self.test_idx}[name]
        except KeyError:
            raise DatasetError(f"unknown split {name!r}") from None
        return self.data[idx]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.shift

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.shift) / self.scale


def split_indices(n: int, rng: np.random.Generator, val_fraction: float = 0.1, test_fraction: float = 0.1):
    if not (0.0 <= val_fraction < 1.0 and 0.0 <= test_fraction < 1.0 and val_fraction + test_fraction < 1.0):
        raise DatasetError(f"invalid split fractions ({val_fraction}, {test_fraction})")
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    n_test = int(round(n * test_fraction))
    n_train = n - n_val - n_test
    return (
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
    )


def _eight_gaussians(n, rng):
    labels = rng.integers(0, 8, size=n)
    angles = labels * (np.pi / 4.0)
    centers = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers + 0.2 * rng.standard_normal((n, 2)), labels


def _two_moons(n, rng):
    labels = rng.integers(0, 2, size=n)
    theta = rng.uniform(0.0, np.pi, size=n)
    upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
    x = np.where(labels[:, None] == 0, upper, lower)
    return x + 0.1 * rng.standard_normal((n, 2)), labels


def _checkerboard(n, rng):
    x1 = rng.uniform(-2.0, 2.0, size=n)
    x2 = rng.uniform(0.0, 1.0, size=n) - 2.0 * rng.integers(0, 2, size=n)
    x2 = x2 + np.floor(x1) % 2
    labels = (np.floor(x1) + np.floor(x2)).astype(int) % 2
    return np.stack([x1, x2], axis=1), labels


_TOY = {"eight_gaussians": _eight_gaussians, "two_moons": _two_moons, "checkerboard": _checkerboard}


def make_toy_dataset(kind: str, n: int, seed: int = 0, val_fraction: float = 0.1, test_fraction: float = 0.1) -> Dataset:
    """``n`` points from a named 2-D density, standardized per dimension."""
    if kind not in _TOY:
        raise DatasetError(f"unknown toy dataset {kind!r}; choose from {', '.join(TOY_KINDS)}")
    if n < 10:
        raise DatasetError(f"toy datasets need n >= 10, got {n}")
    rng = np.random.default_rng(seed)
    raw, labels = _TOY[kind](n, rng)
    shift = raw.mean(axis=0)
    scale = raw.std(axis=0)
    train, val, test = split_indices(n, rng, val_fraction, test_fraction)
    return Dataset(kind, (raw - shift) / scale, train, val, test, shift, scale, labels)


def parse_idx(buf: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX tensor of rank 3 to a uint8 array."""
    if len(buf) < 4:
        raise DatasetError("IDX file is truncated before the magic number")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != IDX_UBYTE_3D:
        raise DatasetError(f"bad IDX magic 0x{magic:08x}, expected 0x{IDX_UBYTE_3D:08x}")
    if len(buf) < 16:
        raise DatasetError("IDX file is truncated inside the header")
    dims = struct.unpack(">III", buf[4:16])
    size = int(np.prod(dims, dtype=np.int64))
    payload = buf[16:]
    if len(payload) < size:
        raise DatasetError(f"IDX payload truncated: expected {size} bytes, found {len(payload)}")
    if len(payload) > size:
        raise DatasetError(f"IDX payload has {len(payload) - size} trailing bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images)
    if images.ndim != 3:
        raise DatasetError(f"IDX writer expects [N, rows, cols], got {images.shape}")
    header = struct.pack(">IIII", IDX_UBYTE_3D, *images.shape)
    Path(path).write_bytes(header + images.astype(np.uint8).tobytes())


def load_idx_images(
    path,
    binarize_threshold: Optional[float] = None,
    seed: int = 0,
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
) -> Dataset:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read IDX file {path}: {exc}") from exc
    images = parse_idx(buf)
    n, rows, cols = images.shape
    x = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    if binarize_threshold is not None:
        x = (x > binarize_threshold).astype(np.float64)
    d = rows * cols
    train, val, test = split_indices(n, np.random.default_rng(seed), val_fraction, test_fraction)
    return Dataset(
        f"idx:{path}", x, train, val, test, np.zeros(d), np.ones(d), image_shape=(rows, cols)
    )


def resolve_dataset(
    spec: str,
    n: int = 2000,
    seed: int = 0,
    binarize_threshold: Optional[float] = None,
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
) -> Dataset:
    """``spec`` is a toy kind or ``idx:<path>``."""
    if spec.startswith("idx:"):
        path = spec[4:]
        if not Path(path).exists():
            raise DatasetError(f"dataset file {path} does not exist")
        return load_idx_images(path, binarize_threshold, seed, val_fraction, test_fraction)
    return make_toy_dataset(spec, n, seed, val_fraction, test_fraction)


def export_csv(x: np.ndarray, path) -> None:
    x = np.atleast_2d(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(x.shape[1])])
        for row in x:
            w.writerow([repr(float(v)) for v in row])
