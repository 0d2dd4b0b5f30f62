"""Datasets: MNIST IDX files, synthetic patterns, and stratified splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    n_classes: int
    provenance: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, idx, provenance: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], self.n_classes,
                       provenance if provenance is not None else self.provenance)

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))), f"{self.provenance}[:{n}]")

    def padded(self, side: int) -> "Dataset":
        """Zero-pad images symmetrically to ``side`` x ``side``."""
        h, w = self.image_shape
        if side < h or side < w:
            raise ValueError(f"cannot pad {h}x{w} images down to {side}")
        top, left = (side - h) // 2, (side - w) // 2
        out = np.zeros((len(self), side, side), dtype=self.images.dtype)
        out[:, top:top + h, left:left + w] = self.images
        return Dataset(out, self.labels, self.n_classes, f"{self.provenance}+pad{side}")


def _open_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    raw = _open_bytes(path)
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: truncated header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08:
        raise IDXFormatError(f"{path}: bad magic 0x{int.from_bytes(raw[:4], 'big'):08x}")
    if len(raw) < 4 + 4 * ndim:
        raise IDXFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    n = int(np.prod(dims)) if dims else 0
    body = raw[4 + 4 * ndim:]
    if len(body) < n:
        raise IDXFormatError(f"{path}: truncated data ({len(body)} of {n} bytes)")
    if len(body) > n:
        raise IDXFormatError(f"{path}: {len(body) - n} trailing bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def write_idx(path, array, compress: bool = False) -> Path:
    """Write a uint8 array as IDX (optionally gzip-compressed)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise TypeError(f"IDX writer supports uint8 only, got {arr.dtype}")
    payload = struct.pack(">HBB", 0, 0x08, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    payload += arr.tobytes()
    if compress:
        payload = gzip.compress(payload, mtime=0)
    path = Path(path)
    path.write_bytes(payload)
    return path


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Load an IDX image/label pair, scaling pixels to [0, 1]."""
    for p, want, what in ((images_path, IDX_IMAGES_MAGIC, "images"),
                          (labels_path, IDX_LABELS_MAGIC, "labels")):
        head = _open_bytes(p)[:4]
        magic = int.from_bytes(head, "big") if len(head) == 4 else None
        if magic != want:
            found = "none" if magic is None else f"0x{magic:08x}"
            raise IDXFormatError(f"{p}: {what} magic {found}, expected 0x{want:08x}")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if len(images) != len(labels):
        raise IDXFormatError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    k = n_classes if n_classes is not None else (int(labels.max()) + 1 if len(labels) else 0)
    return Dataset((images / np.float32(255)).astype(np.float32), labels.astype(np.int64), k,
                   f"idx:{Path(images_path).name}")


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist(directory, split: str = "train") -> Dataset:
    """Load the canonical MNIST files from ``directory`` (plain or .gz)."""
    directory = Path(directory)
    prefix = {"train": "train", "test": "t10k"}[split]
    ds = load_idx(_find(directory, f"{prefix}-images-idx3-ubyte"),
                  _find(directory, f"{prefix}-labels-idx1-ubyte"), n_classes=10)
    ds.provenance = f"mnist:{split}"
    return ds


def synthetic_blobs(classes: int = 2, per_class: int = 100, side: int = 16,
                    seed: int = 0, noise: float = 0.05) -> Dataset:
    """Class-conditioned bar-and-blob images that a small MLP separates.

    Class ``c`` draws a bar at angle ``pi * c / classes`` and a Gaussian blob
    on a ring at angle ``2 * pi * c / classes``; each sample is jittered by up
    to one pixel, scaled in brightness and overlaid with clipped noise.
    """
    if side < 8:
        raise ValueError("side must be at least 8")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    centre = (side - 1) / 2
    radius = side / 4
    images = np.empty((classes * per_class, side, side), dtype=np.float32)
    labels = np.repeat(np.arange(classes), per_class)
    for i, c in enumerate(labels):
        dy, dx = rng.integers(-1, 2, size=2)
        cy, cx = centre + dy, centre + dx
        theta = np.pi * c / classes
        dist = np.abs((xx - cx) * np.sin(theta) - (yy - cy) * np.cos(theta))
        along = np.abs((xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta))
        bar = np.exp(-dist ** 2 / 1.5) * (along < side * 0.35)
        phi = 2 * np.pi * c / classes
        by, bx = cy + radius * np.sin(phi), cx + radius * np.cos(phi)
        blob = np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * (side / 10) ** 2))
        img = rng.uniform(0.7, 1.0) * np.maximum(bar, blob)
        img = img + noise * rng.standard_normal((side, side))
        images[i] = np.clip(img, 0, 1)
    order = rng.permutation(len(labels))
    return Dataset(images[order], labels[order].astype(np.int64), classes,
                   f"synthetic:{classes}x{per_class}@{side}:seed{seed}")


def stratified_split(dataset: Dataset, fraction: float, seed: int = 0):
    """Per-class shuffled split into (train, test) with ``fraction`` in train."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie strictly between 0 and 1 (got {fraction}); "
                         "both splits must be non-empty")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < 2:
            raise ValueError(f"class {c} has {len(idx)} sample; need at least 2 to split")
        idx = rng.permutation(idx)
        k = min(max(int(round(fraction * len(idx))), 1), len(idx) - 1)
        train_idx.append(idx[:k])
        test_idx.append(idx[k:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return (dataset.subset(tr, f"{dataset.provenance}/train"),
            dataset.subset(te, f"{dataset.provenance}/test"))
