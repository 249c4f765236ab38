"""Dataset containers, MNIST IDX ingestion and synthetic blobs."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    """Raised for malformed IDX content; ``offset`` is the offending byte."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split_tag: str = "train"

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] == 0 or features.shape[1] == 0:
            raise ValueError(f"features must be a non-empty N x D matrix, got {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        if self.split_tag not in ("train", "test"):
            raise ValueError(f"unknown split_tag {self.split_tag!r}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices, split_tag=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes,
                       split_tag or self.split_tag)


def _read_header(buf, expected_magic, ndim, what):
    if len(buf) < 4:
        raise IdxFormatError(f"truncated {what} file: missing magic number", len(buf))
    magic = struct.unpack_from(">I", buf, 0)[0]
    if magic != expected_magic:
        raise IdxFormatError(
            f"malformed magic 0x{magic:08x} in {what} file, expected 0x{expected_magic:08x}", 0)
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise IdxFormatError(f"truncated {what} file: incomplete dimension header", len(buf))
    return struct.unpack_from(f">{ndim}I", buf, 4), end


def read_idx_images(path):
    buf = Path(path).read_bytes()
    (count, rows, cols), start = _read_header(buf, IDX_IMAGES_MAGIC, 3, "images")
    need = start + count * rows * cols
    if len(buf) < need:
        raise IdxFormatError(
            f"truncated images file: expected {need} bytes, found {len(buf)}", len(buf))
    pixels = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=start)
    return pixels.reshape(count, rows, cols)


def read_idx_labels(path):
    buf = Path(path).read_bytes()
    (count,), start = _read_header(buf, IDX_LABELS_MAGIC, 1, "labels")
    if len(buf) < start + count:
        raise IdxFormatError(
            f"truncated labels file: expected {start + count} bytes, found {len(buf)}", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=start)


def load_mnist_idx(images_path, labels_path, num_classes=10, split_tag="train"):
    """Load an IDX image/label pair; pixels are scaled by 1/255."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        # the count field sits right after the magic in both files
        raise IdxFormatError(
            f"image/label count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels", 4)
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes, split_tag)


def load_mnist_dir(directory):
    """Return the standard (train, test) pair from a directory of raw MNIST files."""
    directory = Path(directory)
    out = []
    for tag in ("train", "test"):
        images, labels = MNIST_FILES[tag]
        out.append(load_mnist_idx(directory / images, directory / labels, split_tag=tag))
    return tuple(out)


def write_idx(dataset, images_path, labels_path, image_shape=None):
    """Write a dataset whose features are multiples of 1/255 back to IDX files."""
    n, d = dataset.features.shape
    if image_shape is None:
        side = math.isqrt(d)
        image_shape = (side, side) if side * side == d else (1, d)
    rows, cols = image_shape
    if rows * cols != d:
        raise ValueError(f"image_shape {image_shape} does not match feature width {d}")
    pixels = np.rint(dataset.features * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise ValueError("features must lie in [0, 1] to be stored as IDX bytes")
    if dataset.labels.max() > 255:
        raise ValueError("labels must fit in one byte")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(pixels.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def blob_centers(num_classes, dim):
    """Deterministic centers with pairwise distance >= 2.

    For dim >= 2 the centers are the vertices of a regular polygon in the
    first two coordinates whose edge length is exactly 2; in 1-D they are
    evenly spaced 2 apart around the origin.
    """
    if dim == 1:
        return (2.0 * np.arange(num_classes) - (num_classes - 1)).reshape(-1, 1)
    radius = 1.0 / math.sin(math.pi / num_classes)
    angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
    centers = np.zeros((num_classes, dim))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def make_blobs(num_per_class, num_classes, dim, spread, seed):
    if num_per_class < 1:
        raise ValueError("num_per_class must be positive")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if dim < 1:
        raise ValueError("dim must be positive")
    if not spread > 0:
        raise ValueError("spread must be > 0")
    rng = np.random.default_rng(seed)
    centers = blob_centers(num_classes, dim)
    labels = np.repeat(np.arange(num_classes), num_per_class)
    features = centers[labels] + spread * rng.standard_normal((labels.shape[0], dim))
    return Dataset(features, labels, num_classes, "train")


def split_indices(labels, train_fraction, seed):
    """Stratified shuffle split returning sorted (train_idx, test_idx)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    labels = np.asarray(labels)
    n = labels.shape[0]
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"train_fraction {train_fraction} leaves an empty split for N={n}")
    classes, counts = np.unique(labels, return_counts=True)
    # largest-remainder allocation so per-class quotas add up to n_train exactly
    quota = counts * n_train / n
    take = np.floor(quota).astype(np.int64)
    order = np.lexsort((classes, -(quota - take)))
    take[order[: n_train - take.sum()]] += 1
    rng = np.random.default_rng(seed)
    train_parts = []
    for cls, k in zip(classes, take):
        members = np.flatnonzero(labels == cls)
        train_parts.append(rng.permutation(members)[:k])
    train_idx = np.sort(np.concatenate(train_parts))
    mask = np.ones(n, dtype=bool)
    mask[train_idx] = False
    return train_idx, np.flatnonzero(mask)


def split(dataset, train_fraction, seed):
    train_idx, test_idx = split_indices(dataset.labels, train_fraction, seed)
    return dataset.subset(train_idx, "train"), dataset.subset(test_idx, "test")
