"""Dataset container and loaders for IDX files, feature tables and synthetic blobs."""

from __future__ import annotations

import csv
import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_DIR_ENV = "LANDSCAPE_DATA_DIR"
# Upper limit on decoded IDX payload size, guards against corrupt headers.
MAX_IDX_ELEMENTS = 2**34


class DataError(ValueError):
    """Base class for malformed or inconsistent input data."""


class IdxError(DataError):
    def __init__(self, message: str, path, offset: int):
        super().__init__(f"{path}: {message} at byte offset {offset}")
        self.path = str(path)
        self.offset = offset


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class DimensionOverflowError(IdxError):
    pass


class LabelRangeError(IdxError):
    pass


class TableFormatError(DataError):
    def __init__(self, message: str, path, line: int):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


@dataclass
class Dataset:
    """``m`` objects with ``n``-dim features and one-hot labels over ``K`` classes."""

    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise DataError("features and labels must be 2-D arrays")
        if self.features.shape[0] != self.labels.shape[0] or self.features.shape[0] < 1:
            raise DataError("features and labels must have the same, nonzero number of rows")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if not (np.all((self.labels == 0) | (self.labels == 1)) and np.all(self.labels.sum(axis=1) == 1)):
            raise DataError("every label must be one-hot")

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def K(self) -> int:
        return self.labels.shape[1]

    @property
    def label_indices(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.features[indices], self.labels[indices], self.name)

    def head(self, k: int) -> "Dataset":
        return Dataset(self.features[:k], self.labels[:k], self.name)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.features.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()


def one_hot(indices, num_classes: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.size, num_classes))
    out[np.arange(indices.size), indices] = 1.0
    return out


def resolve_path(path) -> Path:
    """Resolve a relative dataset path against ``$LANDSCAPE_DATA_DIR`` when it is not found as given."""
    p = Path(path)
    root = os.environ.get(DATA_DIR_ENV)
    if not p.is_absolute() and not p.exists() and root:
        return Path(root) / p
    return p


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, path, magic: int) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError("file shorter than the 4-byte magic", path, len(raw))
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagicError(f"bad magic 0x{got:08x}, expected 0x{magic:08x}", path, 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError("file ends inside the dimension header", path, len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    total = 1
    for d in dims:
        total *= d
    if total > MAX_IDX_ELEMENTS:
        raise DimensionOverflowError(f"dimensions {dims} describe {total} elements", path, 4)
    if len(raw) < header + total:
        raise TruncatedFileError(f"payload needs {total} bytes, found {len(raw) - header}", path, len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=total, offset=header).reshape(dims)


def load_idx(images_path, labels_path, limit: int | None = None, num_classes: int = 10, name: str | None = None) -> Dataset:
    """Read an IDX image/label file pair, scale pixels to [-1, 1] and one-hot the labels.

    Images are flattened row-major. ``limit`` keeps the first records in file
    order. Gzipped files are accepted transparently.
    """
    images_path, labels_path = resolve_path(images_path), resolve_path(labels_path)
    images = _parse_idx(_read_bytes(images_path), images_path, IMAGE_MAGIC)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[0] == 0:
        raise DataError("IDX files contain no records")
    count = images.shape[0] if limit is None else min(int(limit), images.shape[0])
    if count < 1:
        raise DataError("limit must be >= 1")
    bad = np.flatnonzero(labels[:count] >= num_classes)
    if bad.size:
        raise LabelRangeError(f"label {labels[bad[0]]} >= num_classes={num_classes}", labels_path, 8 + int(bad[0]))
    features = images[:count].reshape(count, -1).astype(np.float64) / 255.0 * 2.0 - 1.0
    return Dataset(features, one_hot(labels[:count], num_classes), name or Path(images_path).name)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (magic ``0x0000 08 <ndim>``)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX files are supported")
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(array).tobytes())


def load_feature_table(path, num_classes: int, name: str | None = None) -> Dataset:
    """Load a headered comma-separated table: integer label, then real features."""
    path = resolve_path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TableFormatError("empty file", path, 1)
    body = rows[1:]
    if not body:
        raise TableFormatError("table has a header but no records", path, 1)
    width = len(rows[0])
    if width < 2:
        raise TableFormatError("need a label column and at least one feature column", path, 1)
    labels, features = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != width:
            raise TableFormatError(f"expected {width} fields, found {len(row)}", path, lineno)
        try:
            label = int(row[0])
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise TableFormatError(f"unparsable value ({exc})", path, lineno) from None
        if not 0 <= label < num_classes:
            raise TableFormatError(f"label {label} outside [0, {num_classes})", path, lineno)
        labels.append(label)
        features.append(values)
    return Dataset(np.array(features), one_hot(labels, num_classes), name or Path(path).stem)


def write_feature_table(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(["label"] + [f"f{j}" for j in range(dataset.n)]) + "\n")
        for label, row in zip(dataset.label_indices, dataset.features):
            fh.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")


def synthetic_blobs(m: int, n: int, K: int, spread: float, seed: int) -> Dataset:
    """``K`` Gaussian clusters with means inside the unit ball, clipped to [-1, 1].

    Class sizes differ by at most one.
    """
    if not m >= K >= 2:
        raise ValueError("need m >= K >= 2")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(K, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.uniform(size=(K, 1)) ** (1.0 / n)
    means = directions * radii
    labels = rng.permutation(np.arange(m) % K)
    features = np.clip(means[labels] + spread * rng.normal(size=(m, n)), -1.0, 1.0)
    return Dataset(features, one_hot(labels, K), f"blobs-{m}-{n}-{K}")
