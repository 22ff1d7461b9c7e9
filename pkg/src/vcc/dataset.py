"""Feature matrices with optional labels: CSV/IDX loaders and a blob generator."""

from __future__ import annotations

import csv
import gzip
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ArgumentError, FormatError, IoError, LengthError, ParseError, ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """N x D features plus optional integer labels.

    Labels are carried along for evaluation only; nothing in training reads them.
    """

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    sample_ids: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ShapeError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        bad = ~np.isfinite(X)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise ParseError(f"non-finite feature value at sample index {row}, feature {col}", row=int(row), col=int(col))
        X.setflags(write=False)
        object.__setattr__(self, "features", X)

        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.ndim != 1 or y.shape[0] != X.shape[0]:
                raise LengthError(f"expected {X.shape[0]} labels, got shape {y.shape}")
            if not np.issubdtype(y.dtype, np.integer):
                raise ParseError("labels must be integers")
            if y.min() < 0:
                raise ParseError("labels must be non-negative class ids")
            y = y.astype(np.int64)
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

        ids = self.sample_ids
        if ids is None:
            ids = np.arange(X.shape[0])
        ids = np.asarray(ids)
        if ids.shape != (X.shape[0],):
            raise LengthError(f"expected {X.shape[0]} sample ids, got shape {ids.shape}")
        object.__setattr__(self, "sample_ids", ids)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1


def _check_readable(path):
    if not os.path.isfile(path):
        raise IoError(f"no such file: {path}")
    if not os.access(path, os.R_OK):
        raise IoError(f"file is not readable: {path}")


def load_csv(path, has_labels: bool = False) -> Dataset:
    """Read a comma-separated numeric matrix, optionally with a trailing label column.

    Rows and columns in error messages are 1-based, as a text editor shows them.
    """
    _check_readable(path)
    rows = []
    width = None
    try:
        with open(path, newline="") as fh:
            for lineno, rec in enumerate(csv.reader(fh), start=1):
                if not rec or all(not c.strip() for c in rec):
                    continue
                if width is None:
                    width = len(rec)
                elif len(rec) != width:
                    raise ShapeError(f"row {lineno} has {len(rec)} columns, expected {width}")
                vals = []
                for colno, cell in enumerate(rec, start=1):
                    try:
                        v = float(cell)
                    except ValueError:
                        raise ParseError(
                            f"row {lineno}, column {colno}: cannot parse {cell.strip()!r} as a number",
                            row=lineno, col=colno,
                        ) from None
                    if not math.isfinite(v):
                        raise ParseError(
                            f"row {lineno}, column {colno}: non-finite value {cell.strip()!r}",
                            row=lineno, col=colno,
                        )
                    vals.append(v)
                rows.append(vals)
    except OSError as exc:
        raise IoError(str(exc)) from exc

    if not rows:
        raise ShapeError(f"{path}: file contains no data rows")
    data = np.array(rows, dtype=np.float64)
    if not has_labels:
        return Dataset(data)
    if data.shape[1] < 2:
        raise ShapeError("a labelled CSV needs at least one feature column plus the label column")
    raw = data[:, -1]
    if np.any(raw != np.round(raw)) or np.any(raw < 0):
        row = int(np.flatnonzero((raw != np.round(raw)) | (raw < 0))[0]) + 1
        raise ParseError(f"row {row}: label {raw[row - 1]!r} is not a non-negative integer",
                         row=row, col=data.shape[1])
    return Dataset(data[:, :-1], labels=raw.astype(np.int64))


def save_csv(dataset: Dataset, path, include_labels: bool = True) -> None:
    """Write features (and labels as last column) with round-trip float precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            if include_labels and dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            w.writerow(row)


def _read_bytes(path):
    _check_readable(path)
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            return fh.read()
    except (OSError, EOFError) as exc:
        raise IoError(f"{path}: {exc}") from exc


def _parse_idx(buf, expected_magic, path):
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    magic = int.from_bytes(buf[:4], "big")
    if magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError(f"{path}: truncated IDX header")
    shape = tuple(int.from_bytes(buf[4 + 4 * k: 8 + 4 * k], "big") for k in range(ndim))
    count = int(np.prod(shape))
    if len(buf) != header + count:
        raise FormatError(f"{path}: expected {count} payload bytes, found {len(buf) - header}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(shape)


def load_idx(images_path, labels_path=None) -> Dataset:
    """Load an IDX image file (e.g. MNIST), flattened row-major and scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path).astype(np.int64)
        if labels.shape[0] != X.shape[0]:
            raise LengthError(f"{X.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(X, labels=labels)


def write_idx(path, array) -> None:
    """Write a uint8 array in IDX format (magic 0x08 type code, big-endian dims)."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    header = (0x0800 | a.ndim).to_bytes(4, "big")
    header += b"".join(int(s).to_bytes(4, "big") for s in a.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + a.tobytes())


def _blob_centers(k, dim, separation, rng):
    if separation == 0:
        return np.zeros((k, dim))
    if k <= dim:
        # scaled orthonormal frame: every pair is exactly `separation` apart
        basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        return basis[:, :k].T * (separation / math.sqrt(2.0))
    if dim == 1:
        return (np.arange(k, dtype=np.float64) * separation)[:, None]
    box = separation * k ** (1.0 / dim)
    while True:
        for _ in range(200):
            c = rng.uniform(-box, box, size=(k, dim))
            d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
            np.fill_diagonal(d, np.inf)
            if d.min() >= separation:
                return c
        box *= 1.5


def make_blobs(n_per_cluster: int, k: int, dim: int, spread: float = 1.0,
               separation: float = 20.0, seed: int = 0) -> Dataset:
    """Isotropic Gaussian clusters whose centers are pairwise at least `separation` apart."""
    for name, v in (("n_per_cluster", n_per_cluster), ("k", k), ("dim", dim)):
        if int(v) != v or v < 1:
            raise ArgumentError(f"{name} must be a positive integer, got {v!r}")
    if not spread > 0:
        raise ArgumentError(f"spread must be positive, got {spread!r}")
    if not separation >= 0:
        raise ArgumentError(f"separation must be non-negative, got {separation!r}")
    rng = np.random.default_rng(seed)
    centers = _blob_centers(k, dim, separation, rng)
    X = np.repeat(centers, n_per_cluster, axis=0) + spread * rng.standard_normal((k * n_per_cluster, dim))
    y = np.repeat(np.arange(k), n_per_cluster)
    return Dataset(X, labels=y)


def load_labels(path) -> np.ndarray:
    """Integer labels from an IDX label file or a text file with one label per line."""
    buf = _read_bytes(path)
    if len(buf) >= 4 and int.from_bytes(buf[:4], "big") == IDX_LABELS_MAGIC:
        return _parse_idx(buf, IDX_LABELS_MAGIC, path).astype(np.int64)
    out = []
    for lineno, line in enumerate(buf.decode().splitlines(), start=1):
        cell = line.strip()
        if not cell:
            continue
        try:
            out.append(int(cell))
        except ValueError:
            raise ParseError(f"{path}, line {lineno}: label {cell!r} is not an integer", row=lineno) from None
    if not out:
        raise ShapeError(f"{path}: no labels found")
    return np.array(out, dtype=np.int64)
