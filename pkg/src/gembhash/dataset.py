"""Descriptor matrices: validation, file I/O and query/database splits.

Binary descriptor layout (little-endian)::

    b"GEMB" | u32 version=1 | u64 m | u64 d | m*d float32, row-major

Labels live in a sidecar text file with one non-negative integer per line.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import stream
from .errors import ConfigError, DataError, FormatError

MAGIC = b"GEMB"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


@dataclass(frozen=True)
class FeatureMatrix:
    """``m`` descriptors of dimension ``d`` with optional class labels."""

    data: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DataError(f"descriptor matrix must be 2-D, got shape {data.shape}")
        m, d = data.shape
        if m < 1 or d < 1:
            raise DataError(f"descriptor matrix must be non-empty, got {m}x{d}")
        bad = ~np.isfinite(data)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise DataError(f"non-finite value {data[row, col]} at row {row}, col {col}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.ndim != 1 or labels.shape[0] != m:
                raise DataError(f"expected {m} labels, got shape {labels.shape}")
            if labels.dtype.kind not in "iuf" or (
                labels.dtype.kind == "f" and not np.all(labels == np.round(labels))
            ):
                raise DataError("labels must be integers")
            labels = labels.astype(np.int64)
            if labels.size and labels.min() < 0:
                raise DataError("labels must be non-negative")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def take(self, indices) -> "FeatureMatrix":
        indices = np.asarray(indices, dtype=np.intp)
        labels = None if self.labels is None else self.labels[indices]
        return FeatureMatrix(self.data[indices], labels)

    def with_data(self, data: np.ndarray) -> "FeatureMatrix":
        """Same rows and labels, new values (e.g. after a projection)."""
        return FeatureMatrix(data, self.labels)


@dataclass(frozen=True)
class SplitSpec:
    query_fraction: float = 0.1
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.query_fraction < 1.0:
            raise ConfigError(f"query_fraction must lie in (0, 1), got {self.query_fraction}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class Split:
    query: FeatureMatrix
    database: FeatureMatrix
    query_indices: np.ndarray
    db_indices: np.ndarray = field(repr=False)

    def __iter__(self):
        # allows ``query, db, qi, di = split(...)``
        return iter((self.query, self.database, self.query_indices, self.db_indices))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split(x: FeatureMatrix, spec: SplitSpec) -> Split:
    """Partition ``x`` into query and database rows.

    With ``spec.stratified`` every class contributes
    ``round(query_fraction * class_size)`` queries (half rounds up, at least
    one per class). Otherwise ``round(query_fraction * m)`` rows are drawn
    uniformly. Index arrays are sorted; the result depends only on the seed.
    """
    rng = stream(spec.seed, "split")
    if spec.stratified:
        if x.labels is None:
            raise ConfigError("stratified split requires labels")
        picked = []
        for c in np.unique(x.labels):
            members = np.flatnonzero(x.labels == c)
            n_q = max(1, _round_half_up(spec.query_fraction * members.size))
            if n_q >= members.size:
                raise DataError(
                    f"class {c} has {members.size} samples; cannot draw {n_q} queries "
                    "and keep any in the database"
                )
            picked.append(rng.choice(members, size=n_q, replace=False))
        query_idx = np.sort(np.concatenate(picked))
    else:
        n_q = max(1, _round_half_up(spec.query_fraction * x.m))
        if n_q >= x.m:
            raise DataError(f"cannot draw {n_q} queries from {x.m} samples")
        query_idx = np.sort(rng.choice(x.m, size=n_q, replace=False))
    mask = np.ones(x.m, dtype=bool)
    mask[query_idx] = False
    db_idx = np.flatnonzero(mask)
    return Split(x.take(query_idx), x.take(db_idx), query_idx, db_idx)


def load_labels(path) -> np.ndarray:
    path = Path(path)
    labels = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                raise FormatError(f"{path}:{lineno}: empty label line")
            try:
                value = int(text)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not an integer: {text!r}") from None
            if value < 0:
                raise FormatError(f"{path}:{lineno}: negative label {value}")
            labels.append(value)
    return np.asarray(labels, dtype=np.int64)


def save_labels(labels, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


def _read_binary(path: Path) -> np.ndarray:
    with path.open("rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, m, d = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version} (this build reads {VERSION})")
        if m == 0 or d == 0:
            raise FormatError(f"{path}: empty matrix {m}x{d}")
        payload = fh.read()
    expected = m * d * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: header says {m}x{d} ({expected} bytes), payload has {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(m, d)


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    with path.open("r", newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if len(rows[-1]) != len(rows[0]):
                raise FormatError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def load(path, format: str = "binary", labels_path=None) -> FeatureMatrix:
    """Read a descriptor file (``binary`` or ``csv``) and optional label sidecar."""
    path = Path(path)
    if format == "binary":
        data = _read_binary(path)
    elif format == "csv":
        data = _read_csv(path)
    else:
        raise ConfigError(f"unknown format {format!r}; use 'binary' or 'csv'")
    labels = None if labels_path is None else load_labels(labels_path)
    return FeatureMatrix(data, labels)


def save(x: FeatureMatrix | np.ndarray, path, labels_path=None) -> None:
    """Write the canonical binary format; values are stored as float32."""
    data = x.data if isinstance(x, FeatureMatrix) else np.asarray(x)
    m, d = data.shape
    if m == 0 or d == 0:
        raise FormatError("refusing to write an empty matrix")
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, m, d))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    if labels_path is not None:
        labels = x.labels if isinstance(x, FeatureMatrix) else None
        if labels is None:
            raise DataError("no labels to write")
        save_labels(labels, labels_path)


def as_stored(data: np.ndarray) -> np.ndarray:
    """Values exactly as they would read back from the binary format."""
    return np.asarray(data, dtype=np.float64).astype(np.float32).astype(np.float64)
