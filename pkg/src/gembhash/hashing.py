"""Binary code learning (ITQ, random-hyperplane LSH) and packed bit codes.

Codes are stored as ``uint64`` words, row-major, ``ceil(b / 64)`` words per
row. Bit ``j`` lives in word ``j // 64`` at position ``j % 64`` (LSB
first); positions past ``b`` are always zero.

Code file layout (little-endian)::

    b"GEMC" | u32 version=1 | u64 m | u64 b | m * ceil(b/64) u64 words
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from ._rng import stream
from .dataset import FeatureMatrix
from .errors import DataError, FormatError, NumericalError, ShapeError
from .pca import eigh_descending

CODE_MAGIC = b"GEMC"
CODE_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
DEFAULT_ITQ_ITERS = 50


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class BinaryCodes:
    words: np.ndarray
    n_bits: int

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.ndim != 2 or words.shape[1] != n_words(self.n_bits):
            raise ShapeError(f"{self.n_bits} bits need {n_words(self.n_bits)} words per row, got {words.shape}")
        if self.n_bits % 64 and np.any(words[:, -1] & ~_tail_mask(self.n_bits)):
            raise DataError("bits beyond n_bits must be zero")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @property
    def m(self) -> int:
        return self.words.shape[0]

    def __len__(self) -> int:
        return self.m

    def __getitem__(self, idx) -> "BinaryCodes":
        return BinaryCodes(self.words[np.atleast_1d(np.arange(self.m)[idx])], self.n_bits)

    def row(self, i: int) -> np.ndarray:
        return self.words[i]

    def to_bits(self) -> np.ndarray:
        return unpack_bits(self.words, self.n_bits)

    @classmethod
    def from_bits(cls, bits) -> "BinaryCodes":
        bits = np.atleast_2d(np.asarray(bits, dtype=bool))
        return cls(pack_bits(bits), bits.shape[1])


def n_words(n_bits: int) -> int:
    if n_bits < 1:
        raise ShapeError("n_bits must be >= 1")
    return -(-n_bits // 64)


def _tail_mask(n_bits: int) -> np.uint64:
    rem = n_bits % 64
    return np.uint64((1 << rem) - 1) if rem else np.uint64(0xFFFFFFFFFFFFFFFF)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    m, b = bits.shape
    width = n_words(b) * 64
    padded = np.zeros((m, width), dtype=np.uint8)
    padded[:, :b] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64).reshape(m, -1)


def unpack_bits(words: np.ndarray, n_bits: int) -> np.ndarray:
    words = np.atleast_2d(np.asarray(words, dtype=np.uint64))
    raw = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    return np.unpackbits(raw, axis=1, bitorder="little")[:, :n_bits].astype(bool)


def hamming_distance(a, b) -> int:
    """Popcount of ``a XOR b`` over packed words."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ShapeError(f"code shapes differ: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(a ^ b).sum())


def hamming_to_all(codes: BinaryCodes, query) -> np.ndarray:
    """Distance from one packed query row to every row of ``codes``."""
    query = np.asarray(query, dtype=np.uint64).reshape(-1)
    if query.shape[0] != codes.words.shape[1]:
        raise ShapeError(f"query has {query.shape[0]} words, codes have {codes.words.shape[1]}")
    return np.bitwise_count(codes.words ^ query).sum(axis=1, dtype=np.int64)


# --------------------------------------------------------------------------
# encoders


@dataclass(frozen=True)
class ItqModel:
    mean: np.ndarray
    pca_projection: np.ndarray
    rotation: np.ndarray
    loss_history: tuple[float, ...] = ()

    @property
    def n_bits(self) -> int:
        return self.rotation.shape[0]

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    def project(self, data: np.ndarray) -> np.ndarray:
        return (data - self.mean) @ self.pca_projection @ self.rotation


@dataclass(frozen=True)
class LshModel:
    mean: np.ndarray
    hyperplanes: np.ndarray

    @property
    def n_bits(self) -> int:
        return self.hyperplanes.shape[1]

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    def project(self, data: np.ndarray) -> np.ndarray:
        return (data - self.mean) @ self.hyperplanes


def sign_pm1(v: np.ndarray) -> np.ndarray:
    """+1 / -1 with exact zeros mapped to +1."""
    return np.where(v >= 0, 1.0, -1.0)


def random_rotation(b: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((b, b)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def procrustes(codes: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Orthogonal ``R`` minimising ``||codes - v R||_F``."""
    try:
        s_hat, _, s_bar_t = linalg.svd(codes.T @ v)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed in ITQ rotation update: {exc}") from exc
    return s_bar_t.T @ s_hat.T


def quantization_loss(codes: np.ndarray, v: np.ndarray, rotation: np.ndarray) -> float:
    diff = codes - v @ rotation
    return float(np.einsum("ij,ij->", diff, diff))


def fit_itq(x, b: int, n_iters: int = DEFAULT_ITQ_ITERS, seed: int = 0, callback=None) -> ItqModel:
    """Iterative quantization.

    Centres the data, projects onto the top-``b`` principal directions and
    alternates between ``B = sign(V R)`` and the Procrustes update of ``R``.
    ``loss_history[i]`` is ``||B - V R||^2`` after iteration ``i + 1``.
    ``callback(iteration, rotation, loss)``, if given, runs after each one.
    """
    data = _as_array(x)
    m, d = data.shape
    if b < 1:
        raise ShapeError("b must be >= 1")
    if d < b:
        raise DataError(f"ITQ needs at least b={b} input dimensions, got {d}")
    if m < b:
        raise DataError(f"ITQ needs at least b={b} samples, got {m}")
    if n_iters < 0:
        raise DataError("n_iters must be >= 0")
    mean = data.mean(axis=0)
    centered = data - mean
    _, vecs = eigh_descending(centered.T @ centered / m)
    w = np.ascontiguousarray(vecs[:, :b])
    rotation, losses = itq_rotation(centered @ w, random_rotation(b, stream(seed, "itq")), n_iters, callback)
    return ItqModel(mean, w, rotation, losses)


def itq_rotation(v: np.ndarray, rotation: np.ndarray, n_iters: int, callback=None):
    """Run the ITQ alternation from ``rotation``; returns ``(R, losses)``."""
    losses = []
    for _ in range(n_iters):
        codes = sign_pm1(v @ rotation)
        rotation = procrustes(codes, v)
        losses.append(quantization_loss(codes, v, rotation))
        if callback is not None:
            callback(len(losses), rotation, losses[-1])
    return rotation, tuple(losses)


def fit_lsh(x, b: int, seed: int = 0) -> LshModel:
    """Random Gaussian hyperplanes through the training mean."""
    data = _as_array(x)
    if b < 1:
        raise ShapeError("b must be >= 1")
    planes = stream(seed, "lsh").standard_normal((data.shape[1], b))
    return LshModel(data.mean(axis=0), planes)


def encode(model: ItqModel | LshModel, x) -> BinaryCodes:
    """Bit ``j`` is set iff projected coordinate ``j`` is ``>= 0``."""
    data = _as_array(x)
    if data.ndim != 2 or data.shape[1] != model.input_dim:
        raise ShapeError(f"expected {model.input_dim} columns, got shape {data.shape}")
    return BinaryCodes.from_bits(model.project(data) >= 0)


# --------------------------------------------------------------------------
# code files


def save_codes(codes: BinaryCodes, path) -> None:
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(CODE_MAGIC, CODE_VERSION, codes.m, codes.n_bits))
        fh.write(codes.words.astype("<u8").tobytes())


def load_codes(path) -> BinaryCodes:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, m, b = _HEADER.unpack_from(raw)
    if magic != CODE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CODE_MAGIC!r}")
    if version != CODE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} (this build reads {CODE_VERSION})")
    if m == 0 or b == 0:
        raise FormatError(f"{path}: empty code matrix {m}x{b}")
    words = n_words(b)
    payload = raw[_HEADER.size :]
    if len(payload) != m * words * 8:
        raise FormatError(f"{path}: expected {m * words * 8} payload bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype="<u8").reshape(m, words)
    try:
        return BinaryCodes(arr, b)
    except DataError as exc:
        raise FormatError(f"{path}: {exc}") from None
