"""Versioned binary container for fitted models.

Layout (little-endian)::

    b"GEMM" | u32 version=1 | section*
    section := u32 type | u64 payload_length | payload
    payload := array*
    array   := u8 dtype (1=f64, 2=i64) | u8 ndim | u64 dim * ndim | data

A Gemb model is written as a PCA section, a GMM section and a GEMB section
that binds the two preceding ones.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .gemb import GembModel
from .gmm import CovarianceKind, GmmModel
from .hashing import ItqModel, LshModel
from .pca import PcaModel

MAGIC = b"GEMM"
VERSION = 1

SECTION_PCA = 1
SECTION_GMM = 2
SECTION_GEMB = 3
SECTION_ITQ = 4
SECTION_LSH = 5
SECTION_NAMES = {SECTION_PCA: "pca", SECTION_GMM: "gmm", SECTION_GEMB: "gemb", SECTION_ITQ: "itq", SECTION_LSH: "lsh"}

_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8")}
_KIND_CODES = {CovarianceKind.FULL: 0, CovarianceKind.DIAGONAL: 1}


def _write_array(buf: io.BytesIO, arr) -> None:
    arr = np.asarray(arr)
    code = 2 if arr.dtype.kind in "iu" else 1
    arr = arr.astype(_DTYPES[code])
    buf.write(struct.pack("<BB", code, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr).tobytes())


def _read_arrays(payload: bytes, section: str) -> list[np.ndarray]:
    out = []
    pos = 0
    try:
        while pos < len(payload):
            code, ndim = struct.unpack_from("<BB", payload, pos)
            pos += 2
            if code not in _DTYPES:
                raise FormatError(f"{section} section: unknown array dtype code {code}")
            shape = struct.unpack_from(f"<{ndim}Q", payload, pos)
            pos += 8 * ndim
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(payload):
                raise FormatError(f"{section} section: array overruns its section")
            out.append(np.frombuffer(payload, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
                       .reshape(shape).astype(dtype.newbyteorder("=")))
            pos += nbytes
    except struct.error:
        raise FormatError(f"{section} section: truncated array header") from None
    return out


def _encode(model) -> list[tuple[int, bytes]]:
    if isinstance(model, GembModel):
        buf = io.BytesIO()
        _write_array(buf, np.float64(model.alpha))
        return _encode(model.pca) + _encode(model.gmm) + [(SECTION_GEMB, buf.getvalue())]
    buf = io.BytesIO()
    if isinstance(model, PcaModel):
        kind = SECTION_PCA
        arrays = [model.mean, model.eigenvalues, model.projection, np.float64(model.gamma)]
    elif isinstance(model, GmmModel):
        kind = SECTION_GMM
        arrays = [np.int64(_KIND_CODES[model.kind]), model.weights, model.means, model.covariances]
    elif isinstance(model, ItqModel):
        kind = SECTION_ITQ
        arrays = [model.mean, model.pca_projection, model.rotation, np.asarray(model.loss_history, dtype=np.float64)]
    elif isinstance(model, LshModel):
        kind = SECTION_LSH
        arrays = [model.mean, model.hyperplanes]
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    for arr in arrays:
        _write_array(buf, arr)
    return [(kind, buf.getvalue())]


def _expect(arrays, n, section):
    if len(arrays) != n:
        raise FormatError(f"{section} section: expected {n} arrays, found {len(arrays)}")
    return arrays


def _decode(kind: int, payload: bytes):
    name = SECTION_NAMES[kind]
    arrays = _read_arrays(payload, name)
    if kind == SECTION_PCA:
        mean, lam, proj, gamma = _expect(arrays, 4, name)
        return PcaModel(mean, lam, proj, float(gamma))
    if kind == SECTION_GMM:
        code, weights, means, covs = _expect(arrays, 4, name)
        kinds = {v: k for k, v in _KIND_CODES.items()}
        if int(code) not in kinds:
            raise FormatError(f"gmm section: unknown covariance kind code {int(code)}")
        return GmmModel(weights, means, covs, kinds[int(code)])
    if kind == SECTION_GEMB:
        (alpha,) = _expect(arrays, 1, name)
        return float(alpha)
    if kind == SECTION_ITQ:
        mean, proj, rot, losses = _expect(arrays, 4, name)
        return ItqModel(mean, proj, rot, tuple(float(v) for v in losses))
    mean, planes = _expect(arrays, 2, name)
    return LshModel(mean, planes)


def dumps(*models) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<I", VERSION))
    for model in models:
        for kind, payload in _encode(model):
            out.write(struct.pack("<IQ", kind, len(payload)))
            out.write(payload)
    return out.getvalue()


def loads(raw: bytes, source: str = "<bytes>") -> list:
    """Decode every model in a container, merging PCA+GMM+GEMB into a GembModel."""
    if raw[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise FormatError(f"{source}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise FormatError(f"{source}: container version {version}; this build reads version {VERSION} only")
    pos = 8
    models: list = []
    while pos < len(raw):
        if pos + 12 > len(raw):
            raise FormatError(f"{source}: truncated section header at byte {pos}")
        kind, length = struct.unpack_from("<IQ", raw, pos)
        pos += 12
        if kind not in SECTION_NAMES:
            known = ", ".join(f"{k}={v}" for k, v in SECTION_NAMES.items())
            raise FormatError(
                f"{source}: unknown section type {kind}; container version {VERSION} defines {known}. "
                "The file was probably written by a newer release."
            )
        if pos + length > len(raw):
            raise FormatError(f"{source}: {SECTION_NAMES[kind]} section overruns the file")
        value = _decode(kind, raw[pos : pos + length])
        pos += length
        if kind == SECTION_GEMB:
            if len(models) < 2 or not isinstance(models[-2], PcaModel) or not isinstance(models[-1], GmmModel):
                raise FormatError(f"{source}: gemb section must follow a pca and a gmm section")
            gmm = models.pop()
            pca = models.pop()
            value = GembModel(pca, gmm, value)
        models.append(value)
    return models


def save(path, *models) -> None:
    Path(path).write_bytes(dumps(*models))


def load(path) -> list:
    path = Path(path)
    return loads(path.read_bytes(), str(path))


def load_one(path, cls):
    """The first model of type ``cls`` in the container at ``path``."""
    for model in load(path):
        if isinstance(model, cls):
            return model
    raise FormatError(f"{path}: no {cls.__name__} section")
