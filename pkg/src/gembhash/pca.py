"""PCA with the number of components chosen by retained-variance fraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dataset import FeatureMatrix
from .errors import ConfigError, DataError, NumericalError, ShapeError

# slack when comparing a cumulative variance ratio against gamma
_RATIO_EPS = 1e-12


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    eigenvalues: np.ndarray
    projection: np.ndarray
    gamma: float

    @property
    def d_in(self) -> int:
        return self.projection.shape[0]

    @property
    def d_out(self) -> int:
        return self.projection.shape[1]

    def explained_ratio(self) -> float:
        total = self.eigenvalues.sum()
        return float(self.eigenvalues[: self.d_out].sum() / total) if total > 0 else 1.0


def n_components_for(eigenvalues: np.ndarray, gamma: float) -> int:
    """Smallest ``D`` whose top-``D`` eigenvalues hold at least ``gamma`` of the total."""
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = lam.sum()
    if total <= 0:
        return 1
    # divide by the last cumsum (not a separate sum) so the final ratio is exactly 1
    ratios = np.cumsum(lam)
    ratios = ratios / ratios[-1]
    return int(np.argmax(ratios >= gamma - _RATIO_EPS)) + 1


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigh_descending(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        lam, vecs = linalg.eigh(cov)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(lam, kind="stable")[::-1]
    lam, vecs = lam[order], vecs[:, order]
    floor = 1e-9 * max(lam[0], 0.0)
    if lam[-1] < -floor:
        raise NumericalError(f"covariance has a negative eigenvalue {lam[-1]:.3e}")
    return np.clip(lam, 0.0, None), fix_signs(vecs)


def _spectrum(centered: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m, d = centered.shape
    if m >= d:
        return eigh_descending(centered.T @ centered / m)
    # Gram route: only m non-zero eigenvalues; pad the rest with zeros
    lam_g, v = eigh_descending(centered @ centered.T / m)
    keep = lam_g > 1e-12 * max(lam_g[0], 1e-300)
    u = centered.T @ v[:, keep] / np.sqrt(m * lam_g[keep])
    # re-orthonormalize to scrub round-off, then apply the usual sign rule
    q, r = np.linalg.qr(u)
    q = q * np.sign(np.diag(r))
    lam = np.zeros(d)
    lam[: keep.sum()] = lam_g[keep]
    return lam, fix_signs(q)


def fit_pca(x: FeatureMatrix | np.ndarray, gamma: float) -> PcaModel:
    """Fit PCA on mean-centred data and keep the smallest sufficient ``D``.

    The covariance uses the population divisor ``1/m``. Eigenvector signs are
    normalised, so refitting on identical data returns an identical model.
    """
    data = x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
    m, d = data.shape
    if m < 2:
        raise DataError(f"PCA needs at least 2 samples, got {m}")
    mean = data.mean(axis=0)
    lam, vecs = _spectrum(data - mean)
    n_out = n_components_for(lam, gamma)
    if vecs.shape[1] < n_out:
        raise NumericalError(f"only {vecs.shape[1]} non-degenerate directions, need {n_out}")
    return PcaModel(mean=mean, eigenvalues=lam, projection=np.ascontiguousarray(vecs[:, :n_out]), gamma=float(gamma))


def project(model: PcaModel, x: FeatureMatrix | np.ndarray):
    """``(x - mean) @ U``; returns the same container type it was given."""
    data = x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.d_in:
        raise ShapeError(f"expected {model.d_in} columns, got shape {data.shape}")
    out = (data - model.mean) @ model.projection
    return x.with_data(out) if isinstance(x, FeatureMatrix) else out
