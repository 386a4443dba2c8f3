"""GMM posterior embedding: PCA, mixture posteriors, then power normalization."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import gmm as _gmm
from . import pca as _pca
from .dataset import FeatureMatrix
from .errors import ConfigError, ShapeError
from .gmm import CovarianceKind, EmConfig, GmmModel
from .pca import PcaModel

# (gamma, alpha) presets
PRESETS = {
    "gist": (0.85, 0.15),
    "cnn": (0.65, 0.05),
}
DEFAULT_GAMMA, DEFAULT_ALPHA = PRESETS["gist"]
LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class GembModel:
    pca: PcaModel
    gmm: GmmModel
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.gmm.dim != self.pca.d_out:
            raise ShapeError(f"GMM dimension {self.gmm.dim} != PCA output {self.pca.d_out}")

    @property
    def gamma(self) -> float:
        return self.pca.gamma

    @property
    def n_components(self) -> int:
        return self.gmm.n_components


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")


def power_normalize(z, alpha: float) -> np.ndarray:
    """Elementwise ``sign(z) * |z| ** alpha``."""
    _check_alpha(alpha)
    z = np.asarray(z, dtype=np.float64)
    if alpha == 1.0:
        return z.copy()
    return np.sign(z) * np.abs(z) ** alpha


def fit_gemb(
    x,
    gamma: float = DEFAULT_GAMMA,
    n_components: int = 16,
    kind=CovarianceKind.FULL,
    alpha: float = DEFAULT_ALPHA,
    em: EmConfig | None = None,
) -> GembModel:
    """Fit PCA on ``x``, then a mixture of ``n_components`` on the projection.

    ``em`` supplies the remaining EM settings; its ``n_components`` and
    ``kind`` are overridden by the explicit arguments.
    """
    _check_alpha(alpha)
    pca_model = _pca.fit_pca(x, gamma)
    projected = _pca.project(pca_model, x)
    em = EmConfig(n_components, kind) if em is None else replace(em, n_components=n_components, kind=kind)
    fit = _gmm.fit_gmm(projected, em)
    return GembModel(pca_model, fit.model, alpha)


def embed(model: GembModel, x):
    """Power-normalised posteriors, one row of length ``N`` per sample."""
    data = x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.pca.d_in:
        raise ShapeError(f"expected {model.pca.d_in} columns, got shape {data.shape}")
    post = _gmm.posteriors(model.gmm, _pca.project(model.pca, data))
    z = power_normalize(post, model.alpha)
    return x.with_data(z) if isinstance(x, FeatureMatrix) else z


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def occupied(self) -> np.ndarray:
        return np.flatnonzero(self.counts)


def log_entries(z) -> np.ndarray:
    z = z.data if isinstance(z, FeatureMatrix) else np.asarray(z, dtype=np.float64)
    return np.log10(np.maximum(z, LOG_FLOOR)).ravel()


def sparsity_histogram(z, n_bins: int = 50) -> Histogram:
    """Histogram of ``log10`` entries; zeros are clamped into the lowest bin."""
    if n_bins < 2:
        raise ConfigError(f"n_bins must be >= 2, got {n_bins}")
    counts, edges = np.histogram(log_entries(z), bins=n_bins)
    return Histogram(edges, counts)


def median_log_entry(z) -> float:
    return float(np.median(log_entries(z)))
