"""Labelled Gaussian-blob datasets with a low-dimensional class structure."""

from __future__ import annotations

import numpy as np

from ._rng import stream
from .dataset import FeatureMatrix
from .errors import ConfigError


def equicorrelation(dim: int, rho: float) -> np.ndarray:
    """Unit-variance covariance with every off-diagonal entry equal to ``rho``."""
    if not -1.0 / max(dim - 1, 1) < rho < 1.0:
        raise ConfigError(f"correlation {rho} does not give a positive definite matrix in {dim} dims")
    cov = np.full((dim, dim), rho)
    np.fill_diagonal(cov, 1.0)
    return cov


def make_blobs(
    n_samples: int = 5000,
    n_classes: int = 10,
    dim: int = 512,
    latent_dim: int | None = None,
    separation: float = 1.0,
    spread: float = 0.5,
    correlation: float = 0.0,
    noise: float = 0.0,
    seed: int = 0,
) -> FeatureMatrix:
    """Class blobs drawn in a ``latent_dim`` space and embedded in ``dim`` dims.

    Class centres are ``separation * N(0, I)`` in the latent space; each
    sample adds ``spread`` times equicorrelated noise with off-diagonal
    ``correlation``. The latent space is mapped into ``dim`` dimensions by a
    random matrix with orthonormal rows (the identity when
    ``latent_dim == dim``), and ``noise`` adds isotropic ambient noise.
    Class sizes differ by at most one.
    """
    latent_dim = min(dim, 16) if latent_dim is None else latent_dim
    if n_classes < 1 or n_samples < n_classes:
        raise ConfigError("need n_classes >= 1 and at least one sample per class")
    if not 1 <= latent_dim <= dim:
        raise ConfigError(f"latent_dim must lie in [1, {dim}]")
    if spread < 0 or noise < 0:
        raise ConfigError("spread and noise must be non-negative")
    rng = stream(seed, "synth")
    centers = separation * rng.standard_normal((n_classes, latent_dim))
    labels = np.arange(n_samples) % n_classes
    rng.shuffle(labels)
    chol = np.linalg.cholesky(equicorrelation(latent_dim, correlation))
    latent = centers[labels] + spread * rng.standard_normal((n_samples, latent_dim)) @ chol.T
    if latent_dim == dim:
        data = latent
    else:
        basis, _ = np.linalg.qr(rng.standard_normal((dim, latent_dim)))
        data = latent @ basis.T
    if noise > 0:
        data = data + noise * rng.standard_normal(data.shape)
    return FeatureMatrix(data, labels)
