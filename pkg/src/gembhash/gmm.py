"""Gaussian mixture models fitted by EM, with full or diagonal covariances.

Every density evaluation happens in log space through a cached Cholesky
factor (full) or standard-deviation vector (diagonal); posteriors are
normalised with log-sum-exp so underflowed components come out as exact
zeros instead of NaNs.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from ._rng import stream
from .dataset import FeatureMatrix
from .errors import ConfigError, DataError, NumericalError, ShapeError

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
MIN_WEIGHT = 1e-10
MAX_CONSECUTIVE_COLLAPSES = 3
KMEANS_ITERS = 10


class CovarianceKind(str, enum.Enum):
    FULL = "full"
    DIAGONAL = "diagonal"

    @classmethod
    def parse(cls, value) -> "CovarianceKind":
        if isinstance(value, cls):
            return value
        text = str(value).lower()
        if text in ("diag", "diagonal"):
            return cls.DIAGONAL
        if text == "full":
            return cls.FULL
        raise ConfigError(f"unknown covariance kind {value!r}; use 'full' or 'diagonal'")


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)


def _factorize(kind: CovarianceKind, covariances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factors (or diagonal std devs) and log-determinants.

    Raises ``NumericalError`` naming the first component that is not SPD.
    """
    if kind is CovarianceKind.DIAGONAL:
        if np.any(covariances <= 0) or not np.all(np.isfinite(covariances)):
            bad = int(np.flatnonzero(~(covariances > 0).all(axis=1) | ~np.isfinite(covariances).all(axis=1))[0])
            raise NumericalError(f"component {bad}: diagonal covariance not positive")
        return np.sqrt(covariances), np.log(covariances).sum(axis=1)
    chol = np.empty_like(covariances)
    for k, cov in enumerate(covariances):
        try:
            chol[k] = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            raise NumericalError(f"component {k}: covariance not positive definite") from None
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    return chol, logdet


@dataclass(frozen=True)
class GmmModel:
    """Mixture parameters plus factorizations cached at construction.

    ``covariances`` has shape ``(N, D, D)`` for full models and ``(N, D)``
    (diagonals only) for diagonal models.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    kind: CovarianceKind
    factors: np.ndarray = field(init=False, repr=False)
    log_dets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        kind = CovarianceKind.parse(self.kind)
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        covs = np.asarray(self.covariances, dtype=np.float64)
        n, d = means.shape
        want = (n, d, d) if kind is CovarianceKind.FULL else (n, d)
        if weights.shape != (n,) or covs.shape != want:
            raise ShapeError(
                f"inconsistent GMM parameters: weights {weights.shape}, means {means.shape}, "
                f"covariances {covs.shape} (expected {want})"
            )
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DataError(f"weights must be positive and sum to 1 (sum={weights.sum()!r})")
        factors, log_dets = _factorize(kind, covs)
        if not np.all(np.isfinite(log_dets)):
            raise NumericalError("covariance log-determinant is not finite")
        for name, value in (("kind", kind), ("weights", weights), ("means", means),
                            ("covariances", covs), ("factors", factors), ("log_dets", log_dets)):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def permuted(self, order) -> "GmmModel":
        order = np.asarray(order)
        return GmmModel(self.weights[order], self.means[order], self.covariances[order], self.kind)


@dataclass(frozen=True)
class EmConfig:
    n_components: int
    kind: CovarianceKind = CovarianceKind.FULL
    max_iters: int = 200
    tol: float = 1e-5
    reg_covar: float | None = None  # None: 1e-6 * mean per-dimension variance
    seed: int = 0
    n_init: int = 3

    def __post_init__(self):
        object.__setattr__(self, "kind", CovarianceKind.parse(self.kind))
        if self.n_components < 1:
            raise ConfigError("n_components must be >= 1")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if self.reg_covar is not None and self.reg_covar < 0:
            raise ConfigError("reg_covar must be >= 0")
        if self.n_init < 1:
            raise ConfigError("n_init must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class GmmFit:
    """Result of :func:`fit_gmm`.

    ``history`` holds the total log-likelihood of the initial parameters and
    of every accepted M-step; the last entry belongs to the returned model.
    An M-step that would lower the likelihood is discarded and ends the run. ``resets`` lists history indices
    where a collapsed component was re-seeded; the likelihood may drop
    across those steps and only there.
    """

    model: GmmModel
    log_likelihood: float
    n_iters: int
    history: tuple[float, ...]
    resets: tuple[int, ...] = ()
    converged: bool = False

    def __iter__(self):
        return iter((self.model, self.log_likelihood, self.n_iters))


def _check_dims(model: GmmModel, data: np.ndarray) -> None:
    if data.ndim != 2 or data.shape[1] != model.dim:
        raise ShapeError(f"expected {model.dim} columns, got shape {data.shape}")


def _log_densities(means, factors, log_dets, kind, data) -> np.ndarray:
    m, d = data.shape
    out = np.empty((m, means.shape[0]))
    for k in range(means.shape[0]):
        diff = data - means[k]
        if kind is CovarianceKind.FULL:
            y = linalg.solve_triangular(factors[k], diff.T, lower=True, check_finite=False)
            maha = np.einsum("ij,ij->j", y, y)
        else:
            y = diff / factors[k]
            maha = np.einsum("ij,ij->i", y, y)
        out[:, k] = -0.5 * (d * LOG_2PI + log_dets[k] + maha)
    return out


def log_component_densities(model: GmmModel, x) -> np.ndarray:
    """``ln p_j(x_t)`` for every sample ``t`` and component ``j``, shape ``(m, N)``."""
    data = _as_array(x)
    _check_dims(model, data)
    return _log_densities(model.means, model.factors, model.log_dets, model.kind, data)


def log_component_density(model: GmmModel, j: int, x) -> float:
    vec = np.asarray(x, dtype=np.float64).reshape(-1)
    if vec.shape[0] != model.dim:
        raise ShapeError(f"expected a vector of length {model.dim}, got {vec.shape[0]}")
    if not 0 <= j < model.n_components:
        raise ShapeError(f"component index {j} out of range [0, {model.n_components})")
    sel = slice(j, j + 1)
    return float(_log_densities(model.means[sel], model.factors[sel], model.log_dets[sel],
                                model.kind, vec[None, :])[0, 0])


def _normalize_log(weighted: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior matrix and per-sample log mixture density."""
    norm = logsumexp(weighted, axis=1)
    resp = np.exp(weighted - norm[:, None])
    # renormalise to pin row sums at 1 up to one rounding
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, norm


def weighted_log_densities(model: GmmModel, x) -> np.ndarray:
    return log_component_densities(model, x) + np.log(model.weights)


def posteriors(model: GmmModel, x) -> np.ndarray:
    """Soft assignments ``P(j | x_t)``; each row is a probability vector."""
    resp, _ = _normalize_log(weighted_log_densities(model, x))
    return resp


def score_samples(model: GmmModel, x) -> np.ndarray:
    """Per-sample ``ln sum_j w_j p_j(x_t)``."""
    return logsumexp(weighted_log_densities(model, x), axis=1)


def log_likelihood(model: GmmModel, x) -> float:
    return float(score_samples(model, x).sum())


def n_parameters(kind, n_components: int, dim: int) -> int:
    kind = CovarianceKind.parse(kind)
    cov = dim * (dim + 1) // 2 if kind is CovarianceKind.FULL else dim
    return (n_components - 1) + n_components * dim + n_components * cov


def bic(model: GmmModel, x) -> float:
    """``k ln m - 2 ln L``; lower is better."""
    data = _as_array(x)
    _check_dims(model, data)
    k = n_parameters(model.kind, model.n_components, model.dim)
    return k * np.log(data.shape[0]) - 2.0 * log_likelihood(model, data)


# --------------------------------------------------------------------------
# fitting


def default_reg_covar(data: np.ndarray) -> float:
    scale = float(data.var(axis=0).mean())
    return 1e-6 * scale if scale > 0 else 1e-6


def kmeans_plusplus(data: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding; returns ``n`` rows of ``data``."""
    m = data.shape[0]
    centers = np.empty((n, data.shape[1]))
    centers[0] = data[rng.integers(m)]
    closest = ((data - centers[0]) ** 2).sum(axis=1)
    for i in range(1, n):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(m, p=closest / total)
        else:
            idx = rng.integers(m)
        centers[i] = data[idx]
        closest = np.minimum(closest, ((data - centers[i]) ** 2).sum(axis=1))
    return centers


def _sq_dists(data, centers):
    d2 = (data**2).sum(axis=1)[:, None] - 2.0 * data @ centers.T + (centers**2).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _fill_empty(data, centers, labels, n):
    """Give every empty cluster the farthest point of a cluster that can spare one."""
    counts = np.bincount(labels, minlength=n)
    for k in np.flatnonzero(counts == 0):
        spare = counts[labels] > 1
        dist = np.where(spare, ((data - centers[labels]) ** 2).sum(axis=1), -1.0)
        far = int(np.argmax(dist))
        counts[labels[far]] -= 1
        counts[k] = 1
        labels[far] = k
        centers[k] = data[far]


def kmeans(data: np.ndarray, n: int, rng: np.random.Generator, n_iters: int = KMEANS_ITERS) -> np.ndarray:
    """Lloyd iterations from k-means++ seeds; returns hard labels with no empty cluster."""
    centers = kmeans_plusplus(data, n, rng)
    labels = np.argmin(_sq_dists(data, centers), axis=1)
    for _ in range(n_iters):
        _fill_empty(data, centers, labels, n)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, data)
        centers = sums / np.bincount(labels, minlength=n)[:, None]
        new = np.argmin(_sq_dists(data, centers), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    _fill_empty(data, centers, labels, n)
    return labels


def _m_step(data, resp, kind, reg):
    m, d = data.shape
    nk = resp.sum(axis=0)
    safe = nk + 10 * np.finfo(float).eps
    weights = nk / m
    means = (resp.T @ data) / safe[:, None]
    n = resp.shape[1]
    if kind is CovarianceKind.FULL:
        covs = np.empty((n, d, d))
        for k in range(n):
            diff = data - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / safe[k]
            covs[k] = 0.5 * (covs[k] + covs[k].T)
            covs[k].flat[:: d + 1] += reg
    else:
        covs = np.empty((n, d))
        for k in range(n):
            diff = data - means[k]
            covs[k] = (resp[:, k, None] * diff * diff).sum(axis=0) / safe[k] + reg
    return weights, means, covs


def _try_factorize(kind, covs):
    """Per-component factorization; ``None`` entries mark failures."""
    out = []
    for k in range(covs.shape[0]):
        try:
            f, ld = _factorize(kind, covs[k : k + 1])
        except NumericalError:
            out.append(None)
            continue
        out.append((f[0], ld[0]) if np.isfinite(ld[0]) else None)
    return out


def _global_cov(data, kind, reg):
    if kind is CovarianceKind.FULL:
        cov = np.cov(data, rowvar=False, bias=True).reshape(data.shape[1], data.shape[1])
        cov.flat[:: data.shape[1] + 1] += reg
        return cov
    return data.var(axis=0) + reg


class _State:
    __slots__ = ("weights", "means", "covs", "factors", "log_dets")

    def __init__(self, weights, means, covs, factors, log_dets):
        self.weights, self.means, self.covs = weights, means, covs
        self.factors, self.log_dets = factors, log_dets

    def e_step(self, data, kind):
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        weighted = _log_densities(self.means, self.factors, self.log_dets, kind, data) + logw
        resp, norm = _normalize_log(weighted)
        return resp, norm


def _build_state(data, resp, kind, reg, fallback_score):
    """M-step plus collapse repair. Returns (state, n_repaired)."""
    weights, means, covs = _m_step(data, resp, kind, reg)
    facs = _try_factorize(kind, covs)
    bad = [k for k, f in enumerate(facs) if f is None or weights[k] < MIN_WEIGHT]
    if bad:
        # re-seed collapsed components on the samples the mixture explains worst
        order = np.argsort(fallback_score, kind="stable")
        gcov = _global_cov(data, kind, reg)
        gfac = _try_factorize(kind, gcov[None])[0]
        if gfac is None:
            raise NumericalError("global data covariance is not positive definite; increase reg_covar")
        for rank, k in enumerate(bad):
            means[k] = data[order[rank % len(order)]]
            covs[k] = gcov
            weights[k] = 1.0 / len(weights)
            facs[k] = gfac
        weights = weights / weights.sum()
    factors = np.stack([f[0] for f in facs])
    log_dets = np.array([f[1] for f in facs])
    return _State(weights, means, covs, factors, log_dets), len(bad)


def _run_em(data, cfg: EmConfig, reg: float, restart: int) -> GmmFit:
    kind, n = cfg.kind, cfg.n_components
    rng = stream(cfg.seed, "kmeans", restart)
    labels = kmeans(data, n, rng)
    resp = np.zeros((data.shape[0], n))
    resp[np.arange(data.shape[0]), labels] = 1.0
    uniform_score = np.zeros(data.shape[0])
    state, n_bad = _build_state(data, resp, kind, reg, uniform_score)

    history: list[float] = []
    resets: list[int] = []
    consecutive = 0
    converged = False
    n_iters = 0
    resp, norm = state.e_step(data, kind)
    ll = float(norm.sum())
    history.append(ll)
    for _ in range(cfg.max_iters):
        new_state, n_bad = _build_state(data, resp, kind, reg, norm)
        n_iters += 1
        if n_bad:
            consecutive += 1
            log.debug("re-seeded %d collapsed component(s) at iteration %d", n_bad, n_iters)
            if consecutive >= MAX_CONSECUTIVE_COLLAPSES:
                raise NumericalError(
                    f"{n_bad} component(s) collapsed on {consecutive} consecutive iterations; "
                    "reduce n_components or raise reg_covar"
                )
            resets.append(len(history))
        else:
            consecutive = 0
        new_resp, new_norm = new_state.e_step(data, kind)
        new_ll = float(new_norm.sum())
        gain = new_ll - ll
        if not n_bad and gain < 0:
            # the ridge makes the M-step inexact; never accept a step downhill
            n_iters -= 1
            converged = True
            break
        history.append(new_ll)
        state, resp, norm, ll = new_state, new_resp, new_norm, new_ll
        if not n_bad and gain < cfg.tol * abs(history[-2]):
            converged = True
            break
    model = GmmModel(state.weights, state.means, state.covs, kind)
    return GmmFit(model, ll, n_iters, tuple(history), tuple(resets), converged)


def fit_gmm(x, cfg: EmConfig) -> GmmFit:
    """Fit a mixture by EM from k-means++ starts; keep the best of ``cfg.n_init``.

    Each restart seeds k-means++ from its own sub-stream, runs a few Lloyd
    iterations, turns the hard assignment into initial parameters and then
    alternates E and M steps until the relative gain in total
    log-likelihood drops below ``cfg.tol`` or ``cfg.max_iters`` M-steps have
    run. ``reg_covar`` is added to every covariance diagonal on each M-step.
    """
    data = _as_array(x)
    if data.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise DataError("input contains non-finite values")
    m = data.shape[0]
    if m < cfg.n_components:
        raise DataError(f"need at least n_components={cfg.n_components} samples, got {m}")
    reg = default_reg_covar(data) if cfg.reg_covar is None else cfg.reg_covar
    best = None
    for restart in range(cfg.n_init):
        fit = _run_em(data, cfg, reg, restart)
        if best is None or fit.log_likelihood > best.log_likelihood:
            best = fit
    return best
