"""End-to-end runs: split, embed, hash, encode, evaluate, repeated over trials."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import container, dataset, evaluation, hashing
from .config import PipelineConfig
from .dataset import FeatureMatrix, SplitSpec, as_stored
from .errors import ConfigError, GembError
from .gemb import GembModel, embed, fit_gemb
from .gmm import EmConfig

log = logging.getLogger(__name__)


class StageError(GembError):
    """Wraps a module error with the pipeline stage that raised it."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


@dataclass
class TrialResult:
    seed: int
    reports: dict[str, evaluation.EvalReport] = field(default_factory=dict)
    gemb: GembModel | None = None


def em_config(cfg: PipelineConfig, seed: int) -> EmConfig:
    return EmConfig(
        n_components=cfg.resolved_components,
        kind=cfg.covariance,
        max_iters=cfg.em_max_iters,
        tol=cfg.em_tol,
        reg_covar=cfg.reg_covar,
        seed=seed,
        n_init=cfg.em_n_init,
    )


def fit_hasher(cfg: PipelineConfig, x, seed: int):
    if cfg.hasher == "itq":
        return hashing.fit_itq(x, cfg.n_bits, cfg.itq_iters, seed=seed)
    if cfg.hasher == "lsh":
        return hashing.fit_lsh(x, cfg.n_bits, seed=seed)
    raise ConfigError("hasher 'none' produces no codes to evaluate")


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, GembError) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _hash_arm(cfg, name, db, query, seed, out: Path | None):
    with _Stage(f"{name}:fit-hash"):
        model = fit_hasher(cfg, db, seed)
    with _Stage(f"{name}:encode"):
        db_codes = hashing.encode(model, db)
        q_codes = hashing.encode(model, query)
    with _Stage(f"{name}:evaluate"):
        index = evaluation.RetrievalIndex(db_codes, db.labels)
        report = evaluation.evaluate(index, q_codes, query.labels, k=cfg.k, r=cfg.r, map_top=cfg.map_cutoff)
    report.label = name
    if out is not None:
        container.save(out / f"{name}.hash.gemm", model)
        hashing.save_codes(db_codes, out / f"{name}.db.gemc")
        hashing.save_codes(q_codes, out / f"{name}.query.gemc")
        (out / f"{name}.report.txt").write_text(report.to_text())
    return report


def run_trial(x: FeatureMatrix, cfg: PipelineConfig, seed: int, artifacts: Path | None = None) -> TrialResult:
    """One split of the data, the Gemb arm and (with ``cfg.compare``) the raw baseline.

    Embeddings pass through float32 before hashing so the in-memory run
    matches a run of the individual commands, which store them as float32.
    """
    if x.labels is None:
        raise StageError("split", ConfigError("evaluation needs labels"))
    if artifacts is not None:
        artifacts.mkdir(parents=True, exist_ok=True)
    with _Stage("split"):
        query, db, q_idx, db_idx = dataset.split(x, SplitSpec(cfg.query_fraction, seed, cfg.stratified))
    if artifacts is not None:
        dataset.save(query, artifacts / "query.gemb", artifacts / "query.labels")
        dataset.save(db, artifacts / "db.gemb", artifacts / "db.labels")

    result = TrialResult(seed)
    with _Stage("gemb:fit"):
        train = db if cfg.gmm_fit_on == "database" else x
        model = fit_gemb(train, cfg.gamma, cfg.resolved_components, cfg.covariance, cfg.alpha, em_config(cfg, seed))
    result.gemb = model
    with _Stage("gemb:embed"):
        z_db = db.with_data(as_stored(embed(model, db.data)))
        z_q = query.with_data(as_stored(embed(model, query.data)))
    if artifacts is not None:
        container.save(artifacts / "gemb.gemm", model)
        dataset.save(z_db, artifacts / "emb_db.gemb")
        dataset.save(z_q, artifacts / "emb_query.gemb")
    log.info("trial seed=%d: PCA %d->%d dims, GMM N=%d", seed, model.pca.d_in, model.pca.d_out, model.n_components)

    if cfg.hasher == "none":
        return result
    name = f"gemb+{cfg.hasher}"
    result.reports[name] = _hash_arm(cfg, name, z_db, z_q, seed, artifacts)
    if cfg.compare:
        result.reports[cfg.hasher] = _hash_arm(cfg, cfg.hasher, db, query, seed, artifacts)
    return result


def run_pipeline(x: FeatureMatrix, cfg: PipelineConfig, artifacts=None) -> dict[str, evaluation.EvalReport]:
    """``cfg.trials`` trials with seeds ``seed, seed+1, ...``; reports averaged per arm."""
    trials = []
    for i in range(cfg.trials):
        out = None if artifacts is None else Path(artifacts) / f"trial{i}"
        trials.append(run_trial(x, cfg, cfg.seed + i, out))
    arms = list(trials[0].reports)
    return {arm: evaluation.aggregate([t.reports[arm] for t in trials]) for arm in arms}
