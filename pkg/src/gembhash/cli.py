"""``gembhash`` command-line interface.

Each subcommand reads its inputs, runs one stage and writes an artifact:

    synth      labelled Gaussian-blob descriptors
    split      stratified query/database split
    fit-pca    PCA model           fit-gmm   Gemb model (PCA + GMM + alpha)
    bic        BIC table over N and covariance kinds
    embed      embeddings          fit-hash  ITQ / LSH model
    encode     packed codes        query     Hamming ranking
    evaluate   mAP / precision@k / precision@r report
    pipeline   everything above, repeated over trials
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import container, dataset, evaluation, gemb, gmm, hashing, pca, pipeline, synth
from .errors import ConfigError, GembError

log = logging.getLogger("gembhash")

THREADS_ENV = "GEMB_NUM_THREADS"


def _load_x(args):
    return dataset.load(args.input, args.format, getattr(args, "labels", None))


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _kinds(text: str) -> list[gmm.CovarianceKind]:
    if text == "both":
        return [gmm.CovarianceKind.FULL, gmm.CovarianceKind.DIAGONAL]
    return [gmm.CovarianceKind.parse(text)]


def _em_from_args(args, n_components: int, kind) -> gmm.EmConfig:
    return gmm.EmConfig(n_components, kind, max_iters=args.max_iters, tol=args.tol,
                        reg_covar=args.reg_covar, seed=args.seed, n_init=args.n_init)


def _projected(args, x):
    """Project ``x`` with ``--pca`` if given, else fit PCA with ``--gamma``."""
    model = container.load_one(args.pca, pca.PcaModel) if args.pca else pca.fit_pca(x, args.gamma)
    return model, pca.project(model, x)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    x = synth.make_blobs(args.n_samples, args.n_classes, args.dim, args.latent_dim, args.separation,
                         args.spread, args.correlation, args.noise, args.seed)
    labels_out = args.labels_out or Path(args.out).with_suffix(".labels")
    dataset.save(x, args.out, labels_out)
    print(f"synth: {x.m} x {x.d}, {args.n_classes} classes -> {args.out}, {labels_out}")
    return 0


def cmd_split(args) -> int:
    x = _load_x(args)
    query, db, _, _ = dataset.split(x, dataset.SplitSpec(args.query_fraction, args.seed, args.stratified))
    prefix = args.out_prefix
    for name, part in (("query", query), ("db", db)):
        dataset.save(part, f"{prefix}.{name}.gemb", f"{prefix}.{name}.labels" if part.labels is not None else None)
    print(f"split: {query.m} queries, {db.m} database rows -> {prefix}.{{query,db}}.gemb")
    return 0


def cmd_fit_pca(args) -> int:
    x = _load_x(args)
    model = pca.fit_pca(x, args.gamma)
    container.save(args.out, model)
    print(f"fit-pca: d={model.d_in} -> D={model.d_out} (gamma={model.gamma}, retained {model.explained_ratio():.4f})")
    return 0


def _bic_rows(args, x) -> list[tuple[int, str, int, float]]:
    _, projected = _projected(args, x)
    rows = []
    for n in args.n_components:
        for kind in _kinds(args.covariance):
            fit = gmm.fit_gmm(projected, _em_from_args(args, n, kind))
            rows.append((n, kind.value, projected.d, gmm.bic(fit.model, projected)))
    return rows


def _print_bic(rows) -> None:
    print("N\tkind\tD\tBIC")
    for n, kind, d, value in rows:
        print(f"{n}\t{kind}\t{d}\t{value:.6f}")
    by_n: dict[int, dict[str, float]] = {}
    for n, kind, _, value in rows:
        by_n.setdefault(n, {})[kind] = value
    for n, vals in by_n.items():
        if {"full", "diagonal"} <= vals.keys():
            rel = (vals["full"] - vals["diagonal"]) / abs(vals["diagonal"])
            print(f"# N={n} relative difference (full - diagonal) / |diagonal| = {rel:.6f}")


def cmd_bic(args) -> int:
    _print_bic(_bic_rows(args, _load_x(args)))
    return 0


def cmd_fit_gmm(args) -> int:
    x = _load_x(args)
    if args.bic_sweep:
        args.n_components = args.bic_sweep
        _print_bic(_bic_rows(args, x))
        return 0
    if args.covariance == "both":
        raise ConfigError("--covariance both is only valid with --bic-sweep")
    if args.out is None:
        raise ConfigError("--out is required unless --bic-sweep is given")
    pca_model, projected = _projected(args, x)
    fit = gmm.fit_gmm(projected, _em_from_args(args, args.n_components[0], _kinds(args.covariance)[0]))
    model = gemb.GembModel(pca_model, fit.model, args.alpha)
    container.save(args.out, model)
    print(f"fit-gmm: N={fit.model.n_components} {fit.model.kind.value} D={fit.model.dim} "
          f"log-likelihood={fit.log_likelihood:.6f} iters={fit.n_iters}")
    return 0


def cmd_embed(args) -> int:
    model = container.load_one(args.model, gemb.GembModel)
    x = _load_x(args)
    z = gemb.embed(model, x)
    dataset.save(z, args.out)
    median = gemb.median_log_entry(z)
    print(f"embed: {z.m} x {z.d} (alpha={model.alpha}, median log10 entry {median:.3f}) -> {args.out}")
    return 0


def cmd_fit_hash(args) -> int:
    x = _load_x(args)
    if args.method == "itq":
        model = hashing.fit_itq(x, args.n_bits, args.iters, seed=args.seed)
        loss = f" loss={model.loss_history[-1]:.6f}" if model.loss_history else ""
    else:
        model = hashing.fit_lsh(x, args.n_bits, seed=args.seed)
        loss = ""
    container.save(args.out, model)
    print(f"fit-hash: {args.method} {x.d} dims -> {args.n_bits} bits{loss}")
    return 0


def cmd_encode(args) -> int:
    model = next(m for m in container.load(args.model) if isinstance(m, (hashing.ItqModel, hashing.LshModel)))
    codes = hashing.encode(model, _load_x(args))
    hashing.save_codes(codes, args.out)
    print(f"encode: {codes.m} codes x {codes.n_bits} bits -> {args.out}")
    return 0


def cmd_query(args) -> int:
    db = hashing.load_codes(args.database)
    queries = hashing.load_codes(args.queries)
    labels = dataset.load_labels(args.db_labels) if args.db_labels else np.zeros(db.m, dtype=np.int64)
    index = evaluation.RetrievalIndex(db, labels)
    for q in range(queries.m):
        order = evaluation.rank_by_hamming(index, queries[q])[: args.top]
        dist = index.distances(queries.words[q])[order]
        print(f"{q}\t" + " ".join(f"{i}:{d}" for i, d in zip(order, dist)))
    return 0


def _write_reports(args, reports: list[evaluation.EvalReport]) -> None:
    text = "\n".join(rep.to_text() for rep in reports)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.table:
        Path(args.table).write_text(evaluation.format_table(reports))
    if args.out:
        for rep in reports:
            print(f"{rep.label or 'report'}: mAP={rep.map:.2f} p@{rep.k}={rep.precision_at_k:.2f} "
                  f"p@r{rep.r}={rep.precision_at_radius:.2f} ({rep.n_trials} trial(s)) -> {args.out}")


def cmd_evaluate(args) -> int:
    if args.input:
        # descriptor mode: resplit per trial and run the whole pipeline
        cfg = _pipeline_config(args)
        x = _load_x(args)
        reports = list(pipeline.run_pipeline(x, cfg, args.artifacts).values())
    else:
        missing = [n for n in ("database", "db_labels", "queries", "query_labels") if not getattr(args, n)]
        if missing:
            raise ConfigError("codes mode needs " + ", ".join("--" + n.replace("_", "-") for n in missing))
        index = evaluation.RetrievalIndex(hashing.load_codes(args.database), dataset.load_labels(args.db_labels))
        cfg = _pipeline_config(args)
        report = evaluation.evaluate(index, hashing.load_codes(args.queries), dataset.load_labels(args.query_labels),
                                     k=cfg.k, r=cfg.r, map_top=cfg.map_cutoff)
        reports = [report]
    _write_reports(args, reports)
    return 0


_FLAG_KEYS = {
    "gamma": "gamma", "alpha": "alpha", "n_components": "n_components", "covariance": "covariance",
    "n_bits": "n_bits", "hasher": "hasher", "trials": "trials", "seed": "seed", "k": "k",
    "radius": "r", "query_fraction": "query_fraction", "map_top": "map_top", "itq_iters": "itq_iters",
    "max_iters": "em_max_iters", "tol": "em_tol", "reg_covar": "em_reg_covar", "n_init": "em_n_init",
    "gmm_fit_on": "gmm_fit_on",
}


def _pipeline_config(args) -> config_mod.PipelineConfig:
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else config_mod.PipelineConfig()
    if getattr(args, "preset", None):
        cfg = cfg.with_preset(args.preset)
    overrides = {}
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, "cfg_" + flag, None)
        if value is not None:
            overrides[key] = str(value)
    cfg = cfg.updated(overrides)
    if getattr(args, "compare", False):
        cfg = replace(cfg, compare=True)
    return cfg


def cmd_pipeline(args) -> int:
    cfg = _pipeline_config(args)
    x = _load_x(args)
    if args.save_config:
        Path(args.save_config).write_text(config_mod.serialize(cfg))
    reports = pipeline.run_pipeline(x, cfg, args.artifacts)
    if not reports:
        print("pipeline: hasher=none, embeddings only" + (f" (artifacts in {args.artifacts})" if args.artifacts else ""))
        return 0
    _write_reports(args, list(reports.values()))
    return 0


# --------------------------------------------------------------------------
# parser


def _add_input(p, labels: bool = False) -> None:
    p.add_argument("--input", "-i", required=True, help="descriptor file")
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    if labels:
        p.add_argument("--labels", help="label sidecar (one integer per line)")


def _add_em(p) -> None:
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--reg-covar", type=float, default=None, help="default: 1e-6 x mean variance")
    p.add_argument("--n-init", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)


_CONFIG_FLAGS = (
    ("gamma", float), ("alpha", float), ("n_components", str), ("covariance", str), ("n_bits", int),
    ("hasher", str), ("trials", int), ("seed", int), ("k", int), ("radius", int), ("query_fraction", float),
    ("map_top", str), ("itq_iters", int), ("max_iters", int), ("tol", float), ("reg_covar", str),
    ("n_init", int), ("gmm_fit_on", str),
)


def _add_pipeline_flags(p) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--preset", choices=sorted(gemb.PRESETS), help="(gamma, alpha) preset")
    for flag, typ in _CONFIG_FLAGS:
        p.add_argument("--" + flag.replace("_", "-"), dest="cfg_" + flag, type=typ, default=None)
    p.add_argument("--compare", action="store_true", help="also run the hasher on raw descriptors")
    p.add_argument("--artifacts", help="directory for intermediate files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gembhash", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--threads", type=int, default=None, help=f"BLAS threads (default: ${THREADS_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labelled blob dataset")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--labels-out")
    p.add_argument("--n-samples", type=int, default=5000)
    p.add_argument("--n-classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--spread", type=float, default=1.2)
    p.add_argument("--correlation", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="query/database split")
    _add_input(p, labels=True)
    p.add_argument("--query-fraction", type=float, default=0.1)
    p.add_argument("--no-stratify", dest="stratified", action="store_false")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit-pca", help="fit PCA by retained variance")
    _add_input(p)
    p.add_argument("--gamma", type=float, default=gemb.DEFAULT_GAMMA)
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_fit_pca)

    for name, func in (("fit-gmm", cmd_fit_gmm), ("bic", cmd_bic)):
        p = sub.add_parser(name, help="fit the Gemb mixture" if name == "fit-gmm" else "BIC table")
        _add_input(p)
        p.add_argument("--pca", help="PCA model container (else fit with --gamma)")
        p.add_argument("--gamma", type=float, default=gemb.DEFAULT_GAMMA)
        p.add_argument("--n-components", "-n", type=_csv_ints, default=[16])
        p.add_argument("--covariance", choices=("full", "diagonal", "both"),
                       default="full" if name == "fit-gmm" else "both")
        _add_em(p)
        if name == "fit-gmm":
            p.add_argument("--alpha", type=float, default=gemb.DEFAULT_ALPHA)
            p.add_argument("--bic-sweep", type=_csv_ints, default=None, help="print a BIC table for these N")
            p.add_argument("--out", "-o")
        p.set_defaults(func=func)

    p = sub.add_parser("embed", help="compute embeddings")
    _add_input(p)
    p.add_argument("--model", "-m", required=True)
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("fit-hash", help="learn a binary encoder")
    _add_input(p)
    p.add_argument("--method", choices=("itq", "lsh"), default="itq")
    p.add_argument("--n-bits", "-b", type=int, required=True)
    p.add_argument("--iters", type=int, default=hashing.DEFAULT_ITQ_ITERS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_fit_hash)

    p = sub.add_parser("encode", help="encode descriptors into packed codes")
    _add_input(p)
    p.add_argument("--model", "-m", required=True)
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("query", help="rank database codes for each query code")
    p.add_argument("--database", required=True)
    p.add_argument("--db-labels")
    p.add_argument("--queries", required=True)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("evaluate", help="retrieval metrics from codes, or from descriptors over trials")
    p.add_argument("--database")
    p.add_argument("--db-labels")
    p.add_argument("--queries")
    p.add_argument("--query-labels")
    p.add_argument("--input", "-i", help="descriptor file: run the pipeline per trial instead")
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--labels")
    _add_pipeline_flags(p)
    p.add_argument("--out", "-o")
    p.add_argument("--table", help="also write a TSV table here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="split, embed, hash, encode and evaluate")
    _add_input(p, labels=True)
    _add_pipeline_flags(p)
    p.add_argument("--save-config", help="write the resolved config here")
    p.add_argument("--out", "-o")
    p.add_argument("--table")
    p.set_defaults(func=cmd_pipeline)
    return parser


def _thread_limit(n):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _origin(exc: BaseException) -> str:
    """Innermost gembhash module in the traceback."""
    name = "gembhash"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("gembhash.") and mod != "gembhash.cli":
            name = mod.split(".")[-1]
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except GembError as exc:
        module = getattr(exc, "stage", None) or _origin(exc)
        print(f"gembhash {args.command}: error in {module}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gembhash {args.command}: I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
