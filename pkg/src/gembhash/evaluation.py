"""Hamming-ranking retrieval metrics averaged per class.

All three metrics (mAP, precision within a Hamming radius, precision at the
top ``k``) are computed per query, averaged within each query class and
then averaged over classes with equal weight. Reported values are percents.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .hashing import BinaryCodes, hamming_to_all

log = logging.getLogger(__name__)

METRICS = ("map", "precision_at_k", "precision_at_radius")


@dataclass(frozen=True)
class RetrievalIndex:
    codes: BinaryCodes
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (self.codes.m,):
            raise ShapeError(f"{self.codes.m} database codes but labels have shape {labels.shape}")
        object.__setattr__(self, "labels", labels)

    @property
    def n_bits(self) -> int:
        return self.codes.n_bits

    def distances(self, query_code) -> np.ndarray:
        return hamming_to_all(self.codes, query_code)


def _query_row(index: RetrievalIndex, query_code) -> np.ndarray:
    if isinstance(query_code, BinaryCodes):
        if query_code.m != 1:
            raise ShapeError("expected a single query code")
        if query_code.n_bits != index.n_bits:
            raise ShapeError(f"query has {query_code.n_bits} bits, index has {index.n_bits}")
        return query_code.words[0]
    return np.asarray(query_code, dtype=np.uint64).reshape(-1)


def rank_by_hamming(index: RetrievalIndex, query_code) -> np.ndarray:
    """Database indices by ascending distance, ties by ascending index."""
    return np.argsort(index.distances(_query_row(index, query_code)), kind="stable")


def average_precision(ranked_relevance, n_relevant: int | None = None) -> float:
    """Mean of precision@i over the ranks ``i`` holding a relevant item.

    ``n_relevant`` is the normaliser; it defaults to the number of relevant
    items in ``ranked_relevance``. Returns 0 when there is nothing relevant.
    """
    rel = np.asarray(ranked_relevance, dtype=bool)
    total = int(rel.sum()) if n_relevant is None else int(n_relevant)
    if total == 0:
        return 0.0
    hits = np.flatnonzero(rel)
    precisions = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precisions.sum() / total)


def precision_at_radius(index: RetrievalIndex, query_code, query_label: int, r: int = 2) -> float:
    """Label precision among items within Hamming distance ``r``; 0 if none."""
    if r < 0:
        raise ConfigError("radius must be >= 0")
    within = index.distances(_query_row(index, query_code)) <= r
    n = int(within.sum())
    if n == 0:
        return 0.0
    return float((index.labels[within] == query_label).sum() / n)


def precision_at_k(index: RetrievalIndex, query_code, query_label: int, k: int = 1000) -> float:
    if k < 1:
        raise ConfigError("k must be >= 1")
    top = rank_by_hamming(index, query_code)[:k]
    return float((index.labels[top] == query_label).mean())


def query_metrics(index: RetrievalIndex, query_code, query_label: int, k: int, r: int,
                  map_top: int | None = None) -> tuple[float, float, float]:
    """(AP, precision@k, precision@radius) for one query, as fractions.

    With ``map_top`` the AP is computed over that ranked prefix only and
    normalised by the relevant items inside it.
    """
    row = _query_row(index, query_code)
    dist = index.distances(row)
    order = np.argsort(dist, kind="stable")
    rel = index.labels[order] == query_label
    if map_top is None:
        ap = average_precision(rel)
    else:
        ap = average_precision(rel[:map_top])
    p_k = float(rel[:k].mean())
    within = dist <= r
    n_within = int(within.sum())
    p_r = float((index.labels[within] == query_label).sum() / n_within) if n_within else 0.0
    return ap, p_k, p_r


@dataclass
class EvalReport:
    """Class-averaged retrieval metrics in percent.

    ``per_class`` maps class id to ``(map, p@k, p@r)``; ``per_trial`` holds
    the class-averaged triple of every trial that went into the means.
    """

    map: float
    precision_at_k: float
    precision_at_radius: float
    k: int = 1000
    r: int = 2
    per_class: dict[int, tuple[float, float, float]] = field(default_factory=dict)
    n_trials: int = 1
    per_trial: list[tuple[float, float, float]] = field(default_factory=list)
    missing_classes: list[int] = field(default_factory=list)
    n_queries: int = 0
    label: str = ""

    def values(self) -> tuple[float, float, float]:
        return self.map, self.precision_at_k, self.precision_at_radius

    def to_text(self) -> str:
        return format_report(self)


def evaluate(index: RetrievalIndex, queries: BinaryCodes, query_labels, k: int = 1000, r: int = 2,
             map_top: int | None = None) -> EvalReport:
    """Score every query against ``index`` and average per class, then over classes."""
    query_labels = np.asarray(query_labels, dtype=np.int64)
    if queries.n_bits != index.n_bits:
        raise ShapeError(f"queries have {queries.n_bits} bits, index has {index.n_bits}")
    if query_labels.shape != (queries.m,):
        raise ShapeError(f"{queries.m} queries but labels have shape {query_labels.shape}")
    if k < 1 or r < 0:
        raise ConfigError("need k >= 1 and r >= 0")
    scores = np.empty((queries.m, 3))
    for t in range(queries.m):
        scores[t] = query_metrics(index, queries.words[t], int(query_labels[t]), k, r, map_top)
    present = set(np.unique(index.labels).tolist())
    per_class = {}
    missing = []
    for c in np.unique(query_labels):
        c = int(c)
        if c not in present:
            missing.append(c)
            log.warning("query class %d has no database items; its metrics are 0", c)
        per_class[c] = tuple(float(v) for v in 100.0 * scores[query_labels == c].mean(axis=0))
    means = tuple(float(v) for v in np.mean(list(per_class.values()), axis=0))
    return EvalReport(*means, k=k, r=r, per_class=per_class, n_trials=1, per_trial=[means],
                      missing_classes=missing, n_queries=int(queries.m))


def aggregate(reports: list[EvalReport]) -> EvalReport:
    """Mean over trials; per-class entries average the trials that saw the class."""
    if not reports:
        raise ConfigError("no reports to aggregate")
    trials = [rep.values() for rep in reports]
    means = tuple(float(v) for v in np.mean(trials, axis=0))
    classes = sorted({c for rep in reports for c in rep.per_class})
    per_class = {
        c: tuple(float(v) for v in np.mean([rep.per_class[c] for rep in reports if c in rep.per_class], axis=0))
        for c in classes
    }
    missing = sorted({c for rep in reports for c in rep.missing_classes})
    first = reports[0]
    return EvalReport(*means, k=first.k, r=first.r, per_class=per_class, n_trials=len(reports),
                      per_trial=[tuple(t) for t in trials], missing_classes=missing,
                      n_queries=sum(rep.n_queries for rep in reports), label=first.label)


# --------------------------------------------------------------------------
# serialization


def format_report(report: EvalReport) -> str:
    """Stable ``key=value`` text, one ``[section]`` per metric and per class."""
    lines = ["[summary]"]
    if report.label:
        lines.append(f"label={report.label}")
    lines += [
        f"n_trials={report.n_trials}",
        f"n_queries={report.n_queries}",
        f"k={report.k}",
        f"r={report.r}",
        "missing_classes=" + ",".join(str(c) for c in report.missing_classes),
    ]
    for i, name in enumerate(METRICS):
        lines += ["", f"[{name}]", f"mean={report.values()[i]!r}"]
        lines += [f"trial.{t}={vals[i]!r}" for t, vals in enumerate(report.per_trial)]
    for c, vals in sorted(report.per_class.items()):
        lines += ["", f"[class.{c}]"] + [f"{name}={vals[i]!r}" for i, name in enumerate(METRICS)]
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    sections: dict[str, dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], {})
            continue
        if current is None or "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value inside a section: {raw!r}")
        key, value = line.split("=", 1)
        current[key] = value
    try:
        summary = sections["summary"]
        means = [float(sections[name]["mean"]) for name in METRICS]
        n_trials = int(summary["n_trials"])
        per_trial = [tuple(float(sections[name][f"trial.{t}"]) for name in METRICS) for t in range(n_trials)]
        per_class = {
            int(sec.split(".", 1)[1]): tuple(float(body[name]) for name in METRICS)
            for sec, body in sections.items() if sec.startswith("class.")
        }
        missing = [int(c) for c in summary.get("missing_classes", "").split(",") if c]
        return EvalReport(*means, k=int(summary["k"]), r=int(summary["r"]), per_class=per_class,
                          n_trials=n_trials, per_trial=per_trial, missing_classes=missing,
                          n_queries=int(summary["n_queries"]), label=summary.get("label", ""))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed report: {exc}") from None


def parse_reports(text: str) -> list[EvalReport]:
    """Split a multi-report file (one ``[summary]`` per report) and parse each."""
    chunks = text.split("[summary]")
    if chunks[0].strip():
        raise FormatError("text before the first [summary] section")
    return [parse_report("[summary]" + chunk) for chunk in chunks[1:]]


def format_table(reports: list[EvalReport]) -> str:
    """Tab-separated rows (label, metric, value) for plotting tools."""
    rows = ["label\tmetric\tvalue"]
    for rep in reports:
        for name, value in zip(METRICS, rep.values()):
            rows.append(f"{rep.label or '-'}\t{name}\t{value:.6f}")
    return "\n".join(rows) + "\n"
