"""Flat ``key=value`` experiment configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .gemb import PRESETS
from .gmm import CovarianceKind

HASHERS = ("itq", "lsh", "none")
FIT_ON = ("database", "all")


@dataclass(frozen=True)
class PipelineConfig:
    gamma: float = 0.85
    alpha: float = 0.15
    n_components: int | str = "auto"
    covariance: str = "full"
    n_bits: int = 32
    hasher: str = "itq"
    itq_iters: int = 50
    em_max_iters: int = 200
    em_tol: float = 1e-5
    em_reg_covar: float | str = "auto"
    em_n_init: int = 3
    query_fraction: float = 0.1
    stratified: bool = True
    gmm_fit_on: str = "database"
    k: int = 1000
    r: int = 2
    map_top: int | str = "none"
    trials: int = 1
    compare: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "covariance", CovarianceKind.parse(self.covariance).value)
        if isinstance(self.em_reg_covar, int) and not isinstance(self.em_reg_covar, bool):
            object.__setattr__(self, "em_reg_covar", float(self.em_reg_covar))
        if self.hasher not in HASHERS:
            raise ConfigError(f"hasher must be one of {HASHERS}, got {self.hasher!r}")
        if self.gmm_fit_on not in FIT_ON:
            raise ConfigError(f"gmm_fit_on must be one of {FIT_ON}, got {self.gmm_fit_on!r}")
        if self.n_components != "auto" and (not isinstance(self.n_components, int) or self.n_components < 1):
            raise ConfigError(f"n_components must be 'auto' or a positive integer, got {self.n_components!r}")
        if self.em_reg_covar != "auto" and (not isinstance(self.em_reg_covar, float) or self.em_reg_covar < 0):
            raise ConfigError("em_reg_covar must be 'auto' or a non-negative number")
        if self.map_top != "none" and (not isinstance(self.map_top, int) or self.map_top < 1):
            raise ConfigError("map_top must be 'none' or a positive integer")
        if self.n_bits < 1 or self.trials < 1 or self.k < 1 or self.r < 0 or self.seed < 0:
            raise ConfigError("n_bits, trials and k must be >= 1; r and seed >= 0")
        if not 0.0 < self.gamma <= 1.0 or not 0.0 < self.alpha <= 1.0:
            raise ConfigError("gamma and alpha must lie in (0, 1]")

    @property
    def resolved_components(self) -> int:
        return self.n_bits if self.n_components == "auto" else int(self.n_components)

    @property
    def reg_covar(self) -> float | None:
        return None if self.em_reg_covar == "auto" else float(self.em_reg_covar)

    @property
    def map_cutoff(self) -> int | None:
        return None if self.map_top == "none" else int(self.map_top)

    def with_preset(self, name: str) -> "PipelineConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        gamma, alpha = PRESETS[name]
        return dataclasses.replace(self, gamma=gamma, alpha=alpha)

    def updated(self, values: dict[str, str]) -> "PipelineConfig":
        """Copy with string values (from a file or flags) parsed and applied."""
        return dataclasses.replace(self, **{key: _coerce(key, text) for key, text in values.items()})


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}
_AUTO_WORDS = {"n_components": "auto", "em_reg_covar": "auto", "map_top": "none"}


def _coerce(key: str, text):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(text, str):
        return text
    text = text.strip()
    if key in _AUTO_WORDS and text.lower() == _AUTO_WORDS[key]:
        return _AUTO_WORDS[key]
    kind = _FIELD_TYPES[key]
    try:
        if kind.startswith("bool"):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(cfg: PipelineConfig) -> str:
    return "".join(f"{f.name}={_fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


def parse(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    base = base or PipelineConfig()
    preset = values.pop("preset", None)
    if preset is not None:
        base = base.with_preset(preset)
    return base.updated(values)


def load(path) -> PipelineConfig:
    return parse(Path(path).read_text(encoding="utf-8"))
