"""Run configuration: one JSON document, overridable from the command line."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .embedder import BackendDescriptor
from .features import DEFAULT_COMPONENTS, FUSION_STRATEGIES
from .gbdt import TrainParams

# keys that never change results, so they stay out of the fingerprint
VOLATILE_KEYS = ("output_dir", "cache_dir", "jobs")

QUICK_SEEDS = 3
DEFAULT_SEEDS = 30


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CohortSource:
    kind: str = "synthetic"
    path: Optional[str] = None
    format: str = "csv"
    labs_path: Optional[str] = None
    seed: int = 7
    n: int = 256
    prevalence: float = 58 / 256
    signal: str = "clinical"

    def __post_init__(self):
        if self.kind not in ("synthetic", "file"):
            raise ConfigError(f"cohort.kind must be 'synthetic' or 'file', not {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ConfigError("cohort.path is required for a file cohort")
        if self.format not in ("csv", "jsonl"):
            raise ConfigError(f"unknown cohort format {self.format!r}")


@dataclass(frozen=True)
class RunConfig:
    cohort: CohortSource = field(default_factory=CohortSource)
    backend: BackendDescriptor = field(default_factory=lambda: BackendDescriptor("hash-128", 128))
    pooling: str = "mean"
    strategy: str = "modality_aware"
    params: TrainParams = field(default_factory=TrainParams)
    k: int = 5
    seeds: tuple = tuple(range(DEFAULT_SEEDS))
    pca_components: int = DEFAULT_COMPONENTS
    early_stopping: str = "inner_split"
    permutation: bool = True
    subgroups: bool = True
    output_dir: str = "runs/default"
    cache_dir: Optional[str] = None
    jobs: int = 1

    def __post_init__(self):
        if self.strategy not in FUSION_STRATEGIES:
            raise ConfigError(f"unknown fusion strategy {self.strategy!r}")
        if self.pooling not in self.backend.pooling_strategies:
            raise ConfigError(f"pooling {self.pooling!r} not supported by backend {self.backend.backend_id!r}")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.early_stopping not in ("inner_split", "validation_fold"):
            raise ConfigError(f"unknown early-stopping mode {self.early_stopping!r}")
        if self.pca_components < 1:
            raise ConfigError("pca_components must be >= 1")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "backend":
                v = v.to_dict()
            elif hasattr(v, "__dataclass_fields__"):
                v = {g.name: getattr(v, g.name) for g in fields(v)}
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def to_dict_for_report(self) -> dict:
        return {k: v for k, v in self.to_dict().items() if k not in VOLATILE_KEYS}

    def fingerprint(self) -> str:
        text = json.dumps(self.to_dict_for_report(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _seeds(value):
    if isinstance(value, int) and not isinstance(value, bool):
        if value < 1:
            raise ConfigError("seeds must be a positive count or a list")
        return tuple(range(value))
    if isinstance(value, list) and all(isinstance(s, int) for s in value):
        return tuple(value)
    raise ConfigError("seeds must be a positive count or a list of integers")


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = copy.deepcopy(data)
    names = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if "cohort" in data:
        data["cohort"] = _build(CohortSource, data["cohort"], "cohort")
    if "backend" in data:
        data["backend"] = _build(BackendDescriptor, data["backend"], "backend")
    if "params" in data:
        data["params"] = _build(TrainParams, data["params"], "params")
    if "seeds" in data:
        data["seeds"] = _seeds(data["seeds"])
    try:
        return RunConfig(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def merge(config: Optional[RunConfig], overrides: dict) -> RunConfig:
    """Apply command-line overrides (dotted keys allowed) on top of ``config``."""
    base = (config or RunConfig()).to_dict()
    for key, value in overrides.items():
        if value is None:
            continue
        target = base
        parts = key.split(".")
        for p in parts[:-1]:
            target = target.setdefault(p, {})
        target[parts[-1]] = value
    return config_from_dict(base)
