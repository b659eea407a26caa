"""Run configuration: a JSON document, strictly validated (unknown keys are errors)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .fairness import DEFAULT_KS, DEFAULT_MULTIPLIERS
from .store import ALL, FORMATS
from .synth import PopulationSpec


def _strict(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class InputConfig:
    path: str | None = None
    format: str = "jsonl"
    synthetic: dict | None = None

    def __post_init__(self):
        if (self.path is None) == (self.synthetic is None):
            raise ConfigError("input: give exactly one of 'path' or 'synthetic'")
        if self.format not in FORMATS:
            raise ConfigError(f"input.format must be one of {FORMATS}")


@dataclass
class SplitConfig:
    haystack_docs: int = 16
    query_docs: int = 10


@dataclass
class QueryModeConfig:
    mode: str = "attribution"
    queries_per_author: int = 4
    docs_per_query: int | str = 4

    def __post_init__(self):
        if self.mode not in ("attribution", "needle_mrr"):
            raise ConfigError("query_mode.mode must be 'attribution' or 'needle_mrr'")
        if self.mode == "attribution":
            self.queries_per_author, self.docs_per_query = 1, ALL


@dataclass
class QueryAuthorsConfig:
    count: int | None = None
    seed: int | None = None


@dataclass
class StatsConfig:
    n: int = 300
    alpha: float = 0.05
    seed: int | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("stats.alpha must be in (0, 1)")
        if self.n < 1:
            raise ConfigError("stats.n must be >= 1")


@dataclass
class RunConfig:
    input: InputConfig
    name: str = "run"
    split: SplitConfig | None = None
    query_mode: QueryModeConfig = field(default_factory=QueryModeConfig)
    query_authors: QueryAuthorsConfig = field(default_factory=QueryAuthorsConfig)
    ks: list[int] = field(default_factory=lambda: list(DEFAULT_KS))
    recall_ks: list[int] = field(default_factory=lambda: [8])
    exceed_multipliers: list[float] = field(default_factory=lambda: list(DEFAULT_MULTIPLIERS))
    exceed_k: int = 10
    geometry_bins: int = 20
    histogram_bins: int = 40
    stats: StatsConfig = field(default_factory=StatsConfig)
    include_self_hits: bool = False
    risk_population: str = "retrieved"
    mean_rank_exclude_self: bool = False
    dump_topk: int | None = None
    output_dir: str = "out"
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "input" not in data:
            raise ConfigError("config needs an 'input' section")
        data = dict(data)
        inp = _strict(InputConfig, data.pop("input"), "input")
        if inp.path is not None and base_dir is not None and not Path(inp.path).is_absolute():
            inp.path = str(Path(base_dir) / inp.path)
        split = data.pop("split", None)
        nested = {
            "split": None if split is None else _strict(SplitConfig, split, "split"),
            "query_mode": _strict(QueryModeConfig, data.pop("query_mode", None), "query_mode"),
            "query_authors": _strict(QueryAuthorsConfig, data.pop("query_authors", None), "query_authors"),
            "stats": _strict(StatsConfig, data.pop("stats", None), "stats"),
        }
        try:
            cfg = cls(input=inp, **nested, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, base_dir=path.parent)

    def validate(self) -> None:
        if not self.ks or any(not isinstance(k, int) or k < 1 for k in self.ks):
            raise ConfigError("ks must be a non-empty list of positive integers")
        if any(not isinstance(k, int) or k < 1 for k in self.recall_ks):
            raise ConfigError("recall_ks must be positive integers")
        if any(m <= 0 for m in self.exceed_multipliers):
            raise ConfigError("exceed_multipliers must be positive")
        if self.exceed_k < 1:
            raise ConfigError("exceed_k must be >= 1")
        if self.risk_population not in ("retrieved", "all"):
            raise ConfigError("risk_population must be 'retrieved' or 'all'")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.geometry_bins < 1 or self.histogram_bins < 1:
            raise ConfigError("bin counts must be >= 1")
        if self.input.synthetic is not None:
            self.population_spec()

    def population_spec(self) -> PopulationSpec:
        spec = dict(self.input.synthetic)
        spec.setdefault("seed", self.seed)
        try:
            return PopulationSpec.from_dict(spec)
        except ConfigError as exc:
            raise ConfigError(f"input.synthetic: {exc}") from None

    @property
    def query_author_seed(self) -> int:
        return self.seed if self.query_authors.seed is None else self.query_authors.seed

    @property
    def stats_seed(self) -> int:
        return self.seed if self.stats.seed is None else self.stats.seed

    def resolved(self) -> dict:
        d = asdict(self)
        d["query_authors"]["seed"] = self.query_author_seed
        d["stats"]["seed"] = self.stats_seed
        if self.input.synthetic is not None:
            d["input"]["synthetic"] = self.population_spec().to_dict()
        return d
