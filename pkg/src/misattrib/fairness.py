"""Effectiveness metrics and the misattribution-unfairness suite.

The central quantity is MAUI_k: the total excess of top-k appearances over
the random-ranking expectation E_k, normalized by its worst-case value

    MAUI_k = sum_j max(0, c_j - E_k) / (k * (N_q - E_k)),   E_k = ceil(k * N_q / N_h)

where c_j counts the queries, not written by author j, whose top k contains j.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, DegenerateError
from .ranking import RankTable, TopKSlice

DEFAULT_KS = (5, 10, 15, 20)
DEFAULT_MULTIPLIERS = (2, 4, 5)


def expected_count(k: int, n_haystack: int, n_queries: int) -> int:
    """E_k = ceil(k * N_q / N_h), in integer arithmetic."""
    if k < 1 or n_haystack < 1 or n_queries < 1:
        raise ConfigError("k, N_h and N_q must be positive")
    if k > n_haystack:
        raise ConfigError(f"k={k} exceeds haystack size {n_haystack}")
    return -(-k * n_queries // n_haystack)


@dataclass
class TopKTally:
    """Per-author top-k appearance counts, ordered like ``author_ids``."""

    k: int
    n_haystack: int
    n_queries: int
    author_ids: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (len(self.author_ids),):
            raise DataError("counts must align with author_ids")
        if len(self.author_ids) != self.n_haystack:
            raise DataError("tally must cover every haystack author")

    @property
    def expected(self) -> int:
        return expected_count(self.k, self.n_haystack, self.n_queries)

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.author_ids, self.counts.tolist()))

    def __add__(self, other: "TopKTally") -> "TopKTally":
        if (self.k, self.author_ids) != (other.k, other.author_ids):
            raise DataError("cannot merge tallies over different k or haystacks")
        return TopKTally(
            self.k,
            self.n_haystack,
            self.n_queries + other.n_queries,
            self.author_ids,
            self.counts + other.counts,
        )

    @classmethod
    def from_counts(
        cls, counts: Mapping[str, int] | Sequence[int], k: int, n_queries: int
    ) -> "TopKTally":
        if isinstance(counts, Mapping):
            ids = tuple(sorted(counts))
            values = [counts[a] for a in ids]
        else:
            ids = tuple(f"a{j:06d}" for j in range(len(counts)))
            values = list(counts)
        return cls(k, len(ids), n_queries, ids, np.asarray(values))


def tally_topk(
    slices: Iterable[TopKSlice],
    k: int,
    haystack_ids: Sequence[str],
    include_self: bool = False,
) -> TopKTally:
    """Count, per haystack author, the queries whose top ``k`` contains them.

    A query's own author is skipped unless ``include_self`` is set.
    """
    ids = tuple(sorted(haystack_ids))
    index = {a: j for j, a in enumerate(ids)}
    counts = np.zeros(len(ids), dtype=np.int64)
    n_q = 0
    for s in slices:
        n_q += 1
        top = s.author_ids[:k]
        if len(top) < min(k, len(ids)):
            raise DataError(f"slice for {s.query_id} has {len(top)} entries, need {k}")
        for a in top:
            if a not in index:
                raise DataError(f"author {a!r} in slice {s.query_id} is not in the haystack")
            if a != s.true_author_id or include_self:
                counts[index[a]] += 1
    return TopKTally(k, len(ids), n_q, ids, counts)


def tally_from_ranks(
    ranks: np.ndarray,
    needle_cols: np.ndarray,
    k: int,
    author_ids: Sequence[str],
    include_self: bool = False,
) -> TopKTally:
    """Tally from a block of dense ranks; ``needle_cols`` holds each query's true-author column (-1 if absent)."""
    hits = ranks <= k
    counts = hits.sum(axis=0, dtype=np.int64)
    if not include_self:
        rows = np.flatnonzero(needle_cols >= 0)
        self_hits = hits[rows, needle_cols[rows]]
        np.subtract.at(counts, needle_cols[rows][self_hits], 1)
    return TopKTally(k, len(author_ids), ranks.shape[0], tuple(author_ids), counts)


def tally_table(table: RankTable, k: int, include_self: bool = False) -> TopKTally:
    index = {a: j for j, a in enumerate(table.author_ids)}
    cols = np.array([index.get(t, -1) for t in table.true_author_ids], dtype=np.intp)
    return tally_from_ranks(table.ranks, cols, k, table.author_ids, include_self)


def maui_fraction(tally: TopKTally) -> Fraction:
    e_k = tally.expected
    if tally.n_queries <= e_k:
        raise DegenerateError(
            f"degenerate configuration: N_q={tally.n_queries} <= E_k={e_k} (k too close to N_h)"
        )
    excess = int(np.maximum(tally.counts - e_k, 0).sum())
    return Fraction(excess, tally.k * (tally.n_queries - e_k))


def maui(tally: TopKTally) -> float:
    """Misattribution unfairness index in [0, 1]; 0 is most fair."""
    return float(maui_fraction(tally))


def recall_at_k(needle_ranks: Sequence[int], k: int) -> float:
    ranks = np.asarray(needle_ranks)
    if ranks.size == 0:
        raise DataError("recall_at_k of an empty rank list")
    if np.any(ranks < 1):
        raise DataError("ranks must be >= 1")
    return float(np.count_nonzero(ranks <= k)) / ranks.size


def mean_reciprocal_rank(needle_ranks: Sequence[int]) -> float:
    ranks = np.asarray(needle_ranks, dtype=np.float64)
    if ranks.size == 0:
        raise DataError("mean_reciprocal_rank of an empty rank list")
    if np.any(ranks < 1):
        raise DataError("ranks must be >= 1")
    return float(np.mean(1.0 / ranks))


def per_author_mrr(
    true_author_ids: Sequence[str], needle_ranks: Sequence[int]
) -> dict[str, float]:
    """Mean reciprocal rank of each author over their own queries, keyed in sorted order."""
    groups: dict[str, list[int]] = defaultdict(list)
    for author, rank in zip(true_author_ids, needle_ranks, strict=True):
        groups[author].append(int(rank))
    return {a: mean_reciprocal_rank(groups[a]) for a in sorted(groups)}


def per_author_mrr_table(table: RankTable) -> dict[str, float]:
    return per_author_mrr(table.true_author_ids, table.needle_ranks())


def exceed_table(tally: TopKTally, multipliers: Sequence[float] = DEFAULT_MULTIPLIERS) -> dict[float, int]:
    """Number of authors with ``c_j > m * E_k`` for each multiplier ``m``."""
    e_k = tally.expected
    out = {}
    for m in multipliers:
        if m <= 0:
            raise ConfigError(f"multipliers must be positive, got {m}")
        bound = Fraction(m) * e_k
        # c > bound  <=>  c > floor(bound) for integer c
        out[m] = int(np.count_nonzero(tally.counts > math.floor(bound)))
    return out


@dataclass(frozen=True)
class RiskStats:
    max: float
    mean: float
    std: float
    n_authors: int


def risk_ratio_stats(tally: TopKTally, population: str = "retrieved") -> RiskStats:
    """Max, mean and population std of ``u_j = c_j / E_k``.

    ``population="retrieved"`` uses authors with ``c_j > 0``; ``"all"`` uses
    every haystack author.
    """
    if population not in ("retrieved", "all"):
        raise ConfigError(f"unknown risk population {population!r}")
    counts = tally.counts if population == "all" else tally.counts[tally.counts > 0]
    if counts.size == 0:
        raise DataError("risk ratio statistics of an empty tally")
    u = counts / tally.expected
    return RiskStats(float(u.max()), float(u.mean()), float(u.std()), int(counts.size))


@dataclass
class KRecord:
    k: int
    expected: int
    maui: float


@dataclass
class FairnessReport:
    n_haystack: int
    n_queries: int
    records: list[KRecord]
    exceed_k: int
    exceed: dict[float, int]
    risk: RiskStats
    risk_population: str
    include_self_hits: bool = False
    extra: dict = field(default_factory=dict)

    def maui_by_k(self) -> dict[int, float]:
        return {r.k: r.maui for r in self.records}

    def to_dict(self) -> dict:
        return {
            "n_haystack": self.n_haystack,
            "n_queries": self.n_queries,
            "include_self_hits": self.include_self_hits,
            "maui": [asdict(r) for r in self.records],
            "exceed": {
                "k": self.exceed_k,
                "expected": next(
                    (r.expected for r in self.records if r.k == self.exceed_k),
                    expected_count(self.exceed_k, self.n_haystack, self.n_queries),
                ),
                "counts": [{"multiplier": m, "authors": c} for m, c in self.exceed.items()],
            },
            "risk_ratio": {"k": self.exceed_k, "population": self.risk_population, **asdict(self.risk)},
            **self.extra,
        }


def fairness_report(
    tallies: Mapping[int, TopKTally],
    exceed_k: int = 10,
    multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
    risk_population: str = "retrieved",
    include_self_hits: bool = False,
) -> FairnessReport:
    """Assemble MAUI over every tallied k plus exceed/risk tables at ``exceed_k``."""
    if exceed_k not in tallies:
        raise ConfigError(f"no tally for exceed k={exceed_k}")
    any_tally = tallies[exceed_k]
    records = [KRecord(k, t.expected, maui(t)) for k, t in sorted(tallies.items())]
    return FairnessReport(
        n_haystack=any_tally.n_haystack,
        n_queries=any_tally.n_queries,
        records=records,
        exceed_k=exceed_k,
        exceed=exceed_table(tallies[exceed_k], multipliers),
        risk=risk_ratio_stats(tallies[exceed_k], risk_population),
        risk_population=risk_population,
        include_self_hits=include_self_hits,
    )
