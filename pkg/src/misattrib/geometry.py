"""Centroid-distance analysis of a haystack.

Distance to the centroid is ``1 - cos(v, c)`` in [0, 2]. Mean rank is an
author's average rank over all queries, so a random ranking gives every
author ``(N_h + 1) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, DegenerateError
from .ranking import RankTable
from .stats import midranks
from .store import AuthorEmbedding


def centroid(authors: Sequence[AuthorEmbedding] | np.ndarray) -> np.ndarray:
    """Component-wise mean of the author vectors; not re-normalized."""
    if isinstance(authors, np.ndarray):
        mat = authors
    else:
        if not authors:
            raise DataError("centroid of an empty author list")
        mat = np.stack([np.asarray(a.vector, dtype=np.float64) for a in authors])
    if mat.shape[0] == 0:
        raise DataError("centroid of an empty author list")
    return mat.mean(axis=0)


def distance_to_centroid(v: np.ndarray, c: np.ndarray) -> float:
    return float(distances_to_centroid(np.atleast_2d(v), c)[0])


def distances_to_centroid(vectors: np.ndarray, c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    norm = np.linalg.norm(c)
    if norm <= 1e-12:
        raise DegenerateError("degenerate centroid: zero vector")
    cos = (np.asarray(vectors, dtype=np.float64) * (c / norm)).sum(axis=1)
    return np.clip(1.0 - cos, 0.0, 2.0)


def min_max_normalize(values: Sequence[float]) -> np.ndarray:
    """Scale to [0, 1]; a constant input maps to all zeros."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise DataError("cannot normalize an empty list")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    out = (x - lo) / (hi - lo)
    out[x == lo] = 0.0
    out[x == hi] = 1.0
    return out


class MeanRankAccumulator:
    """Streaming per-author rank sums, fed one rank block at a time."""

    def __init__(self, author_ids: Sequence[str], exclude_self: bool = False):
        self.author_ids = tuple(author_ids)
        self.exclude_self = exclude_self
        self.sums = np.zeros(len(self.author_ids), dtype=np.int64)
        self.counts = np.zeros(len(self.author_ids), dtype=np.int64)

    def add(self, ranks: np.ndarray, needle_cols: np.ndarray) -> None:
        self.sums += ranks.sum(axis=0, dtype=np.int64)
        self.counts += ranks.shape[0]
        if self.exclude_self:
            rows = np.flatnonzero(needle_cols >= 0)
            np.subtract.at(self.sums, needle_cols[rows], ranks[rows, needle_cols[rows]].astype(np.int64))
            np.subtract.at(self.counts, needle_cols[rows], 1)

    def result(self) -> dict[str, float]:
        if np.any(self.counts == 0):
            raise DataError("an author has no queries to average over")
        return dict(zip(self.author_ids, (self.sums / self.counts).tolist()))


def mean_rank_per_author(table: RankTable, exclude_self: bool = False) -> dict[str, float]:
    if not isinstance(table, RankTable):
        raise DataError("mean rank needs a full rank table, not top-k slices")
    acc = MeanRankAccumulator(table.author_ids, exclude_self)
    index = {a: j for j, a in enumerate(table.author_ids)}
    acc.add(table.ranks, np.array([index.get(t, -1) for t in table.true_author_ids], dtype=np.intp))
    return acc.result()


@dataclass(frozen=True)
class Bin:
    center: float
    value: float | None
    count: int


def _bin_index(x: np.ndarray, lo: float, hi: float, n_bins: int) -> np.ndarray:
    idx = np.floor((x - lo) / (hi - lo) * n_bins).astype(np.intp)
    return np.clip(idx, 0, n_bins - 1)


def _centers(lo: float, hi: float, n_bins: int) -> list[float]:
    w = (hi - lo) / n_bins
    return [lo + (i + 0.5) * w for i in range(n_bins)]


def binned_curve(distances_norm: Sequence[float], mean_ranks: Sequence[float], n_bins: int) -> list[Bin]:
    """Mean of ``mean_ranks`` over equal-width bins of [0, 1]; empty bins have value None."""
    x = np.asarray(distances_norm, dtype=np.float64)
    y = np.asarray(mean_ranks, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError("distances and mean ranks differ in length")
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    idx = _bin_index(x, 0.0, 1.0, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=y, minlength=n_bins)
    return [
        Bin(c, float(s / n) if n else None, int(n))
        for c, s, n in zip(_centers(0.0, 1.0, n_bins), sums, counts)
    ]


def distance_histogram(raw_distances: Sequence[float], n_bins: int) -> list[Bin]:
    """Counts over equal-width bins of [0, 2]."""
    x = np.asarray(raw_distances, dtype=np.float64)
    if x.size == 0:
        raise DataError("histogram of an empty list")
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    counts = np.bincount(_bin_index(x, 0.0, 2.0, n_bins), minlength=n_bins)
    return [Bin(c, None, int(n)) for c, n in zip(_centers(0.0, 2.0, n_bins), counts)]


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation of midranks."""
    if len(xs) != len(ys):
        raise DataError("spearman inputs differ in length")
    if len(xs) < 3:
        raise DataError("spearman needs at least 3 pairs")
    rx = midranks(xs)
    ry = midranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx, syy = float(rx @ rx), float(ry @ ry)
    if sxx == 0 or syy == 0:
        raise DegenerateError("spearman undefined: zero variance")
    r = float(rx @ ry) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class AuthorGeometry:
    author_id: str
    distance: float
    distance_norm: float
    mean_rank: float


@dataclass
class GeometryReport:
    centroid: np.ndarray
    authors: list[AuthorGeometry]
    curve: list[Bin]
    histogram: list[Bin]
    spearman: float | None
    n: int

    def distances(self) -> dict[str, float]:
        return {a.author_id: a.distance for a in self.authors}

    def to_dict(self) -> dict:
        return {
            "centroid": self.centroid.tolist(),
            "spearman": {"coefficient": self.spearman, "n": self.n},
            "authors": [asdict(a) for a in self.authors],
            "curve": [asdict(b) for b in self.curve],
            "histogram": [{"center": b.center, "count": b.count} for b in self.histogram],
        }


def geometry_report(
    haystack: Sequence[AuthorEmbedding],
    mean_ranks: Mapping[str, float],
    n_bins: int = 20,
    histogram_bins: int = 40,
) -> GeometryReport:
    ordered = sorted(haystack, key=lambda a: a.author_id)
    mat = np.stack([np.asarray(a.vector, dtype=np.float64) for a in ordered])
    c = centroid(mat)
    raw = distances_to_centroid(mat, c)
    norm = min_max_normalize(raw)
    ranks = np.array([mean_ranks[a.author_id] for a in ordered])
    try:
        rho = spearman(raw, ranks)
    except (DegenerateError, DataError):
        rho = None
    return GeometryReport(
        centroid=c,
        authors=[
            AuthorGeometry(a.author_id, float(d), float(dn), float(r))
            for a, d, dn, r in zip(ordered, raw, norm, ranks)
        ],
        curve=binned_curve(norm, ranks, n_bins),
        histogram=distance_histogram(raw, histogram_bins),
        spearman=rho,
        n=len(ordered),
    )
