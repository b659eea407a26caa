"""One-sided Mann-Whitney U tests on centroid distances of MRR-extreme groups."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from ._rng import derive_rng
from .errors import ConfigError, DataError

EXACT_MAX_N = 20
ALTERNATIVES = ("a_greater", "a_less")


def midranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    out = np.empty(x.size)
    out[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return out


@dataclass(frozen=True)
class HypothesisTestResult:
    hypothesis: str
    n1: int
    n2: int
    u: float
    p_value: float
    alternative: str
    method: str
    alpha: float
    reject: bool
    degenerate: bool = False
    direction: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _exact_sum_counts(doubled_ranks: Sequence[int], n1: int) -> dict[int, int]:
    """Number of size-``n1`` subsets achieving each sum of doubled midranks."""
    # dp[j] maps sum -> count over subsets of size j seen so far
    dp: list[dict[int, int]] = [{0: 1}] + [{} for _ in range(n1)]
    for r in doubled_ranks:
        for j in range(min(n1, len(dp) - 1), 0, -1):
            prev = dp[j - 1]
            if not prev:
                continue
            cur = dp[j]
            for s, c in prev.items():
                cur[s + r] = cur.get(s + r, 0) + c
    return dp[n1]


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(
    sample_a: Sequence[float],
    sample_b: Sequence[float],
    alternative: str = "a_greater",
    alpha: float = 0.05,
    hypothesis: str = "",
    direction: str = "",
) -> HypothesisTestResult:
    """One-sided Mann-Whitney U test; ``U`` is reported for ``sample_a``.

    Uses the exact permutation distribution of the midrank sum when
    ``n1 + n2 <= 20`` and otherwise the normal approximation with tie
    correction and a 0.5 continuity correction. If every value is identical
    the test is undefined: ``p = 1`` and ``degenerate`` is set.
    """
    if alternative not in ALTERNATIVES:
        raise ConfigError(f"alternative must be one of {ALTERNATIVES}")
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    n1, n2 = a.size, b.size
    if n1 < 1 or n2 < 1:
        raise DataError("both samples need at least one value")
    pooled = np.concatenate([a, b])
    if not np.all(np.isfinite(pooled)):
        raise DataError("samples must be finite")
    ranks = midranks(pooled)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2

    def result(p: float, method: str, degenerate: bool = False) -> HypothesisTestResult:
        p = min(1.0, max(0.0, p))
        return HypothesisTestResult(
            hypothesis, n1, n2, u, p, alternative, method, alpha, p < alpha, degenerate, direction
        )

    if np.all(pooled == pooled[0]):
        return result(1.0, "exact" if n <= EXACT_MAX_N else "normal", degenerate=True)

    if n <= EXACT_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        observed = sum(doubled[:n1])
        dist = _exact_sum_counts(doubled, n1)
        total = math.comb(n, n1)
        if alternative == "a_greater":
            hits = sum(c for s, c in dist.items() if s >= observed)
        else:
            hits = sum(c for s, c in dist.items() if s <= observed)
        return result(hits / total, "exact")

    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float((tie_counts.astype(np.float64) ** 3 - tie_counts).sum())
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    mu = n1 * n2 / 2.0
    sd = math.sqrt(var)
    if alternative == "a_greater":
        p = _normal_sf((u - mu - 0.5) / sd)
    else:
        p = _normal_sf(-(u - mu + 0.5) / sd)
    return result(p, "normal")


@dataclass(frozen=True)
class MrrGroups:
    high: tuple[str, ...]
    low: tuple[str, ...]
    random: tuple[str, ...]
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def select_mrr_groups(per_author_mrr: Mapping[str, float], n: int = 300, seed: int = 0) -> MrrGroups:
    """Top-``n`` and bottom-``n`` authors by MRR plus ``n`` uniformly random authors.

    Ties are broken by author id. The random group is drawn from all authors
    and may overlap the extreme groups.
    """
    if n < 1:
        raise ConfigError("group size must be >= 1")
    if len(per_author_mrr) < 2 * n:
        raise DataError(f"need at least {2 * n} authors for groups of {n}, have {len(per_author_mrr)}")
    ordered = sorted(per_author_mrr, key=lambda a: (-per_author_mrr[a], a))
    pool = sorted(per_author_mrr)
    picks = derive_rng(seed, "mrr-random").choice(len(pool), size=n, replace=False)
    return MrrGroups(
        high=tuple(ordered[:n]),
        low=tuple(ordered[-n:]),
        random=tuple(pool[i] for i in sorted(picks)),
        seed=seed,
    )


HYPOTHESES = (
    ("i", "high", "low", "a_greater", "high-MRR farther from centroid than low-MRR"),
    ("ii", "high", "random", "a_greater", "high-MRR farther from centroid than random"),
    ("iii", "low", "random", "a_less", "low-MRR closer to centroid than random"),
)


def run_hypotheses(
    groups: MrrGroups, distances: Mapping[str, float], alpha: float = 0.05
) -> list[HypothesisTestResult]:
    results = []
    for hid, first, second, alternative, direction in HYPOTHESES:
        samples = []
        for name in (first, second):
            members = getattr(groups, name)
            missing = [a for a in members if a not in distances]
            if missing:
                raise DataError(f"no centroid distance for {missing[:3]}")
            samples.append([distances[a] for a in members])
        results.append(
            mann_whitney_u(*samples, alternative=alternative, alpha=alpha, hypothesis=hid, direction=direction)
        )
    return results
