"""Exact cosine ranking of haystack authors for each query.

Ranks are dense (1..N_h, rank 1 = most similar). Ties in similarity go to
the smaller author id, which is also the haystack's storage order, so a
stable descending sort on similarity gives the tie-break for free.

Similarities are row-wise float64 reductions rather than a BLAS matrix
product: the value for (query, author) then depends only on the two vectors,
never on block size or thread count, and identical vectors tie exactly.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .store import AuthorEmbedding, QueryEmbedding

BLOCK_SIZE = 64
_ELEMENT_BUDGET = 1 << 24


@dataclass(frozen=True)
class RankTable:
    """Dense ranks of every haystack author for every query.

    ``ranks[i, j]`` is the rank of ``author_ids[j]`` for query ``i``.
    """

    author_ids: tuple[str, ...]
    query_ids: tuple[str, ...]
    true_author_ids: tuple[str, ...]
    ranks: np.ndarray

    @property
    def n_haystack(self) -> int:
        return len(self.author_ids)

    @property
    def n_queries(self) -> int:
        return len(self.query_ids)

    def row(self, i: int) -> dict[str, int]:
        return dict(zip(self.author_ids, self.ranks[i].tolist()))

    def needle_ranks(self) -> np.ndarray:
        """Rank of each query's true author; raises if one is not in the haystack."""
        return needle_positions(self.author_ids, self.true_author_ids, self.ranks)


@dataclass(frozen=True)
class TopKSlice:
    query_id: str
    true_author_id: str
    author_ids: tuple[str, ...]
    scores: tuple[float, ...]


class Haystack:
    """Author matrix in sorted-id order, shared read-only across workers."""

    def __init__(self, authors: Sequence[AuthorEmbedding]):
        if not authors:
            raise DataError("empty haystack")
        ordered = sorted(authors, key=lambda a: a.author_id)
        self.author_ids = tuple(a.author_id for a in ordered)
        if len(set(self.author_ids)) != len(self.author_ids):
            raise DataError("duplicate author id in haystack")
        self.matrix = np.stack([np.asarray(a.vector, dtype=np.float64) for a in ordered])
        self.matrix.setflags(write=False)
        self.index = {a: j for j, a in enumerate(self.author_ids)}

    def __len__(self) -> int:
        return len(self.author_ids)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]


def _as_haystack(haystack: Haystack | Sequence[AuthorEmbedding]) -> Haystack:
    return haystack if isinstance(haystack, Haystack) else Haystack(haystack)


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float((a * b).sum())


def similarities(queries: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """(n_queries, N_h) float64 similarity block."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != matrix.shape[1]:
        raise DataError(f"dimension mismatch: {queries.shape[1]} vs {matrix.shape[1]}")
    n_h, d = matrix.shape
    out = np.empty((queries.shape[0], n_h))
    step = max(1, _ELEMENT_BUDGET // max(1, queries.shape[0] * d))
    for lo in range(0, n_h, step):
        hi = min(n_h, lo + step)
        out[:, lo:hi] = (queries[:, None, :] * matrix[None, lo:hi, :]).sum(axis=-1)
    return out


def _ranks_from_sims(sims: np.ndarray) -> np.ndarray:
    order = np.argsort(-sims, axis=1, kind="stable")
    ranks = np.empty(sims.shape, dtype=np.int32)
    rows = np.arange(sims.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, sims.shape[1] + 1, dtype=np.int32)
    return ranks


def _topk_from_sims(sims: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Column indices and scores of the top ``k`` per row, tie-broken by index."""
    n_h = sims.shape[1]
    k = min(k, n_h)
    idx = np.empty((sims.shape[0], k), dtype=np.intp)
    for i, row in enumerate(sims):
        if k == n_h:
            cand = np.arange(n_h)
        else:
            kth = np.partition(row, n_h - k)[n_h - k]
            cand = np.flatnonzero(row >= kth)
        idx[i] = cand[np.argsort(-row[cand], kind="stable")[:k]]
    return idx, np.take_along_axis(sims, idx, axis=1)


def _query_matrix(queries: Sequence[QueryEmbedding]) -> np.ndarray:
    return np.stack([np.asarray(q.vector, dtype=np.float64) for q in queries])


def rank_query(query: QueryEmbedding, haystack: Haystack | Sequence[AuthorEmbedding]) -> np.ndarray:
    """Dense rank array aligned with the haystack's sorted author ids."""
    hs = _as_haystack(haystack)
    return _ranks_from_sims(similarities(query.vector, hs.matrix))[0]


def iter_rank_blocks(
    queries: Sequence[QueryEmbedding],
    haystack: Haystack | Sequence[AuthorEmbedding],
    block_size: int = BLOCK_SIZE,
    threads: int = 1,
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(start, ranks)`` blocks in query order.

    Blocks may be computed concurrently; they are always yielded in order.
    """
    hs = _as_haystack(haystack)
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    starts = range(0, len(queries), block_size)

    def work(start: int) -> np.ndarray:
        block = _query_matrix(queries[start:start + block_size])
        return _ranks_from_sims(similarities(block, hs.matrix))

    if threads == 1:
        for s in starts:
            yield s, work(s)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # bounded look-ahead keeps memory at O(threads * block * N_h)
        pending = []
        for s in starts:
            pending.append((s, pool.submit(work, s)))
            if len(pending) >= 2 * threads:
                s0, fut = pending.pop(0)
                yield s0, fut.result()
        for s0, fut in pending:
            yield s0, fut.result()


def rank_batch(
    queries: Sequence[QueryEmbedding],
    haystack: Haystack | Sequence[AuthorEmbedding],
    mode: str = "full",
    k: int | None = None,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> RankTable | list[TopKSlice]:
    """Rank every query against the haystack.

    ``mode="full"`` returns a :class:`RankTable`; ``mode="top_k"`` returns one
    :class:`TopKSlice` per query and never holds more than a block of
    similarities in memory.
    """
    hs = _as_haystack(haystack)
    queries = list(queries)
    if mode == "full":
        ranks = np.empty((len(queries), len(hs)), dtype=np.int32)
        for start, block in iter_rank_blocks(queries, hs, block_size, threads):
            ranks[start:start + block.shape[0]] = block
        return RankTable(
            hs.author_ids,
            tuple(q.query_id for q in queries),
            tuple(q.true_author_id for q in queries),
            ranks,
        )
    if mode != "top_k":
        raise ConfigError(f"unknown ranking mode {mode!r}")
    if k is None or k < 1:
        raise ConfigError("top_k mode needs k >= 1")

    def work(start: int) -> list[TopKSlice]:
        chunk = queries[start:start + block_size]
        idx, scores = _topk_from_sims(similarities(_query_matrix(chunk), hs.matrix), k)
        return [
            TopKSlice(
                q.query_id,
                q.true_author_id,
                tuple(hs.author_ids[j] for j in idx[i]),
                tuple(scores[i].tolist()),
            )
            for i, q in enumerate(chunk)
        ]

    starts = range(0, len(queries), block_size)
    if threads == 1:
        parts = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    return [s for part in parts for s in part]


def needle_positions(
    author_ids: Sequence[str], true_author_ids: Sequence[str], ranks: np.ndarray
) -> np.ndarray:
    index = {a: j for j, a in enumerate(author_ids)}
    try:
        cols = np.fromiter((index[t] for t in true_author_ids), dtype=np.intp, count=len(true_author_ids))
    except KeyError as exc:
        raise DataError(f"true author {exc.args[0]!r} is not in the haystack") from None
    return ranks[np.arange(len(cols)), cols]


def reciprocal_rank(ranks: Mapping[str, int], true_author_id: str) -> float:
    """``1 / rank`` of the true author in one query's rank mapping."""
    try:
        return 1.0 / ranks[true_author_id]
    except KeyError:
        raise DataError(f"true author {true_author_id!r} is not in the haystack") from None


def write_topk_csv(slices: Sequence[TopKSlice], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "true_author_id", "rank", "author_id", "similarity"])
        for s in slices:
            for r, (a, score) in enumerate(zip(s.author_ids, s.scores), 1):
                w.writerow([s.query_id, s.true_author_id, r, a, repr(score)])
