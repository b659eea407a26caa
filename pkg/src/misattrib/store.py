"""Document embeddings grouped by author, with haystack/query splits.

Vectors are L2-normalized on construction, so cosine similarity reduces to a
dot product everywhere downstream. Two on-disk formats are supported:

``jsonl``
    One object per line: ``{"author_id": ..., "doc_id": ..., "vector": [...]}``
    with an optional ``"split"`` key (``"haystack"``, ``"query"``).
``binary-matrix``
    A JSON manifest (``dimension``, ``count``, ``dtype="f32"``, ``records``)
    next to a raw file of ``count x dimension`` little-endian float32 values,
    row-major, rows in manifest order.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._rng import derive_rng
from .errors import ConfigError, DataError, DegenerateError

log = logging.getLogger(__name__)

FORMATS = ("jsonl", "binary-matrix")
ALL = "all"
UNIT_TOL = 1e-6
_SPLIT_NAMES = ("haystack", "query")


@dataclass(frozen=True)
class DocumentEmbedding:
    author_id: str
    doc_id: str
    vector: np.ndarray


@dataclass(frozen=True)
class Split:
    haystack: tuple[str, ...]
    query: tuple[str, ...] = ()


@dataclass(frozen=True)
class AuthorEmbedding:
    author_id: str
    vector: np.ndarray
    doc_count: int


@dataclass(frozen=True)
class QueryEmbedding:
    query_id: str
    true_author_id: str
    vector: np.ndarray
    source_doc_ids: tuple[str, ...] = field(default=())


def _as_unit_rows(vectors: np.ndarray, labels: Sequence[tuple[str, str]]) -> np.ndarray:
    if not np.all(np.isfinite(vectors)):
        row = int(np.argwhere(~np.isfinite(vectors))[0][0])
        raise DataError(f"non-finite component in vector for {labels[row]}")
    norms = np.linalg.norm(vectors, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DataError(f"zero vector for {labels[int(zero[0])]}")
    return vectors / norms[:, None]


class EmbeddingStore:
    """Immutable collection of unit-norm document vectors.

    Rows keep the order in which they were supplied; ``authors`` is sorted.
    ``splits`` maps every author to its haystack/query doc ids, or is None for
    a store that has not been split yet.
    """

    def __init__(
        self,
        author_ids: Sequence[str],
        doc_ids: Sequence[str],
        vectors: np.ndarray,
        splits: Mapping[str, Split] | None = None,
        source: str | None = None,
        metadata: Mapping[str, object] | None = None,
    ):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise DataError("empty store")
        if vectors.shape[1] < 2:
            raise DataError(f"dimension must be >= 2, got {vectors.shape[1]}")
        if not (len(author_ids) == len(doc_ids) == vectors.shape[0]):
            raise DataError("author_ids, doc_ids and vectors differ in length")

        self._author_of = tuple(str(a) for a in author_ids)
        self._doc_ids = tuple(str(d) for d in doc_ids)
        labels = list(zip(self._author_of, self._doc_ids))
        self._vectors = _as_unit_rows(vectors, labels)
        self._vectors.setflags(write=False)

        self._row_of: dict[tuple[str, str], int] = {}
        rows: dict[str, list[int]] = {}
        for i, key in enumerate(labels):
            if key in self._row_of:
                raise DataError(f"duplicate (author_id, doc_id): {key}")
            self._row_of[key] = i
            rows.setdefault(key[0], []).append(i)
        self._rows = {a: np.asarray(r, dtype=np.intp) for a, r in rows.items()}
        self._authors = tuple(sorted(self._rows))

        self._splits = None if splits is None else self._check_splits(splits)
        self._labels: list[str | None] = [None] * len(labels)
        for author, sp in (self._splits or {}).items():
            for name, docs in zip(_SPLIT_NAMES, (sp.haystack, sp.query)):
                for doc in docs:
                    self._labels[self._row_of[(author, doc)]] = name
        self.source = source
        self.metadata = dict(metadata or {})

    def _check_splits(self, splits: Mapping[str, Split]) -> dict[str, Split]:
        missing = set(self._authors) - set(splits)
        if missing:
            raise DataError(f"authors without split assignment: {sorted(missing)[:5]}")
        checked = {}
        for author in self._authors:
            sp = splits[author]
            hay, qry = tuple(sp.haystack), tuple(sp.query)
            if not hay:
                raise DataError(f"author {author!r} has no haystack documents")
            if set(hay) & set(qry):
                raise DataError(f"author {author!r} has overlapping haystack/query splits")
            for doc in hay + qry:
                if (author, doc) not in self._row_of:
                    raise DataError(f"split names unknown document {(author, doc)}")
            checked[author] = Split(hay, qry)
        return checked

    @classmethod
    def from_documents(
        cls,
        documents: Iterable[DocumentEmbedding],
        splits: Mapping[str, Split] | None = None,
        **kwargs,
    ) -> "EmbeddingStore":
        docs = list(documents)
        if not docs:
            raise DataError("empty store")
        dims = {np.asarray(d.vector).shape for d in docs}
        if len(dims) != 1:
            raise DataError(f"dimension mismatch across records: {sorted(dims)}")
        return cls(
            [d.author_id for d in docs],
            [d.doc_id for d in docs],
            np.stack([np.asarray(d.vector, dtype=np.float64) for d in docs]),
            splits=splits,
            **kwargs,
        )

    @property
    def dimension(self) -> int:
        return self._vectors.shape[1]

    @property
    def normalized(self) -> bool:
        return True

    @property
    def authors(self) -> tuple[str, ...]:
        return self._authors

    @property
    def n_documents(self) -> int:
        return self._vectors.shape[0]

    @property
    def splits(self) -> dict[str, Split] | None:
        return None if self._splits is None else dict(self._splits)

    @property
    def is_split(self) -> bool:
        return self._splits is not None

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def rows(self) -> list[tuple[str, str]]:
        return list(zip(self._author_of, self._doc_ids))

    def doc_ids(self, author_id: str) -> tuple[str, ...]:
        return tuple(self._doc_ids[i] for i in self._author_rows(author_id))

    def documents(self, author_id: str) -> tuple[DocumentEmbedding, ...]:
        return tuple(
            DocumentEmbedding(author_id, self._doc_ids[i], self._vectors[i])
            for i in self._author_rows(author_id)
        )

    def vectors_of(self, author_id: str, doc_ids: Sequence[str] | None = None) -> np.ndarray:
        if doc_ids is None:
            return self._vectors[self._author_rows(author_id)]
        try:
            rows = [self._row_of[(author_id, d)] for d in doc_ids]
        except KeyError as exc:
            raise DataError(f"unknown document {exc.args[0]}") from None
        return self._vectors[rows]

    def split_of(self, author_id: str) -> Split:
        if self._splits is None:
            raise DataError("store is not split")
        try:
            return self._splits[author_id]
        except KeyError:
            raise DataError(f"unknown author id {author_id!r}") from None

    def _author_rows(self, author_id: str) -> np.ndarray:
        try:
            return self._rows[author_id]
        except KeyError:
            raise DataError(f"unknown author id {author_id!r}") from None

    def split_label(self, row: int) -> str | None:
        return self._labels[row]

    def checksum(self) -> str:
        """SHA-256 over ids, split labels and float64 vector bytes, in row order."""
        h = hashlib.sha256()
        for i, (a, d) in enumerate(self.rows):
            h.update(json.dumps([a, d, self.split_label(i)]).encode("utf-8"))
        h.update(np.ascontiguousarray(self._vectors, dtype="<f8").tobytes())
        return h.hexdigest()


# -- I/O ---------------------------------------------------------------------


def _splits_from_labels(labels: list[tuple[str, str, str | None]]) -> dict[str, Split] | None:
    present = [lab is not None for _, _, lab in labels]
    if not any(present):
        return None
    hay: dict[str, list[str]] = {}
    qry: dict[str, list[str]] = {}
    for author, doc, lab in labels:
        hay.setdefault(author, [])
        qry.setdefault(author, [])
        if lab == "haystack":
            hay[author].append(doc)
        elif lab == "query":
            qry[author].append(doc)
        elif lab is not None:
            raise DataError(f"unknown split label {lab!r}")
    return {a: Split(tuple(hay[a]), tuple(qry[a])) for a in hay}


def _read_jsonl(path: Path) -> EmbeddingStore:
    authors, docs, vectors, labels = [], [], [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if not isinstance(rec, dict) or not {"author_id", "doc_id", "vector"} <= rec.keys():
                raise DataError(f"{path}:{lineno}: record needs author_id, doc_id, vector")
            extra = rec.keys() - {"author_id", "doc_id", "vector", "split"}
            if extra:
                raise DataError(f"{path}:{lineno}: unknown keys {sorted(extra)}")
            vec = rec["vector"]
            if not isinstance(vec, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in vec
            ):
                raise DataError(f"{path}:{lineno}: vector must be an array of numbers")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DataError(f"{path}:{lineno}: dimension mismatch ({len(vec)} != {dim})")
            authors.append(str(rec["author_id"]))
            docs.append(str(rec["doc_id"]))
            vectors.append(vec)
            labels.append((authors[-1], docs[-1], rec.get("split")))
    if not vectors:
        raise DataError(f"{path}: empty file")
    return EmbeddingStore(
        authors,
        docs,
        np.asarray(vectors, dtype=np.float64),
        splits=_splits_from_labels(labels),
        source=str(path),
    )


def _data_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".f32")


def _read_binary(path: Path) -> EmbeddingStore:
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid manifest ({exc})") from None
    for key in ("dimension", "count", "dtype", "records"):
        if key not in manifest:
            raise DataError(f"{path}: manifest missing {key!r}")
    if manifest["dtype"] != "f32":
        raise DataError(f"{path}: unsupported dtype {manifest['dtype']!r}")
    dim, count, records = int(manifest["dimension"]), int(manifest["count"]), manifest["records"]
    if count == 0 or not records:
        raise DataError(f"{path}: empty file")
    if len(records) != count:
        raise DataError(f"{path}: count={count} but {len(records)} records listed")
    data_file = path.parent / manifest.get("data", _data_path(path).name)
    raw = np.fromfile(data_file, dtype="<f4")
    if raw.size != count * dim:
        raise DataError(
            f"{data_file}: expected {count}x{dim} float32 values, found {raw.size}"
        )
    labels = [(str(r["author_id"]), str(r["doc_id"]), r.get("split")) for r in records]
    return EmbeddingStore(
        [a for a, _, _ in labels],
        [d for _, d, _ in labels],
        raw.reshape(count, dim).astype(np.float64),
        splits=_splits_from_labels(labels),
        source=str(path),
    )


def load_store(path: str | Path, format: str = "jsonl") -> EmbeddingStore:
    path = Path(path)
    if format not in FORMATS:
        raise ConfigError(f"unknown store format {format!r}; expected one of {FORMATS}")
    if not path.exists():
        raise DataError(f"no such file: {path}")
    store = _read_jsonl(path) if format == "jsonl" else _read_binary(path)
    log.info("loaded %d documents from %s (d=%d)", store.n_documents, path, store.dimension)
    return store


def write_store(store: EmbeddingStore, path: str | Path, format: str = "jsonl") -> list[Path]:
    """Write ``store`` to ``path``; returns the files written."""
    path = Path(path)
    if format not in FORMATS:
        raise ConfigError(f"unknown store format {format!r}; expected one of {FORMATS}")
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = store.rows
    if format == "jsonl":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, (author, doc) in enumerate(rows):
                rec = {"author_id": author, "doc_id": doc, "vector": store.vectors[i].tolist()}
                label = store.split_label(i)
                if label is not None:
                    rec["split"] = label
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return [path]

    data_file = _data_path(path)
    records = []
    for i, (author, doc) in enumerate(rows):
        rec = {"author_id": author, "doc_id": doc}
        label = store.split_label(i)
        if label is not None:
            rec["split"] = label
        records.append(rec)
    manifest = {
        "dimension": store.dimension,
        "count": store.n_documents,
        "dtype": "f32",
        "data": data_file.name,
        "records": records,
    }
    np.ascontiguousarray(store.vectors, dtype="<f4").tofile(data_file)
    path.write_text(json.dumps(manifest, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    return [path, data_file]


# -- splitting and aggregation -------------------------------------------------


def split_documents(
    store: EmbeddingStore,
    haystack_docs_per_author: int,
    query_docs_per_author: int,
    seed: int,
) -> tuple[EmbeddingStore, list[str]]:
    """Sample disjoint haystack/query document sets per author.

    Authors with fewer than ``haystack + query`` documents are dropped and
    listed in the second return value. The returned store keeps only the
    sampled documents.
    """
    if haystack_docs_per_author <= 0 or query_docs_per_author <= 0:
        raise ConfigError("split sizes must be positive")
    need = haystack_docs_per_author + query_docs_per_author
    keep_rows: list[int] = []
    splits: dict[str, Split] = {}
    dropped: list[str] = []
    for author in store.authors:
        rows = store._author_rows(author)
        if rows.size < need:
            dropped.append(author)
            continue
        pick = derive_rng(seed, "split", author).permutation(rows.size)[:need]
        hay = np.sort(pick[:haystack_docs_per_author])
        qry = np.sort(pick[haystack_docs_per_author:])
        splits[author] = Split(
            tuple(store._doc_ids[rows[i]] for i in hay),
            tuple(store._doc_ids[rows[i]] for i in qry),
        )
        keep_rows.extend(rows[np.sort(pick)].tolist())
    if not splits:
        raise DataError(f"all {len(dropped)} authors dropped: fewer than {need} documents each")
    if dropped:
        log.info("dropped %d authors with fewer than %d documents", len(dropped), need)
    keep_rows.sort()
    return (
        EmbeddingStore(
            [store._author_of[i] for i in keep_rows],
            [store._doc_ids[i] for i in keep_rows],
            store.vectors[keep_rows],
            splits=splits,
            source=store.source,
            metadata=store.metadata,
        ),
        dropped,
    )


def aggregate_author(vectors: Sequence[np.ndarray] | np.ndarray, method: str = "mean") -> np.ndarray:
    """Mean of unit vectors, re-normalized to unit length."""
    if method != "mean":
        raise ConfigError(f"unknown aggregation method {method!r}")
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError("cannot aggregate an empty list of vectors")
    mean = arr.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm <= 1e-12:
        raise DegenerateError("degenerate aggregate: mean of vectors is the zero vector")
    return mean / norm


def build_haystack(store: EmbeddingStore) -> list[AuthorEmbedding]:
    out = []
    for author in store.authors:
        docs = store.split_of(author).haystack
        try:
            vec = aggregate_author(store.vectors_of(author, docs))
        except DegenerateError as exc:
            raise DegenerateError(f"author {author!r}: {exc}") from None
        out.append(AuthorEmbedding(author, vec, len(docs)))
    return out


def sample_queries(
    store: EmbeddingStore,
    query_author_ids: Sequence[str],
    queries_per_author: int = 1,
    docs_per_query: int | str = ALL,
    seed: int = 0,
) -> list[QueryEmbedding]:
    """Build query embeddings from each author's query-split documents.

    With ``docs_per_query=ALL`` every query aggregates the whole query split.
    Otherwise, when ``queries_per_author * docs_per_query`` fits in the split,
    the queries use disjoint document subsets; if not, each query samples
    independently (without replacement inside a query).
    """
    if queries_per_author < 1:
        raise ConfigError("queries_per_author must be >= 1")
    if docs_per_query != ALL and (not isinstance(docs_per_query, int) or docs_per_query < 1):
        raise ConfigError(f"docs_per_query must be a positive integer or {ALL!r}")
    out = []
    for author in query_author_ids:
        docs = store.split_of(author).query
        if not docs:
            raise DataError(f"author {author!r} has no query documents")
        if docs_per_query == ALL:
            chosen = [docs] * queries_per_author
        else:
            if len(docs) < docs_per_query:
                raise DataError(
                    f"author {author!r} has {len(docs)} query documents, {docs_per_query} needed"
                )
            rng = derive_rng(seed, "query", author)
            if queries_per_author * docs_per_query <= len(docs):
                perm = rng.permutation(len(docs))
                picks = [perm[i * docs_per_query:(i + 1) * docs_per_query] for i in range(queries_per_author)]
            else:
                picks = [rng.choice(len(docs), docs_per_query, replace=False) for _ in range(queries_per_author)]
            chosen = [tuple(docs[i] for i in sorted(p)) for p in picks]
        for idx, doc_ids in enumerate(chosen):
            try:
                vec = aggregate_author(store.vectors_of(author, doc_ids))
            except DegenerateError as exc:
                raise DegenerateError(f"query {author}#{idx}: {exc}") from None
            out.append(QueryEmbedding(f"{author}#{idx}", author, vec, tuple(doc_ids)))
    return out
