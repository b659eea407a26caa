"""End-to-end run: store -> split -> queries -> rank -> metrics -> geometry -> stats.

Every report file is a pure function of the config and input files. Timing
and thread count live only in ``manifest.json``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import shutil
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import __version__
from ._rng import derive_rng
from .config import RunConfig
from .errors import ConfigError, DataError, InvariantViolation, StageError
from .fairness import (
    TopKTally,
    fairness_report,
    mean_reciprocal_rank,
    per_author_mrr,
    recall_at_k,
    tally_from_ranks,
)
from .geometry import MeanRankAccumulator, geometry_report
from .ranking import Haystack, TopKSlice, _topk_from_sims, iter_rank_blocks, similarities, write_topk_csv
from .stats import run_hypotheses, select_mrr_groups
from .store import build_haystack, load_store, sample_queries, split_documents
from .synth import generate

log = logging.getLogger(__name__)

REPORT_FILES = (
    "effectiveness.csv",
    "maui.csv",
    "exceed.csv",
    "risk_ratios.csv",
    "geometry_curve.csv",
    "distance_histogram.csv",
    "hypotheses.csv",
    "authors.csv",
    "geometry.json",
    "report.json",
)
MANIFEST = "manifest.json"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _mult_label(m: float) -> str:
    return f">{m:g}xE"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    n_haystack: int
    n_queries: int
    n_query_authors: int
    inputs: dict
    stages: dict[str, float]
    files: dict[str, str]
    dropped_authors: list[str] = field(default_factory=list)
    tool: str = "misattrib"
    version: str = __version__
    path: Path | None = None

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "version": self.version,
            "config": self.config,
            "inputs": self.inputs,
            "n_haystack": self.n_haystack,
            "n_queries": self.n_queries,
            "n_query_authors": self.n_query_authors,
            "dropped_authors": self.dropped_authors,
            "stages": self.stages,
            "files": self.files,
        }

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except (FileNotFoundError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from None
        return cls(
            config=d["config"],
            n_haystack=d["n_haystack"],
            n_queries=d["n_queries"],
            n_query_authors=d["n_query_authors"],
            inputs=d["inputs"],
            stages=d["stages"],
            files=d["files"],
            dropped_authors=d.get("dropped_authors", []),
            tool=d.get("tool", "misattrib"),
            version=d.get("version", ""),
            path=path,
        )


class _Stages:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        log.info("stage %s", name)
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.timings[name] = round(time.perf_counter() - t0, 6)


def select_query_authors(candidates: Sequence[str], count: int | None, seed: int) -> list[str]:
    pool = sorted(candidates)
    if count is None:
        return pool
    if not 1 <= count <= len(pool):
        raise ConfigError(f"query author count {count} not in [1, {len(pool)}]")
    picks = derive_rng(seed, "query-authors").choice(len(pool), size=count, replace=False)
    return [pool[i] for i in sorted(picks)]


def run(config: RunConfig, out_dir: str | Path | None = None) -> RunManifest:
    """Execute the pipeline and write every report into ``out_dir``.

    On failure nothing is left behind in ``out_dir`` and a :class:`StageError`
    naming the stage is raised.
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        manifest = _run(config, staging)
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(staging.iterdir()):
            f.replace(out / f.name)
        manifest.path = out / MANIFEST
        return manifest
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def _run(cfg: RunConfig, out: Path) -> RunManifest:
    st = _Stages()
    inputs: dict = {}

    with st.stage("store"):
        if cfg.input.synthetic is not None:
            store = generate(cfg.population_spec())
            inputs["source"] = "synthetic"
        else:
            store = load_store(cfg.input.path, cfg.input.format)
            inputs["source"] = cfg.input.path
            inputs["files"] = {Path(cfg.input.path).name: _sha256(Path(cfg.input.path))}
            if cfg.input.format == "binary-matrix":
                data = Path(cfg.input.path).with_suffix(".f32")
                if data.exists():
                    inputs["files"][data.name] = _sha256(data)
        inputs["store_checksum"] = store.checksum()

    dropped: list[str] = []
    with st.stage("split"):
        if cfg.split is not None:
            store, dropped = split_documents(store, cfg.split.haystack_docs, cfg.split.query_docs, cfg.seed)
        elif not store.is_split:
            raise ConfigError("store carries no split; add a 'split' section to the config")
        haystack = build_haystack(store)
        hs = Haystack(haystack)
        n_h = len(hs)
        for k in sorted(set(cfg.ks) | {cfg.exceed_k}):
            if k > n_h:
                raise ConfigError(f"k={k} exceeds haystack size {n_h}")

    with st.stage("queries"):
        candidates = [a for a in store.authors if store.split_of(a).query]
        query_authors = select_query_authors(candidates, cfg.query_authors.count, cfg.query_author_seed)
        qm = cfg.query_mode
        queries = sample_queries(store, query_authors, qm.queries_per_author, qm.docs_per_query, cfg.seed)
        n_q = len(queries)

    ks = sorted(set(cfg.ks) | {cfg.exceed_k})
    with st.stage("rank"):
        counts = {k: np.zeros(n_h, dtype=np.int64) for k in ks}
        needle = np.empty(n_q, dtype=np.int64)
        acc = MeanRankAccumulator(hs.author_ids, cfg.mean_rank_exclude_self)
        total_rank_sum = 0
        row_sum = n_h * (n_h + 1) // 2
        for start, block in iter_rank_blocks(queries, hs, threads=cfg.threads):
            chunk = queries[start:start + block.shape[0]]
            cols = np.array([hs.index.get(q.true_author_id, -1) for q in chunk], dtype=np.intp)
            if np.any(cols < 0):
                raise DataError("a query author is missing from the haystack")
            sums = block.sum(axis=1, dtype=np.int64)
            if np.any(sums != row_sum):
                raise InvariantViolation("per-query rank sum differs from N_h(N_h+1)/2")
            total_rank_sum += int(sums.sum())
            for k in ks:
                counts[k] += tally_from_ranks(block, cols, k, hs.author_ids, cfg.include_self_hits).counts
            needle[start:start + block.shape[0]] = block[np.arange(block.shape[0]), cols]
            acc.add(block, cols)
        # author-averaged mean rank must be exactly (N_h + 1) / 2
        if 2 * total_rank_sum != n_q * n_h * (n_h + 1):
            raise InvariantViolation("author-averaged mean rank differs from (N_h+1)/2")
        if cfg.dump_topk:
            slices = _topk_slices(queries, hs, cfg.dump_topk)
            write_topk_csv(slices, out / "topk.csv")

    with st.stage("metrics"):
        tallies = {k: TopKTally(k, n_h, n_q, hs.author_ids, counts[k]) for k in ks}
        report = fairness_report(
            {k: tallies[k] for k in ks},
            exceed_k=cfg.exceed_k,
            multipliers=cfg.exceed_multipliers,
            risk_population=cfg.risk_population,
            include_self_hits=cfg.include_self_hits,
        )
        recall = {k: recall_at_k(needle, k) for k in cfg.recall_ks}
        mrr = mean_reciprocal_rank(needle)
        author_mrr = per_author_mrr([q.true_author_id for q in queries], needle)

    with st.stage("geometry"):
        mean_ranks = acc.result() if not cfg.mean_rank_exclude_self else _mean_ranks_partial(acc)
        geo = geometry_report(haystack, mean_ranks, cfg.geometry_bins, cfg.histogram_bins)

    with st.stage("stats"):
        n_groups = min(cfg.stats.n, len(author_mrr) // 2)
        if n_groups < 1:
            raise DataError("hypothesis tests need at least 2 query authors")
        if n_groups < cfg.stats.n:
            log.warning("stats.n=%d reduced to %d (only %d query authors)", cfg.stats.n, n_groups, len(author_mrr))
        groups = select_mrr_groups(author_mrr, n_groups, cfg.stats_seed)
        tests = run_hypotheses(groups, geo.distances(), cfg.stats.alpha)

    with st.stage("write"):
        name = cfg.name
        display_ks = sorted(set(cfg.ks))
        maui_by_k = report.maui_by_k()
        files = {
            "effectiveness.csv": _csv(
                [["run", "n_queries", *[f"R@{k}" for k in cfg.recall_ks], "MRR"],
                 [name, n_q, *[recall[k] for k in cfg.recall_ks], mrr]]
            ),
            "maui.csv": _csv(
                [["run", "metric", *display_ks], [name, "MAUI", *[maui_by_k[k] for k in display_ks]]]
            ),
            "exceed.csv": _csv(
                [["run", "k", "E_k", *[_mult_label(m) for m in report.exceed]],
                 [name, cfg.exceed_k, tallies[cfg.exceed_k].expected, *report.exceed.values()]]
            ),
            "risk_ratios.csv": _csv(
                [["run", "k", "population", "n_authors", "max", "mean", "std"],
                 [name, cfg.exceed_k, cfg.risk_population, report.risk.n_authors,
                  report.risk.max, report.risk.mean, report.risk.std]]
            ),
            "geometry_curve.csv": _csv(
                [["bin_center", "value", "count"]] + [[b.center, b.value, b.count] for b in geo.curve]
            ),
            "distance_histogram.csv": _csv(
                [["bin_center", "value", "count"]]
                + [[b.center, b.count / geo.n, b.count] for b in geo.histogram]
            ),
            "hypotheses.csv": _csv(
                [["hypothesis", "direction", "n1", "n2", "U", "p_value", "alpha", "reject", "method"]]
                + [[t.hypothesis, t.direction, t.n1, t.n2, t.u, t.p_value, t.alpha, t.reject, t.method]
                   for t in tests]
            ),
            "authors.csv": _csv(
                [["author_id", "distance", "distance_norm", "mean_rank", *[f"c@{k}" for k in ks], "mrr"]]
                + [[a.author_id, a.distance, a.distance_norm, a.mean_rank,
                    *[int(tallies[k].counts[j]) for k in ks], author_mrr.get(a.author_id)]
                   for j, a in enumerate(geo.authors)]
            ),
            "geometry.json": _json(geo.to_dict()),
            "report.json": _json({
                "run": name,
                "effectiveness": {"n_queries": n_q, "recall": {str(k): recall[k] for k in cfg.recall_ks}, "mrr": mrr},
                "fairness": report.to_dict(),
                "geometry": {"spearman": geo.spearman, "n": geo.n},
                "hypotheses": {
                    "groups": groups.to_dict(),
                    "tests": [t.to_dict() for t in tests],
                },
            }),
        }
        for fname, text in files.items():
            (out / fname).write_text(text, encoding="utf-8", newline="\n")

    written = {f: _sha256(out / f) for f in sorted(p.name for p in out.iterdir())}
    manifest = RunManifest(
        config=cfg.resolved(),
        n_haystack=n_h,
        n_queries=n_q,
        n_query_authors=len(query_authors),
        inputs=inputs,
        stages=st.timings,
        files=written,
        dropped_authors=dropped,
    )
    (out / MANIFEST).write_text(_json(manifest.to_dict()), encoding="utf-8", newline="\n")
    return manifest


def _mean_ranks_partial(acc: MeanRankAccumulator) -> dict[str, float]:
    # with self-queries excluded an author may have no remaining queries
    counts = np.where(acc.counts == 0, 1, acc.counts)
    return dict(zip(acc.author_ids, (acc.sums / counts).tolist()))


def _topk_slices(queries, hs: Haystack, k: int, block: int = 64) -> list[TopKSlice]:
    out = []
    for s in range(0, len(queries), block):
        chunk = queries[s:s + block]
        idx, scores = _topk_from_sims(similarities(np.stack([q.vector for q in chunk]), hs.matrix), k)
        out.extend(
            TopKSlice(q.query_id, q.true_author_id, tuple(hs.author_ids[j] for j in idx[i]), tuple(scores[i].tolist()))
            for i, q in enumerate(chunk)
        )
    return out


def compare(manifests: Sequence[RunManifest | str | Path]) -> list[list[str]]:
    """Stack the MAUI rows of several runs; runs must share N_h, N_q and ks."""
    loaded = [m if isinstance(m, RunManifest) else RunManifest.load(m) for m in manifests]
    if not loaded:
        raise ConfigError("compare needs at least one manifest")
    ref = loaded[0]
    ref_ks = sorted(set(ref.config["ks"]))
    rows: list[list[str]] = []
    for m in loaded:
        if (m.n_haystack, m.n_queries) != (ref.n_haystack, ref.n_queries):
            raise DataError(
                f"incompatible runs: N_h/N_q {m.n_haystack}/{m.n_queries} vs {ref.n_haystack}/{ref.n_queries}"
            )
        if sorted(set(m.config["ks"])) != ref_ks:
            raise DataError("incompatible runs: different ks")
        if m.path is None:
            raise DataError("manifest has no location; cannot find its reports")
        with open(m.path.parent / "maui.csv", newline="", encoding="utf-8") as fh:
            table = list(csv.reader(fh))
        if not rows:
            rows.append(table[0])
        rows.extend(table[1:])
    return rows


def write_comparison(rows: list[list[str]], path: str | Path) -> Path:
    path = Path(path)
    if path.is_dir() or path.suffix == "":
        path.mkdir(parents=True, exist_ok=True)
        path = path / "comparison.csv"
    path.write_text(_csv(rows), encoding="utf-8", newline="\n")
    return path
