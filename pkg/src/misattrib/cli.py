"""Command-line entry point.

    misattrib ingest  --config ingest.json --out DIR
    misattrib synth   --config synth.json  --out DIR [--seed N]
    misattrib run     --config run.json   [--out DIR] [--seed N] [--threads N]
    misattrib compare RUN_DIR_OR_MANIFEST ... --out PATH

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError, MisattribError
from .pipeline import compare, run, write_comparison
from .store import FORMATS, load_store, write_store
from .synth import PopulationSpec, generate

log = logging.getLogger("misattrib")

_SUFFIX = {"jsonl": ".jsonl", "binary-matrix": ".json"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_json(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return data


def _check_keys(data: dict, allowed: set[str], where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def cmd_ingest(args) -> int:
    data = _read_json(args.config)
    _check_keys(data, {"input", "output_format", "name"}, "ingest config")
    inp = data.get("input") or {}
    _check_keys(inp, {"path", "format"}, "input")
    if "path" not in inp:
        raise ConfigError("input.path is required")
    src = Path(inp["path"])
    if not src.is_absolute():
        src = Path(args.config).parent / src
    out_format = data.get("output_format", "binary-matrix")
    if out_format not in FORMATS:
        raise ConfigError(f"output_format must be one of {FORMATS}")
    store = load_store(src, inp.get("format", "jsonl"))
    target = Path(args.out) / (data.get("name", "store") + _SUFFIX[out_format])
    written = write_store(store, target, out_format)
    print(f"{store.n_documents} documents, {len(store.authors)} authors, d={store.dimension}")
    for p in written:
        print(p)
    return 0


def cmd_synth(args) -> int:
    data = _read_json(args.config)
    _check_keys(data, {"synthetic", "format", "name"}, "synth config")
    spec_data = dict(data.get("synthetic") or {})
    if args.seed is not None:
        spec_data["seed"] = args.seed
    spec = PopulationSpec.from_dict(spec_data)
    fmt = data.get("format", "jsonl")
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    store = generate(spec)
    target = Path(args.out) / (data.get("name", "store") + _SUFFIX[fmt])
    for p in write_store(store, target, fmt):
        print(p)
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.output_dir = args.out
    cfg.validate()
    manifest = run(cfg, cfg.output_dir)
    print(f"N_h={manifest.n_haystack} N_q={manifest.n_queries} -> {manifest.path.parent}")
    return 0


def cmd_compare(args) -> int:
    rows = compare(args.manifests)
    print(write_comparison(rows, args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="misattrib", description="Misattribution-fairness evaluation of embed-and-rank attribution.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="validate a store and convert it to another format")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate a synthetic store")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="run the full evaluation pipeline")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("compare", help="merge the MAUI tables of several runs")
    s.add_argument("manifests", nargs="+", help="run directories or manifest.json paths")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except MisattribError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - last-resort mapping
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
