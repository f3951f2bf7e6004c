"""Command-line front end: one subcommand per pipeline stage.

Every command reads the same JSON run configuration (``--config``) and
accepts dotted overrides such as ``--train.learning_rate 0.01`` or
``--model.dropout=0.5``. Exit codes: 0 success, 1 usage error, 2 data or
format error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import FORMAT_VERSIONS, __version__
from ._accel import USE_NUMBA, get_num_threads, set_num_threads
from .ablation import SUITES, run_ablation, write_csv
from .config import RunConfig
from .errors import DataError, NumericError
from .features import load_features, save_features
from .graph import load_graph, save_graph
from .model import explain
from .pipeline import fit, new_model, prepare, run_encode, run_ingest, score
from .synth import write_synthetic
from .training import assign_params, load_checkpoint, save_checkpoint

logger = logging.getLogger("attribmmf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """Bad command line; reported with the usage text and exit code 1."""


class _Parser(argparse.ArgumentParser):
    """argparse reports errors with exit code 2; this CLI reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _version_text() -> str:
    formats = ", ".join(f"{k} v{v}" for k, v in FORMAT_VERSIONS.items())
    return f"attribmmf {__version__} ({formats})"


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", type=Path, help="run configuration (JSON)")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--deterministic", action="store_true", help="serial, bit-reproducible execution")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="attribmmf", allow_abbrev=False,
                     description="APT actor attribution over heterogeneous CTI graphs.",
                     epilog="Any --section.key VALUE pair overrides one entry of the configuration.")
    parser.add_argument("--version", action="version", version=_version_text())
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    sub_kw = {"parents": [common], "allow_abbrev": False}
    p = sub.add_parser("synth", **sub_kw, help="write a synthetic planted-group corpus")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("ingest", **sub_kw, help="reports + enrichment -> graph.json")
    p.add_argument("--reports", type=Path, required=True)
    p.add_argument("--enrichment", type=Path)
    p.add_argument("--whitelist", type=Path)
    p.add_argument("--out", type=Path, required=True, help="graph.json path")

    p = sub.add_parser("encode", **sub_kw, help="graph.json -> features.bin (+ index sidecar)")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="features.bin path")

    p = sub.add_parser("train", **sub_kw, help="graph + features -> checkpoint + metrics")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("evaluate", **sub_kw, help="print Micro/Macro-F1 of a checkpoint")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("explain", **sub_kw, help="attention explanation for one report")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--report", required=True, help="report node id")
    p.add_argument("--out", type=Path, help="write JSON here instead of stdout")

    p = sub.add_parser("ablate", **sub_kw, help="run an ablation suite -> CSV")
    p.add_argument("--suite", choices=sorted(SUITES), required=True)
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="CSV path")
    p.add_argument("--rows", nargs="+", help="subset of suite rows to run")
    return parser


def split_overrides(extra: Sequence[str]) -> Dict[str, str]:
    """Turn leftover ``--a.b value`` / ``--a.b=value`` tokens into an override map."""
    out: Dict[str, str] = {}
    items = list(extra)
    i = 0
    while i < len(items):
        tok = items[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(items):
                raise UsageError(f"override --{key} needs a value")
            i += 1
            value = items[i]
        _check_key(key)
        out[key] = value
        i += 1
    return out


def _check_key(dotted: str) -> None:
    node = RunConfig().to_dict()
    parts = dotted.split(".")
    for part in parts:
        if not isinstance(node, dict) or part not in node:
            raise UsageError(f"unknown option or config key --{dotted}")
        node = node[part]


def _require(*paths: Optional[Path]) -> None:
    for p in paths:
        if p is not None and not p.exists():
            raise DataError(f"{p}: no such file or directory")


def _load_config(args, overrides: Dict[str, str]) -> RunConfig:
    _require(args.config)
    cfg = RunConfig.load(args.config, overrides)
    if args.deterministic:
        cfg.deterministic = True
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg.threads = args.threads
    if cfg.threads:
        set_num_threads(min(cfg.threads, get_num_threads()) if USE_NUMBA else 1)
    return cfg


def _restore_model(args, cfg: RunConfig):
    _require(args.graph, args.features, args.checkpoint)
    graph = load_graph(args.graph)
    feats = load_features(args.features)
    prepared = prepare(graph, feats, cfg)
    model = new_model(cfg, prepared)
    assign_params(model, load_checkpoint(args.checkpoint))
    return graph, prepared, model


def cmd_synth(args, cfg: RunConfig) -> int:
    rpath, epath = write_synthetic(cfg.synth, args.out)
    print(f"wrote {rpath} and {epath}")
    return EXIT_OK


def cmd_ingest(args, cfg: RunConfig) -> int:
    _require(args.reports, args.enrichment, args.whitelist)
    graph = run_ingest(args.reports, args.enrichment, args.whitelist, cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, args.out)
    print(f"wrote {args.out}: {len(graph)} nodes, {graph.num_edges()} edges, {len(graph.reports())} reports")
    return EXIT_OK


def cmd_encode(args, cfg: RunConfig) -> int:
    _require(args.graph)
    graph = load_graph(args.graph)
    feats = run_encode(graph, cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_features(feats, args.out)
    print(f"wrote {args.out}: {feats.matrix.shape[0]} x {feats.matrix.shape[1]}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    _require(args.graph, args.features)
    graph = load_graph(args.graph)
    feats = load_features(args.features)
    prepared = prepare(graph, feats, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    model, result = fit(prepared, cfg, args.out / "metrics.jsonl")
    save_checkpoint(model.params, args.out / "checkpoint.bin")
    (args.out / "split.json").write_text(json.dumps(prepared.split.to_json(), indent=1) + "\n", "utf-8")
    val = score(model, prepared, "val")
    print(f"best epoch {result.best_epoch} of {result.epochs_run}; "
          f"val micro_f1 {val['micro_f1']:.4f} macro_f1 {val['macro_f1']:.4f}")
    print(f"wrote {args.out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    _, prepared, model = _restore_model(args, cfg)
    m = score(model, prepared, args.split)
    print(f"micro_f1 {m['micro_f1']:.4f}")
    print(f"macro_f1 {m['macro_f1']:.4f}")
    return EXIT_OK


def cmd_explain(args, cfg: RunConfig) -> int:
    graph, prepared, model = _restore_model(args, cfg)
    record = explain(model, prepared.inputs, args.report, graph)
    text = json.dumps(record, indent=1, sort_keys=True)
    if args.out:
        args.out.write_text(text + "\n", "utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    _require(args.graph, args.features)
    known = [name for name, _ in SUITES[args.suite]]
    for r in args.rows or ():
        if r not in known:
            raise UsageError(f"suite {args.suite} has no row {r!r}; rows are {known}")
    graph = load_graph(args.graph)
    feats = load_features(args.features)
    rows = run_ablation(args.suite, graph, feats, cfg, args.rows)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, args.out)
    for r in rows:
        print(",".join(str(v) for v in r.as_tuple()))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "encode": cmd_encode, "train": cmd_train,
    "evaluate": cmd_evaluate, "explain": cmd_explain, "ablate": cmd_ablate,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = split_overrides(extra)
        cfg = _load_config(args, overrides)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"attribmmf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"attribmmf {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"attribmmf {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
