"""Command-line interface.

Configuration comes from an optional JSON config file plus command-line
flags named after the dotted config paths (``--cnn.epochs 40``,
``--cluster.counts 38,28,18``, ``--cnn.conv_layers 32x8,64x5,128x3``).
Stage commands operate on the run directory created by ``pipeline`` (or by
the first stage command) and verify the artifact hash chain before loading
upstream results.

Commands: pipeline, train, extract, cluster, graph, embed, represent, fit,
evaluate, explain, sweep, export-dot.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline as pl
from .config import PipelineConfig, iter_field_paths, load_config, set_by_path
from .evograph import to_dot

STAGE_COMMANDS = {
    "train": ["checkpoint"],
    "extract": ["thresholds", "mhaps"],
    "cluster": ["clusters"],
    "graph": ["graph"],
    "embed": ["embeddings"],
    "represent": ["features"],
    "fit": ["gbdt"],
    "evaluate": ["metrics"],
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for path, value in iter_field_paths():
        parser.add_argument(f"--{path}", dest=path, default=None, metavar=str(value), help=argparse.SUPPRESS)
    parser.add_argument("--config", default=None, help="JSON config file")


def _resolve_config(args: argparse.Namespace, require_io: bool) -> PipelineConfig:
    values = vars(args)
    out = values.get("out")
    cfg = None
    run_config = Path(out) / "config.json" if out else None
    if values.get("config"):
        cfg = load_config(values["config"])
    elif run_config is not None and run_config.exists():
        cfg = load_config(run_config)
    else:
        cfg = PipelineConfig()
    for path, _ in iter_field_paths():
        text = values.get(path)
        if text is not None:
            set_by_path(cfg, path, text)
    if require_io:
        missing = [name for name in ("dataset", "out", "seed") if values.get(name) is None]
        if values.get("config") is None and missing and not (run_config and run_config.exists()):
            raise SystemExit(
                f"--dataset, --out and --seed are required (missing: {', '.join(missing)})"
            )
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhapgraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="full cross-validated run")
    _add_config_flags(p)

    for name, stages in STAGE_COMMANDS.items():
        p = sub.add_parser(name, help=f"run stage(s): {', '.join(stages)}")
        _add_config_flags(p)
        p.add_argument("--fold", type=int, default=0)

    p = sub.add_parser("explain", help="per-sample explanation report")
    _add_config_flags(p)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--output", default=None, help="write report text here (default stdout)")
    p.add_argument("--dot-output", default=None, help="write highlighted DOT graph here")

    p = sub.add_parser("sweep", help="accuracy over a parameter grid (fold 0)")
    _add_config_flags(p)
    p.add_argument("--param", required=True, choices=pl.SWEEP_PARAMS)
    p.add_argument(
        "--grid",
        required=True,
        help="comma-separated values; for cluster.counts use ';' between tuples, "
        "e.g. '38,28,18;24,16,12'",
    )

    p = sub.add_parser("export-dot", help="write the merged graph as Graphviz DOT")
    _add_config_flags(p)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--highlight-sample", type=int, default=None)
    return parser


def _parse_grid(param: str, text: str):
    if param == "cluster.counts":
        return [tuple(int(x) for x in part.split(",")) for part in text.split(";") if part]
    return [int(x) for x in text.split(",") if x]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command

    if command == "pipeline":
        cfg = _resolve_config(args, require_io=True)
        report = pl.run_pipeline(cfg)
        print(pl.format_report(report), end="")
        return 0

    if command in STAGE_COMMANDS:
        cfg = _resolve_config(args, require_io=True)
        ctx = pl.RunContext(cfg)
        result = None
        for stage in STAGE_COMMANDS[command]:
            result = pl.STAGE_FUNCS[stage](ctx, args.fold)
            print(f"fold {args.fold}: stage {stage} done")
        if command == "evaluate" and result is not None:
            print(json.dumps({k: v for k, v in result.items() if k != "parent_sha256"}, indent=2))
        return 0

    if command == "explain":
        cfg = _resolve_config(args, require_io=True)
        artifacts = pl.RunArtifacts(run_dir=Path(cfg.out), fold=args.fold)
        report = pl.explain_sample(artifacts, args.sample, cfg)
        if args.output:
            Path(args.output).write_text(report.text)
        else:
            print(report.text, end="")
        if args.dot_output:
            Path(args.dot_output).write_text(report.dot)
        return 0

    if command == "sweep":
        cfg = _resolve_config(args, require_io=True)
        rows = pl.sweep(cfg, args.param, _parse_grid(args.param, args.grid))
        print(f"{'value':>15s}  accuracy")
        for row in rows:
            print(f"{str(row['value']):>15s}  {row['accuracy']:.4f}")
        with open(Path(cfg.out) / "sweep.json", "w") as fh:
            json.dump(rows, fh, indent=2)
        return 0

    if command == "export-dot":
        cfg = _resolve_config(args, require_io=True)
        store = pl.RunArtifacts(run_dir=Path(cfg.out), fold=args.fold).store
        graph = pl._load_graph(store)
        highlight = None
        if args.highlight_sample is not None:
            artifacts = pl.RunArtifacts(run_dir=Path(cfg.out), fold=args.fold)
            highlight = pl.explain_sample(artifacts, args.highlight_sample, cfg).path_nodes
        Path(args.output).write_text(to_dot(graph, highlight_path=highlight))
        print(f"wrote {args.output}")
        return 0

    raise SystemExit(f"unknown command {command!r}")


if __name__ == "__main__":
    sys.exit(main())
