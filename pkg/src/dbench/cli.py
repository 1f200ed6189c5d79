"""Command-line entry point: dbench <stage> --config <file>.

Exit codes: 0 success, 2 validation failure, 3 missing or stale upstream.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, DbenchError, MissingStage, StaleUpstream
from .pipeline import SnapshotPipeline
from .solvers import SolverConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_UPSTREAM = 3

_COMMANDS = {
    "acquire": "acquire",
    "extract": "extract",
    "filter": "filter",
    "alt-test": "alttest",
    "solve": "solve",
    "judge": "judge",
    "report": "report",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dbench",
        description="Construct and evaluate one monthly benchmark snapshot.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in list(_COMMANDS) + ["run"]:
        sub = subparsers.add_parser(
            command,
            help=("run all stages in order" if command == "run" else f"run the {command} stage"),
        )
        sub.add_argument("--config", required=True, help="pipeline config YAML")
        sub.add_argument("--snapshot", help="override the config's snapshot id (YYYY-MM)")
        sub.add_argument("--workspace", help="override the config's workspace directory")
        sub.add_argument("--force", action="store_true", help="re-run even when up to date")
        if command == "solve":
            sub.add_argument(
                "--solver",
                choices=["base", "rag", "react", "workflow"],
                help="run a single ad-hoc solver of this kind instead of the configured list",
            )
            sub.add_argument("--backbone", help="model id for the ad-hoc solver")
            sub.add_argument("--thinking", action="store_true", help="enable the thinking flag")
            sub.add_argument("--cutoff", help="retrieval cutoff date for the ad-hoc solver")
        if command == "report":
            sub.add_argument(
                "--emit-plot-data", action="store_true", help="also write plot_data.json"
            )
    return parser


def _pipeline_from_args(args: argparse.Namespace) -> SnapshotPipeline:
    config = load_config(args.config, snapshot_override=args.snapshot)
    workspace = Path(args.workspace) if args.workspace else config.workspace
    if workspace is None:
        raise ConfigError("no workspace configured; set workspace in the config or --workspace")
    if getattr(args, "solver", None):
        if not args.backbone:
            raise ConfigError("--solver needs --backbone")
        from datetime import date

        cutoff = date.fromisoformat(args.cutoff) if args.cutoff else config.cutoff_date
        config.solvers = [
            SolverConfig(
                solver_id=f"cli-{args.solver}-{args.backbone}",
                kind=args.solver,
                backbone=args.backbone,
                thinking=bool(args.thinking),
                cutoff_date=cutoff,
            )
        ]
        config.validate()
    return SnapshotPipeline(config, Path(workspace))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        pipeline = _pipeline_from_args(args)
        if args.command == "run":
            for result in pipeline.run_all(force=args.force):
                status = "ran" if result.ran else "skipped"
                print(f"{result.stage}: {status} ({result.message})")
            return EXIT_OK
        stage = _COMMANDS[args.command]
        if stage == "report":
            pipeline.emit_plot_data = bool(getattr(args, "emit_plot_data", False))
        result = pipeline.run_stage(stage, force=args.force)
        status = f"ran ({result.message})" if result.ran else "skipped (up to date)"
        print(f"{result.stage}: {status} digest={result.digest}")
        return EXIT_OK
    except (MissingStage, StaleUpstream) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except DbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
