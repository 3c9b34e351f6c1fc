"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/runtime error.

Settings are resolved as command-line flags, then an optional ``--config``
key-value file, then built-in defaults. ``ROUNDVOL_OUT`` sets the default
output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .clustering import ClusteringError
from .pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    run_all,
    run_cluster,
    run_elbow,
    run_features,
    run_ingest,
    run_report,
)
from .report import InsufficientData
from .trajectory_io import STRICT, IngestError

OUT_ENV = "ROUNDVOL_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

# config-file key -> (PipelineConfig field, parser)
_bool = lambda s: s.strip().lower() in ("1", "true", "yes", "on")  # noqa: E731
_list = lambda s: tuple(p.strip().lower() for p in s.split(",") if p.strip())  # noqa: E731
CONFIG_KEYS = {
    "tracks": ("tracks_path", str),
    "meta": ("meta_path", str),
    "classes": ("allowed_classes", _list),
    "min_frames": ("min_samples", int),
    "frame_rate": ("frame_rate", float),
    "k": ("k", int),
    "seed": ("seed", int),
    "restarts": ("restarts", int),
    "max_iter": ("max_iter", int),
    "tol": ("tol", float),
    "standardize": ("standardize", _bool),
    "group_by_class": ("group_by_class", _bool),
    "error_policy": ("error_policy", str),
    "out": ("out_dir", str),
    "format": ("formats", _list),
    "k_min": ("k_min", int),
    "k_max": ("k_max", int),
    "jobs": ("jobs", int),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into PipelineConfig fields."""
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "strict":
            values["error_policy"] = STRICT if _bool(raw) else "lenient"
            continue
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        name, conv = CONFIG_KEYS[key]
        try:
            values[name] = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{n}: bad value for {key}: {raw!r}") from exc
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--tracks", dest="tracks_path", help="rounD tracks CSV")
    common.add_argument("--meta", dest="meta_path", help="rounD tracksMeta CSV")
    common.add_argument("--classes", dest="allowed_classes", type=_list, help="comma list (default car,truck,bus)")
    common.add_argument("--min-frames", dest="min_samples", type=int, help="minimum frames per track (50)")
    common.add_argument("--frame-rate", dest="frame_rate", type=float, help="Hz, for jerk (25)")
    common.add_argument("--k", type=int, help="number of clusters (3)")
    common.add_argument("--seed", type=int, help="random seed (42)")
    common.add_argument("--restarts", type=int, help="k-means restarts (10)")
    common.add_argument("--max-iter", dest="max_iter", type=int, help="Lloyd iteration cap (300)")
    common.add_argument("--tol", type=float, help="WCSS improvement threshold (1e-6)")
    common.add_argument("--no-standardize", dest="standardize", action="store_false",
                        help="cluster raw DV values instead of z-scores")
    common.add_argument("--group-by-class", dest="group_by_class", action="store_true",
                        help="fit one model per vehicle class")
    common.add_argument("--strict", dest="error_policy", action="store_const", const=STRICT,
                        help="abort on the first malformed row or join anomaly")
    common.add_argument("--out", dest="out_dir", help=f"output directory (env {OUT_ENV})")
    common.add_argument("--format", dest="formats", type=_list, help="json,csv,plotdata")
    common.add_argument("--k-min", dest="k_min", type=int, help="elbow range start (1)")
    common.add_argument("--k-max", dest="k_max", type=int, help="elbow range end (10)")
    common.add_argument("--jobs", type=int, help="worker count (1)")

    parser = _Parser(prog="roundvol", description="Driving-volatility clustering for roundabout trajectories.")
    parser.add_argument("--version", action="version", version=f"roundvol {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (
        ("ingest", "parse, validate and store tracks"),
        ("features", "compute DV1-DV10 per track"),
        ("cluster", "fit k-means and label behaviours"),
        ("elbow", "WCSS over a range of k"),
        ("report", "descriptive statistics, correlations, cluster summary"),
        ("run-all", "every stage in order"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    values = {}
    if os.environ.get(OUT_ENV):
        values["out_dir"] = os.environ[OUT_ENV]
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    names = {f.name for f in fields(PipelineConfig)}
    values.update({k: v for k, v in vars(args).items() if k in names})
    return PipelineConfig(**values).validate()


STAGES = {
    "ingest": run_ingest,
    "features": run_features,
    "cluster": run_cluster,
    "elbow": run_elbow,
    "report": run_report,
    "run-all": run_all,
}


def _print_result(command: str, result, config: PipelineConfig) -> None:
    if command == "ingest":
        print(f"ingested {result['tracksFile']['rowsRead']} rows, skipped {result['tracksFile']['rowsSkipped']}; "
              f"retained {result['retainedTracks']} tracks {result['retainedClassCounts']}")
    elif command == "features":
        print(f"{result['featureRows']} feature rows ({result['completeRows']} complete); "
              f"excluded {result['excluded']}; incomplete {result['incompleteFlags']}")
    elif command == "cluster":
        for name, m in result["models"].items():
            print(f"{name}: k={m['k']} wcss={m['wcss']:.6g} iterations={m['iterations']} {m['behaviorMap']}")
    elif command == "elbow":
        for k, w in result["rows"]:
            print(f"k={k} wcss={w:.6g}")
        print(f"knee estimate: {result['knee']}")
    elif command in ("report", "run-all"):
        print(f"outputs written to {config.out}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
    except (ConfigError, OSError, TypeError) as exc:
        print(f"roundvol: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        result = STAGES[args.command](config)
    except ConfigError as exc:
        print(f"roundvol: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"roundvol: MissingFile: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (IngestError, ClusteringError, InsufficientData, StageError, ValueError, OSError) as exc:
        print(f"roundvol: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    _print_result(args.command, result, config)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
