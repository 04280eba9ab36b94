"""Command line front end.

One subcommand per pipeline stage plus ``run`` (both conditions and the
comparison report), ``report`` (join two results files), and ``synth``
(self-contained demo dataset).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import EarPipeError
from .mocks import synth_dataset
from .pipeline import (
    CONDITIONS, PipelineConfig, compare_conditions, ingest_dataset,
    run_condition, run_pipeline, write_reports,
)
from .types import load_manifest, save_manifest, validate_manifest

_STAGE_COMMANDS = ("align", "detect", "mask", "inpaint", "embed", "evaluate")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="manifest JSON path")
    p.add_argument("--config", help="pipeline config JSON path")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--cache", help="cache directory (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="earpipe",
        description="ear accessory removal and verification evaluation pipeline",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log per-stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a dataset directory into a manifest")
    p.add_argument("root", help="dataset root directory")
    p.add_argument("--layout", default="subject_folders",
                   choices=("subject_folders", "flat_with_index"))
    p.add_argument("--name", help="dataset name (default: directory name)")
    p.add_argument("--out", default="manifest.json", help="manifest output path")

    p = sub.add_parser("synth", help="generate a synthetic demo dataset")
    p.add_argument("out", help="output directory")
    p.add_argument("--identities", type=int, default=4)
    p.add_argument("--images", type=int, default=5, help="images per identity")
    p.add_argument("--occlusion", type=float, default=0.5,
                   help="fraction of images given an accessory")
    p.add_argument("--seed", type=int, default=7)

    for name in _STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the pipeline through the {name} stage")
        _add_common(p)
        p.add_argument("--condition", default="inpainted", choices=CONDITIONS)

    p = sub.add_parser("report", help="compare two results files")
    p.add_argument("--baseline", required=True, help="baseline results JSON")
    p.add_argument("--inpainted", required=True, help="inpainted results JSON")
    p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("run", help="both conditions plus the comparison report")
    _add_common(p)

    return parser


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return PipelineConfig.from_file(args.config)
    return PipelineConfig()


def _print_stats(stats) -> None:
    for stage, entry in stats.counts.items():
        print(f"{stage}: {entry['computed']} computed, {entry['cached']} cached")


def _dispatch(args) -> int:
    if args.command == "ingest":
        manifest = ingest_dataset(args.root, layout=args.layout, name=args.name)
        for line in validate_manifest(manifest):
            print(f"warning: {line}", file=sys.stderr)
        save_manifest(manifest, args.out)
        print(f"{manifest.name}: {len(manifest.records)} records, "
              f"{len(manifest.identities())} identities -> {args.out}")
        return 0

    if args.command == "synth":
        manifest = synth_dataset(args.identities, args.images, args.occlusion,
                                 args.seed, Path(args.out))
        print(f"{manifest.name}: {len(manifest.records)} records -> {args.out}")
        return 0

    if args.command == "report":
        grid = compare_conditions(args.baseline, args.inpainted)
        written = write_reports(grid, args.out)
        print("\n".join(str(p) for p in written))
        return 0

    if args.command == "run":
        cfg = _load_config(args)
        manifest = load_manifest(args.manifest)
        results = run_pipeline(cfg, manifest, args.out, cache_root=args.cache)
        for condition, res in results.items():
            doc_mean = sum(res.aucs) / len(res.aucs)
            print(f"{condition}: AUC {doc_mean:.4f} over {len(res.aucs)} trial(s)")
        print(f"reports written to {args.out}")
        return 0

    if args.command in _STAGE_COMMANDS:
        cfg = _load_config(args)
        manifest = load_manifest(args.manifest)
        res = run_condition(cfg, manifest, Path(args.out), args.condition,
                            cache_root=args.cache, through=args.command)
        _print_stats(res.stats)
        if args.command == "evaluate":
            from .verification import aggregate_trials
            print(aggregate_trials(res.aucs).formatted())
            print(f"results: {res.results_path}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except EarPipeError as e:
        print(f"error [{e.stage}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
