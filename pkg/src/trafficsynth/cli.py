"""Command-line entry points.

Exit codes: 0 success, 1 validation/domain failure, 2 configuration
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_generation_config
from .dataset import (
    extract_features,
    generate_dataset,
    score_predictions,
    validate_dataset,
)
from .errors import ConfigurationError, DomainError, ValidationError
from .evaluation import save_report

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_IO = 3

log = logging.getLogger("trafficsynth")


def _cmd_generate(args: argparse.Namespace) -> int:
    overrides = {}
    if args.hours is not None:
        overrides["hours"] = args.hours
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.deterministic:
        overrides["workers"] = 1
    config = load_generation_config(args.config, **overrides)
    if args.no_features:
        import dataclasses

        from .config import FeatureConfig

        config = dataclasses.replace(config, features=FeatureConfig(enabled=False))
    out_dir = args.out or config.output_dir
    if out_dir is None:
        raise ConfigurationError("no output directory (use --out or set generation.output_dir)")
    manifest = generate_dataset(config, out_dir, labels_only=args.labels_only)
    print(manifest)
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    problems = validate_dataset(args.manifest)
    if problems:
        for p in problems:
            print(f"FAIL: {p}")
        print(f"validation failed with {len(problems)} problem(s)")
        return EXIT_VALIDATION
    print("validation passed")
    return EXIT_OK


def _cmd_score(args: argparse.Namespace) -> int:
    report = score_predictions(args.pred, args.manifest, merge_mode=args.merge_mode)
    if args.out:
        save_report(args.out, report)
    else:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_features(args: argparse.Namespace) -> int:
    n = extract_features(args.manifest, args.frame, args.hop, args.max_lag)
    print(f"features written for {n} segment(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trafficsynth",
        description="Synthesize labeled multichannel traffic-noise datasets and score counting predictions.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a dataset from a config")
    gen.add_argument("--config", required=True, type=Path)
    gen.add_argument("--hours", type=float, default=None)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", type=Path, default=None, help="output directory")
    gen.add_argument("--deterministic", action="store_true", help="force single-worker rendering")
    gen.add_argument("--workers", type=int, default=None)
    gen.add_argument("--labels-only", action="store_true", help="write the labeled manifest without audio")
    gen.add_argument("--no-features", action="store_true", help="skip feature extraction")
    gen.set_defaults(func=_cmd_generate)

    val = sub.add_parser("validate", help="validate a dataset manifest")
    val.add_argument("manifest", type=Path)
    val.set_defaults(func=_cmd_validate)

    score = sub.add_parser("score", help="score a predictions file against a manifest")
    score.add_argument("--pred", required=True, type=Path)
    score.add_argument("--manifest", required=True, type=Path)
    score.add_argument("--out", type=Path, default=None, help="report path (default: stdout)")
    score.add_argument("--merge-mode", choices=("mean", "joint"), default="mean")
    score.set_defaults(func=_cmd_score)

    feat = sub.add_parser("features", help="(re)extract feature tensors for a dataset")
    feat.add_argument("--manifest", required=True, type=Path)
    feat.add_argument("--frame", type=int, default=1024)
    feat.add_argument("--hop", type=int, default=512)
    feat.add_argument("--max-lag", type=int, default=32)
    feat.set_defaults(func=_cmd_features)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
