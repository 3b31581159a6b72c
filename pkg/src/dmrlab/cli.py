"""Command-line entry point: one subcommand per experiment kind."""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

from .errors import ConfigurationError, EquivarianceError, ResourceError, ValidationError
from .experiments import CLAIMS, KINDS, ExperimentSpec, run_experiment

THREADS_ENV = "DMRLAB_THREADS"

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _threads(flag):
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmrlab", description="Run a density-matrix realism experiment.")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=CLAIMS[kind])
        p.add_argument("--spec", help="JSON experiment spec (defaults to the kind's preset)")
        p.add_argument("--seed", type=int, help="master seed, overrides the spec")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default=None)
        p.add_argument("--strict", action="store_true", help="turn warnings into failures")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    return parser


def _load(args) -> tuple:
    if args.spec:
        spec_doc = None
        with open(args.spec) as fh:
            try:
                spec_doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"cannot parse {args.spec}: {exc}") from None
        if not isinstance(spec_doc, dict):
            raise ConfigurationError("spec must be a JSON object")
        if spec_doc.get("kind", args.kind) != args.kind:
            raise ConfigurationError(f"spec kind {spec_doc.get('kind')!r} does not match subcommand {args.kind!r}")
        spec_doc.setdefault("kind", args.kind)
    else:
        spec_doc = {"kind": args.kind}
    spec = ExperimentSpec.from_dict(spec_doc, args.seed)
    fmt = args.format or spec_doc.get("format") or "csv"
    out = args.out or spec_doc.get("out")
    return spec, fmt, out


def _write(text: str, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec, fmt, out = _load(args)
        if fmt not in ("csv", "json"):
            raise ConfigurationError(f"unknown format {fmt!r}")
        threads = _threads(args.threads)
        with warnings.catch_warnings():
            if args.strict:
                warnings.simplefilter("error")
            table = run_experiment(spec, threads=threads, strict=args.strict)
    except (ConfigurationError, ValidationError, ResourceError, OSError) as exc:
        print(f"dmrlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EquivarianceError, Warning) as exc:
        print(f"dmrlab: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _write(table.to_json() if fmt == "json" else table.to_csv(), out)
    if out and "typicality_csv" in table.attachments:
        stem = out.rsplit(".", 1)[0]
        _write(table.attachments["typicality_csv"], stem + ".stats.csv")
    for row in table.failures():
        print(f"dmrlab: {row.statistic} = {row.value:.6g} fails {row.tolerance}", file=sys.stderr)
    return EXIT_PASS if table.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
