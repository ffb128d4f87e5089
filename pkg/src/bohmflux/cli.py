"""Command line entry point ``bohmflux``.

Exit codes: 0 all checks pass, 2 configuration error, 3 numerical abort,
4 acceptance failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigurationError, NumericalAbort
from .experiments import OUTPUT_ENV, list_presets, oracle_check, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bohmflux",
        description="Conditional energy flow along Bohmian trajectories of a bipartite system.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a configured experiment",
                       epilog=f"Without --output-dir the config's outputs.directory is used, "
                              f"then ${OUTPUT_ENV}/<name>.")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--seed-override", type=_seed)
    p.add_argument("--threads", type=_positive)
    p.add_argument("--oracle-only", action="store_true",
                   help="only run the oracle self-consistency suite")

    p = sub.add_parser("oracle", help="run the oracle self-consistency suite of a config")
    p.add_argument("--config", required=True)

    sub.add_parser("presets", help="list the Hamiltonian presets")
    return parser


def _print_checks(checks) -> None:
    for c in checks:
        value = "nan" if c["value"] is None else f"{c['value']:.3e}"
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']:<36} {value}  "
              f"(tol {c['tolerance']:.1e})")


def _oracle(config: str) -> int:
    report = oracle_check(config)
    _print_checks(report["checks"])
    print(json.dumps({"passed": report["passed"]}))
    return EXIT_OK if report["passed"] else EXIT_ACCEPTANCE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            print(list_presets())
            return EXIT_OK
        if args.command == "oracle" or args.oracle_only:
            return _oracle(args.config)
        manifest = run(args.config, output_dir=args.output_dir,
                       seed_override=args.seed_override, threads=args.threads)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _print_checks(manifest.checks)
    print(f"output: {manifest.output_dir}")
    return EXIT_OK if manifest.passed else EXIT_ACCEPTANCE


if __name__ == "__main__":
    sys.exit(main())
