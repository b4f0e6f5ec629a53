"""Command line entry point: ``deadcore run`` and ``deadcore validate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .errors import ParseError, ValidationError
from .experiments import DEFAULTS_HELP, load_config, run, with_jobs, with_output


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deadcore",
        description="Run dead-core and shape-derivative experiments from JSON configs.",
        epilog=DEFAULTS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute one or more configs", epilog=DEFAULTS_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    p_run.add_argument("--config", action="extend", nargs="+", required=True, type=Path,
                       help="JSON config paths (repeatable)")
    p_run.add_argument("--out", type=Path, default=None,
                       help="output root; each config writes to OUT/<name>")
    p_run.add_argument("--jobs", type=int, default=None,
                       help="worker threads across configs and sequence members")
    p_run.add_argument("--verbose", action="store_true", help="log each assertion")
    p_val = sub.add_parser("validate", help="parse a config and print it with defaults filled",
                           epilog=DEFAULTS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p_val.add_argument("--config", action="extend", nargs="+", required=True, type=Path)
    p_val.add_argument("--verbose", action="store_true")
    return parser


def _combine(codes) -> int:
    if 1 in codes:
        return 1
    if 2 in codes:
        return 2
    return 0


def _cmd_validate(args) -> int:
    codes = []
    for path in args.config:
        try:
            cfg = load_config(path)
        except (ParseError, ValidationError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            codes.append(1)
            continue
        print(json.dumps(cfg.to_dict(), indent=2))
        codes.append(0)
    return _combine(codes)


def _cmd_run(args) -> int:
    if args.jobs is not None and args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 1
    configs = []
    for path in args.config:
        try:
            cfg = load_config(path)
        except (ParseError, ValidationError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if args.out is not None:
            cfg = with_output(cfg, args.out / cfg.name)
        if args.jobs is not None:
            cfg = with_jobs(cfg, args.jobs)
        configs.append(cfg)
    names = [c.output for c in configs]
    if len(set(names)) != len(names):
        print("error: two configs write to the same output directory", file=sys.stderr)
        return 1
    workers = min(args.jobs or 1, len(configs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(run, configs))
    else:
        codes = [run(c) for c in configs]
    labels = {0: "PASS", 2: "FAIL", 1: "ERROR"}
    for cfg, code in zip(configs, codes):
        print(f"{cfg.name}: {labels[code]} ({cfg.output})")
    return _combine(codes)


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors are errors (1); 2 is reserved for failed assertions
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return _cmd_validate(args)
    return _cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
