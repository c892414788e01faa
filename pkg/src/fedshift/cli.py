"""Command-line entry point: ``fedshift run | partition describe | emit-plotdata | validate``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Sequence

from .experiment import ConfigError, build_benchmark, emit_plotdata, load_config, run


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seeds:
        cfg.seeds = args.seeds
        cfg.raw["seeds"] = args.seeds
    _, path = run(cfg, args.output)
    print(path)
    return 0


def _cmd_describe(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    rows = build_benchmark(cfg, seed).describe_rows()
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return 0


def _cmd_plotdata(args) -> int:
    for name, path in sorted(emit_plotdata(args.bundle, args.output).items()):
        print(path)
    return 0


def _cmd_validate(args) -> int:
    load_config(args.config)
    print("ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedshift", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every strategy and seed in a config and write a result bundle")
    r.add_argument("config", type=Path)
    r.add_argument("-o", "--output", type=Path, help="bundle directory (default: output_dir of the config)")
    r.add_argument("--seeds", type=int, nargs="+")
    r.set_defaults(func=_cmd_run)

    part = sub.add_parser("partition", help="partition utilities")
    psub = part.add_subparsers(dest="partition_command", required=True)
    d = psub.add_parser("describe", help="print per-client, per-task counts as CSV")
    d.add_argument("config", type=Path)
    d.add_argument("--seed", type=int)
    d.set_defaults(func=_cmd_describe)

    e = sub.add_parser("emit-plotdata", help="write per-figure CSVs from a result bundle")
    e.add_argument("bundle", type=Path)
    e.add_argument("-o", "--output", type=Path)
    e.set_defaults(func=_cmd_plotdata)

    v = sub.add_parser("validate", help="check a config and report every problem")
    v.add_argument("config", type=Path)
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
