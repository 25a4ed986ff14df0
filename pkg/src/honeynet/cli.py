"""Command line entry point: ``honeynet run`` and ``honeynet validate``."""

from __future__ import annotations

import argparse
import logging
import sys

from .collection_db import CollectionStorageError
from .harness import emit_report, run_scenario
from .scenario import ScenarioError, load_scenario


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="honeynet", description="Double-honeynet worm collection simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write outputs")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, required=True)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--max-ticks", type=int, default=None)
    run.add_argument("--format", choices=("table", "machine"), default="table",
                     help="report format echoed to stdout (both files are always written)")

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("scenario")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_scenario(args.scenario)
    except FileNotFoundError:
        print(f"error: no such scenario file: {args.scenario}", file=sys.stderr)
        return 2
    except ScenarioError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"ok: {cfg.name} ({len(cfg.networks)} networks, {len(cfg.worms)} worms, max_ticks {cfg.max_ticks})")
        return 0

    update = {"seed": args.seed}
    if args.max_ticks is not None:
        if args.max_ticks < 1:
            print("error: --max-ticks must be >= 1", file=sys.stderr)
            return 2
        update["max_ticks"] = args.max_ticks
    cfg = cfg.model_copy(update=update)
    try:
        report = run_scenario(cfg, args.out)
    except (CollectionStorageError, OSError) as exc:
        print(f"error: run failed: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(emit_report(report, args.format))
    return 0


if __name__ == "__main__":
    sys.exit(main())
