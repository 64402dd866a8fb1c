"""``qgwnd <kind> --config <file> [--out dir] [--seed N] [--trials N]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import KINDS, ConfigError, load_config
from .experiments import run_experiment

log = logging.getLogger("qgwnd")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qgwnd", description="Run a quantum-graph NLS experiment from a JSON config.")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--trials", type=int, help="Monte-Carlo trial count (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.kind != args.kind:
            raise ConfigError(f"config is for kind {cfg.kind!r}, command line asked for {args.kind!r}")
        if args.trials is not None and args.trials < 1:
            raise ConfigError("--trials must be at least 1")
        cfg = cfg.with_overrides(seed=args.seed, trials=args.trials)
    except ConfigError as exc:
        print(f"qgwnd: error: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfg.output.get("dir")
    log.info("running %s (seed %d, %d trials)", cfg.kind, cfg.seed, cfg.trials)
    try:
        records = run_experiment(cfg, out)
    except Exception as exc:  # surfaced with context, no traceback for users
        print(f"qgwnd: {cfg.kind} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for r in records:
        print(r.line())
    if out:
        print(f"wrote {out}/{cfg.kind}.json")
    return 0 if all(r.passed is not False for r in records) else 1


if __name__ == "__main__":
    sys.exit(main())
