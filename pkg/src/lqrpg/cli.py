"""``lqrpg <experiment> --config PATH [--seed N] [--runs N] [--iters N] [--out DIR]``.

Exit status: 0 on success, 1 for configuration errors, 2 for runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError
from .experiments import EXPERIMENTS, load_config, parse_config, run_experiment

log = logging.getLogger("lqrpg")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not runtime errors
    def error(self, message):
        raise ConfigError(f"usage: {message}")


def build_parser():
    p = _Parser(prog="lqrpg", description="Run an LQR policy-gradient experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--runs", type=int, help="override the number of Monte-Carlo runs")
    p.add_argument("--iters", type=int, help="override the iteration count")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args):
    cfg = load_config(args.config)
    raw = cfg.to_dict()
    if raw["experiment"] != args.experiment:
        raise ConfigError(f"experiment: config says {raw['experiment']!r} but "
                          f"{args.experiment!r} was requested")
    for key, val in (("master_seed", args.seed), ("runs", args.runs), ("iters", args.iters),
                     ("output_path", args.out)):
        if val is not None:
            raw[key] = val
    # re-validate so that overrides obey the same rules as file values
    return parse_config(raw, args.config)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"lqrpg: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"lqrpg: configuration error in {args.config}:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("running %s on %s (%d runs, %d iterations, seed %d)", cfg.experiment, cfg.preset,
             cfg.runs, cfg.iters, cfg.master_seed)
    try:
        paths = run_experiment(cfg)
    except KeyboardInterrupt:
        print("lqrpg: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # surfaced with experiment context
        print(f"lqrpg: {cfg.experiment} on {cfg.preset} failed: "
              f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(p)
    if args.verbose:
        meta = json.loads(paths[-1].read_text())
        print(json.dumps(meta.get("summary", {}), indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
