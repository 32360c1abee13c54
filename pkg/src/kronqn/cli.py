"""Command-line entry points: ``train``, ``verify`` and ``grid``."""

import argparse
import logging
import os
import sys
import time

from .config import ConfigError, RunConfig, preset_config
from .harness import parse_grid, run_grid, run_training
from .verify import SUITES, run_suite

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def load_config(spec):
    """``preset:NAME`` or a path to an INI config file."""
    if spec.startswith("preset:"):
        return preset_config(spec.split(":", 1)[1])
    if not os.path.exists(spec):
        raise ConfigError(f"config file {spec!r} not found")
    return RunConfig.load(spec)


def cmd_train(args):
    cfg = load_config(args.config)
    for item in args.set or []:
        key, _, val = item.partition("=")
        cfg.set(key.strip(), val)
    if args.seed is not None:
        cfg.run.seed = args.seed
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, os.path.basename(cfg.run.output) or "run.csv")
    rl = run_training(cfg, csv_path=csv_path)
    print(f"{rl.status}: final loss {rl.final_loss:.6g} after {rl.rows[-1].k} iterations -> {csv_path}")
    return EXIT_OK if rl.status == "completed" else EXIT_FAILED


def cmd_verify(args):
    t0 = time.perf_counter()
    checks = run_suite(args.suite, seed=args.seed)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if failed == 0 else EXIT_FAILED


def cmd_grid(args):
    base = load_config(args.config)
    with open(args.grid) as fh:
        axes = parse_grid(fh.read())
    out_dir = args.out or "grid_out"
    rows, best = run_grid(base, axes, out_dir, parallel=args.parallel)
    for r in rows:
        print(", ".join(f"{k}={v}" for k, v in r.items()))
    if best is None:
        print("no cell completed")
        return EXIT_FAILED
    print(f"best cell {best['cell']}: final loss {best['final_loss']:.6g}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="kronqn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one training job and write its CSV log")
    t.add_argument("--config", required=True, help="INI file or preset:NAME")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default: current)")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="run randomized invariant suites")
    v.add_argument("suite", choices=sorted(SUITES) + ["all"])
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("grid", help="Cartesian hyperparameter sweep")
    g.add_argument("--config", required=True, help="base INI file or preset:NAME")
    g.add_argument("--grid", required=True, help="file with a [grid] section")
    g.add_argument("--parallel", type=int, default=1)
    g.add_argument("--out", help="output directory (default: grid_out)")
    g.set_defaults(func=cmd_grid)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"kronqn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
