"""Command line interface: ``skc data.csv --target y --mode skc --out results/``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import MODES, RunConfig, load_config_file
from .data import ingest_csv
from .exceptions import ConfigError, DataError, NumericalError, SKCError
from .bounds import PRECONDITIONERS
from .report import emit_report, run

EXIT_OK, EXIT_DATA, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2, 3

# keys a config file may set besides RunConfig fields
CLI_KEYS = ("target", "columns", "out")

FLAG_FIELDS = ("mode", "depth", "m", "buffer", "restarts", "seed", "precond")


def build_parser():
    p = argparse.ArgumentParser(
        prog="skc",
        description="Search compositional GP kernels on a CSV dataset and report the chosen structure.",
    )
    p.add_argument("data", help="CSV file with a header row")
    p.add_argument("--target", help="name of the target column (default: last column)")
    p.add_argument("--columns", nargs="+", help="input columns (default: all except the target)")
    p.add_argument("--mode", choices=MODES, default="skc")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--m", type=int, default=40, help="number of inducing points")
    p.add_argument("--buffer", type=int, default=5, help="buffer size S")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precond", choices=PRECONDITIONERS, default="pic")
    p.add_argument("--out", default="skc_out", help="output directory")
    p.add_argument("--config", help="JSON or YAML file; its values override flags")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args):
    """Merge flags with the config file (file wins). Returns (RunConfig, target, columns, out)."""
    opts = {name: getattr(args, name) for name in FLAG_FIELDS}
    cli = {"target": args.target, "columns": args.columns, "out": args.out}
    if args.config:
        file_opts = load_config_file(args.config)
        for key in CLI_KEYS:
            if key in file_opts:
                cli[key] = file_opts.pop(key)
        opts.update(file_opts)
    return RunConfig.from_dict(opts), cli["target"], cli["columns"], cli["out"]


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config, target, columns, out = resolve(args)
        data = ingest_csv(args.data, target, columns)
        report = run(config, data)
        paths = emit_report(report, out)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SKCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    c = report.chosen
    print(f"chosen kernel: {c.structure}  BIC in [{c.lower:.4f}, {c.upper:.4f}]")
    for line in report.interpretation:
        print(f"  {line}")
    print(f"report written to {paths['text'].parent}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
