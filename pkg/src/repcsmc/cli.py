"""Command-line interface: ``repcsmc {simulate,run,diagnose,compare,variance}``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .diagnostics import mixture_weight_variance
from .harness import (
    ConfigError,
    RunConfig,
    TraceStore,
    compare_stores,
    dataset_path,
    diagnose_store,
    run_experiment,
    save_dataset,
    simulate_dataset,
    write_table,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical failures here
    def error(self, message):
        raise UsageError(message)


def _uint64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="repcsmc", description="Replica conditional SMC samplers and diagnostics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate and store a dataset")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--seed", type=_uint64, help="dataset seed (overrides data.seed)")
    s.add_argument("--out", type=Path, help="output directory (default: config output)")

    r = sub.add_parser("run", help="execute a run config")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=_uint64, help="master seed (overrides seed)")
    r.add_argument("--out", type=Path, help="trace directory (default: config output)")
    r.add_argument("--threads", type=_positive, default=1, help="worker processes for independent runs")

    d = sub.add_parser("diagnose", help="IACT / SE / coverage table from a trace directory")
    d.add_argument("traces", type=Path)
    d.add_argument("--burn-in", type=float, default=None, help="burn-in fraction (default: from the manifest)")
    d.add_argument("--out", type=Path, help="table path (default: <traces>/diagnostics.csv)")

    c = sub.add_parser("compare", help="IACT ratio table of two trace directories (b relative to a)")
    c.add_argument("traces_a", type=Path)
    c.add_argument("traces_b", type=Path)
    c.add_argument("--burn-in", type=float, default=None)
    c.add_argument("--out", type=Path, help="table path (default: print only)")

    v = sub.add_parser("variance", help="variance of the mixture importance weight 1/p(x)")
    v.add_argument("--mu", type=float, required=True)
    v.add_argument("--sigma0-sq", type=float, required=True)
    v.add_argument("--sigma1-sq", type=float, required=True)
    return p


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out if args.out is not None else cfg.output
    if out is None:
        raise UsageError("no output directory: pass --out or set output in the config")
    return Path(out)


def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.data_seed = args.seed
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    x, y = simulate_dataset(cfg)
    path = dataset_path(cfg, out)
    save_dataset(path, cfg.model["kind"], x, y, cfg.data_seed)
    print(path)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _out_dir(args, cfg)
    store = run_experiment(cfg, out, threads=args.threads)
    print(f"wrote {store.traces.shape[0]} run(s) x {store.traces.shape[1] - 1} iterations to {out}")
    return EXIT_OK


def _burn_in(args, store: TraceStore) -> float:
    return args.burn_in if args.burn_in is not None else store.config.get("burn_in_fraction", 0.1)


def cmd_diagnose(args) -> int:
    store = TraceStore.read(args.traces)
    rows, coverage = diagnose_store(store, _burn_in(args, store))
    out = args.out if args.out is not None else args.traces / "diagnostics.csv"
    write_table(out, rows)
    taus = np.array([r["iact"] for r in rows])
    print(f"variables: {len(rows)}  median IACT: {np.median(taus):.3f}  max IACT: {taus.max():.3f}")
    if coverage is not None:
        print(f"Kalman coverage (|oracle - mean| <= 2 se): {coverage:.3f}")
    print(f"table: {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = TraceStore.read(args.traces_a), TraceStore.read(args.traces_b)
    rows = compare_stores(a, b, _burn_in(args, a))
    if args.out is not None:
        write_table(args.out, rows)
    ratios = np.array([r["ratio"] for r in rows])
    adjusted = np.array([r["time_adjusted_ratio"] for r in rows])
    print(f"median IACT ratio (b / a): {np.median(ratios):.3f}")
    print(f"median time-adjusted ratio (b / a): {np.median(adjusted):.3f}")
    return EXIT_OK


def cmd_variance(args) -> int:
    print(repr(mixture_weight_variance(args.mu, args.sigma0_sq, args.sigma1_sq)))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "diagnose": cmd_diagnose,
    "compare": cmd_compare,
    "variance": cmd_variance,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"repcsmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"repcsmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"repcsmc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"repcsmc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # remaining ValueErrors come from invalid arguments (e.g. variance preconditions)
        print(f"repcsmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
