"""Command line driver: ``dglti {converge,stabilize,bench,info} ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence in a
run that was expected to be stable.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys

from . import experiments as ex
from .filters import FilterSpec

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def write_csv(rows: list[dict], columns: list[str], path, mode: str = "w") -> None:
    fh = sys.stdout if path in (None, "-") else open(path, mode, newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()


def _slope_path(out):
    if out in (None, "-"):
        return None
    root, ext = os.path.splitext(out)
    return f"{root}_slopes{ext or '.csv'}"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="YAML experiment configuration")
    p.add_argument("--tau", type=_floats, help="comma-separated time steps (replaces the config list)")
    p.add_argument("--p", type=_ints, help="comma-separated LFC degrees")
    p.add_argument("--eta", type=_floats, help="comma-separated LFC stabilization values")
    p.add_argument("--theta-c", type=float, help="coarse CFL safety factor in (0, 1)")
    p.add_argument("--override-cfl", action="store_true", help="run steps beyond the CFL bound")
    p.add_argument("--threads", type=int, help="worker processes for sweep points")
    p.add_argument("--out", help="CSV output path ('-' for stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dglti", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("converge", "error against time step, with fitted slopes"),
                       ("stabilize", "LFC sweep with and without stabilization"),
                       ("bench", "runtime of leapfrog, LI and LFC-LTS")):
        _add_common(sub.add_parser(name, help=text))
    info = sub.add_parser("info", aliases=["project-info"], help="filter constants table")
    info.add_argument("--filter", action="append", default=None,
                      help="leapfrog, cn or lfc:P:ETA (repeatable)")
    info.add_argument("--theta", type=float, default=0.95, help="leapfrog safety factor")
    return parser


def _overrides(args) -> dict:
    return {"tau": args.tau, "p": args.p, "eta": args.eta, "theta_c": args.theta_c,
            "override_cfl": args.override_cfl, "threads": args.threads, "out": args.out}


def _unexpected_divergence(cfg, rows) -> bool:
    return not cfg.override_cfl and any(r.get("status") == "diverged" for r in rows)


def cmd_converge(args) -> int:
    cfg = ex.load_config(args.config, _overrides(args))
    rows, slopes = ex.converge(cfg)
    write_csv(rows, ex.RUN_COLUMNS, cfg.out)
    slope_out = _slope_path(cfg.out)
    if slope_out is None:
        print()
    write_csv(slopes, ex.SLOPE_COLUMNS, slope_out)
    return EXIT_DIVERGED if _unexpected_divergence(cfg, rows) else EXIT_OK


def cmd_stabilize(args) -> int:
    cfg = ex.load_config(args.config, _overrides(args))
    rows = ex.stabilize(cfg)
    write_csv(rows, ex.RUN_COLUMNS, cfg.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = ex.load_config(args.config, _overrides(args))
    rows = ex.bench(cfg)
    write_csv(rows, ex.BENCH_COLUMNS, cfg.out)
    print(ex.bench_table(rows), file=sys.stderr if cfg.out in (None, "-") else sys.stdout)
    bad = any(r["final_l2_error"] >= ex.SENTINEL or not math.isfinite(r["final_l2_error"])
              for r in rows)
    return EXIT_DIVERGED if bad else EXIT_OK


DEFAULT_INFO_FILTERS = ("leapfrog", "cn", "lfc:2:1", "lfc:4:1", "lfc:8:1")


def cmd_info(args) -> int:
    specs = [ex.parse_filter(f) for f in (args.filter or DEFAULT_INFO_FILTERS)]
    print(ex.info(specs, args.theta))
    return EXIT_OK


COMMANDS = {"converge": cmd_converge, "stabilize": cmd_stabilize, "bench": cmd_bench,
            "info": cmd_info, "project-info": cmd_info}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ex.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
