"""roughflow command line: run | fit | field-check.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from ..grid import GridField3, GridFormatError
from ..integrate import FlowError
from ..lightcone import ConeDomainError
from ..spherequad import QuadratureError
from .config import ConfigError, load_config
from .experiments import field_report, run_experiment
from .fitting import FitError, fit_scaling

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_NUMERIC = (FlowError, QuadratureError, ConeDomainError, FloatingPointError, np.linalg.LinAlgError)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    for path in run_experiment(cfg):
        print(path)
    return EXIT_OK


def _transform(values, how):
    v = np.asarray(values, dtype=float)
    if how == "neglog":
        return -np.log(v)
    if how == "log":
        return np.log(v)
    return v


def _cmd_fit(args) -> int:
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ycol = args.y or ("psi_estimate" if args.mode == "psi" else "R")
    for col in (args.x, ycol):
        if not rows or col not in rows[0]:
            raise ConfigError([(col, f"column not found in {args.csv}")])
    # one point per distinct x (the qdelta3d table repeats each delta per K)
    pts = {}
    for r in rows:
        pts.setdefault(float(r[args.x]), float(r[ycol]))
    xs = np.array(sorted(pts))
    x = _transform(xs, args.x_transform)
    y = np.array([pts[v] for v in xs])
    order = np.argsort(x)
    fit = fit_scaling(np.stack([x[order], y[order]], 1), args.mode)
    print(json.dumps(fit.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_field_check(args) -> int:
    print(json.dumps(field_report(GridField3.load(args.grid_file)), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a key = value config file")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)
    f = sub.add_parser("fit", help="scaling fit of two CSV columns")
    f.add_argument("csv")
    f.add_argument("--mode", choices=("psi", "power", "linear"), default="power")
    f.add_argument("--x", default="delta", help="abscissa column (default: delta)")
    f.add_argument("--y", default=None, help="ordinate column (default: psi_estimate or R)")
    f.add_argument("--x-transform", choices=("neglog", "log", "none"), default="neglog")
    f.set_defaults(func=_cmd_fit)
    c = sub.add_parser("field-check", help="validate a binary grid field and print its norms")
    c.add_argument("grid_file")
    c.set_defaults(func=_cmd_field_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FitError, GridFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
