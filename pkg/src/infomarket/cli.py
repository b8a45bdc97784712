"""Command-line experiment runner.

Exit status: 0 success, 3 tatonnement did not converge (``solve`` only),
4 configuration error, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import experiments as ex
from .analysis import InfeasibleError
from .config import ConfigError, ExperimentConfig, default_config, load_config
from .equilibrium import NumericError, SolverError, tatonnement

EXIT_OK = 0
EXIT_NOT_CONVERGED = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5

TRACE_COLUMNS = ("iteration", "max_sq_imbalance", "day_ahead_price")
SPECTRUM_COLUMNS = ("index", "eigenvalue")

log = logging.getLogger("infomarket")


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])
    return path


def _load(args, two_outcome: bool = False) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config(two_outcome=two_outcome)
    return cfg.with_overrides(seed=args.seed, rho=args.rho, epsilon=args.epsilon, nu_max=args.nu_max)


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def result_json(result) -> dict:
    """JSON schema of ``solve --json``; see the README for field meanings."""
    disp = result.dispatch
    return {
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "residual": _jsonable(result.residual),
        "prices": _jsonable(np.asarray(result.prices.values)),
        "day_ahead_price": _jsonable(result.day_ahead_price),
        "dispatch": {
            "p": _jsonable(disp.p),
            "d": _jsonable(disp.d),
            "r": _jsonable(np.asarray(disp.r)),
            "l": _jsonable(np.asarray(disp.l)),
            "mismatch": _jsonable(disp.mismatch),
        },
    }


def cmd_solve(args) -> int:
    cfg = _load(args, two_outcome=True)
    if args.trace:
        cfg = replace(cfg, solver=replace(cfg.solver, trace_enabled=True))
    result = tatonnement(cfg.instance(), cfg.solver)

    prices = np.asarray(result.prices.values)
    width = min(len(prices), 10)
    print(f"converged:       {'yes' if result.converged else 'no'}")
    print(f"iterations:      {result.iterations}")
    print(f"residual:        {result.residual:.6g}")
    print(f"day-ahead price: {result.day_ahead_price:.6f}")
    shown = ", ".join(f"{v:.6f}" for v in prices[:width]) + (", ..." if len(prices) > width else "")
    print(f"prices:          [{shown}]  ({len(prices)} outcomes)")
    print(f"dispatch:        p={result.dispatch.p:.6f}  d={result.dispatch.d:.6f}  mismatch={result.dispatch.mismatch:.6f}")

    if args.json:
        text = json.dumps(result_json(result), indent=2)
        if args.json == "-":
            print(text)
        else:
            Path(args.json).write_text(text + "\n")
    if result.trace is not None:
        rows = ({"iteration": t.iteration, "max_sq_imbalance": t.residual, "day_ahead_price": t.day_ahead_price}
                for t in result.trace)
        print(f"wrote {write_csv(Path(args.out) / 'trace.csv', TRACE_COLUMNS, rows)}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    out = Path(args.out)
    if args.kind == "grid2d":
        cfg = _load(args, two_outcome=True)
        rows = ex.grid2d_sweep(cfg, args.grid)
        path = write_csv(out / "grid2d.csv", ex.GRID_COLUMNS, rows)
    else:
        cfg = _load(args)
        family = args.kind.split("-")[0]
        rows = ex.family_sweep(cfg, family, jobs=args.jobs)
        for row in rows:
            if row.get("error"):
                print(f"{row['label']}: {row['error']}", file=sys.stderr)
        path = write_csv(out / f"{family}_family.csv", ex.FAMILY_COLUMNS, rows)
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_stability(args) -> int:
    cfg = _load(args)
    rows, spectra = ex.stability_table(cfg, jobs=args.jobs)
    out = Path(args.out)
    write_csv(out / "stability.csv", ex.STABILITY_COLUMNS, rows)
    for label, eigs in spectra.items():
        write_csv(out / "spectrum" / f"{label}.csv", SPECTRUM_COLUMNS,
                  ({"index": i, "eigenvalue": v} for i, v in enumerate(eigs)))

    print(f"{'label':<12} {'iterations':>11} {'eig ratio':>11}")
    for row in rows:
        iters = str(row["iterations"]) if row["converged"] else "inf"
        print(f"{row['label']:<12} {iters:>11} {row['eig_ratio']:>11.4g}")
    print(f"wrote {out / 'stability.csv'} and per-label spectra under {out / 'spectrum'}")
    return EXIT_OK


def cmd_welfare(args) -> int:
    cfg = _load(args)
    rows, summary = ex.welfare_table(cfg, args.comparison, args.method)
    path = write_csv(Path(args.out) / "welfare.csv", ex.WELFARE_COLUMNS, rows)
    print(f"expected welfare, reference:  {summary['expected_reference']:.8f}")
    print(f"expected welfare, asymmetric: {summary['expected_asymmetric']:.8f}")
    print(f"expected loss:                {summary['expected_loss']:.3e}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_field(args) -> int:
    cfg = _load(args, two_outcome=True)
    presets = list(ex.FIELD_PRESETS) if args.preset == "both" else [args.preset]
    out = Path(args.out)
    for preset in presets:
        data = ex.field_data(cfg, preset, n=args.grid)
        write_csv(out / f"field_{preset}.csv", ex.FIELD_COLUMNS, data["grid"])
        write_csv(out / f"trajectory_{preset}.csv", ex.FIELD_COLUMNS, data["trajectory"])
        eq = data["equilibrium"]
        speeds = data["speeds"]
        print(f"{preset}: equilibrium ({eq[0]:.4f}, {eq[1]:.4f}); "
              f"speed along lambda_l {speeds[0]:.4g}, along lambda_h {speeds[1]:.4g}")
    print(f"wrote field and trajectory CSVs to {out}")
    return EXIT_OK


def cmd_distributions(args) -> int:
    cfg = _load(args)
    rows = ex.distribution_table(cfg)
    path = write_csv(Path(args.out) / "distributions.csv", ex.DISTRIBUTION_COLUMNS, rows)
    for row in rows:
        print(f"{row['label']:<12} mean {row['mean']:.4f}  variance {row['variance']:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def _common(parser: argparse.ArgumentParser, grid_default: int | None = None) -> None:
    parser.add_argument("--config", help="YAML/JSON experiment config (defaults to the built-in market)")
    parser.add_argument("--out", default=".", help="output directory for CSV files (default: .)")
    parser.add_argument("--seed", type=int, help="override the outcome-sampling seed")
    parser.add_argument("--nu-max", type=int, help="iteration cap for tatonnement")
    parser.add_argument("--rho", type=float, help="tatonnement step size")
    parser.add_argument("--epsilon", type=float, help="per-outcome squared-imbalance tolerance")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps (default: 1)")
    if grid_default is not None:
        parser.add_argument("--grid", type=int, default=grid_default, help=f"grid points per axis (default: {grid_default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infomarket", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run tatonnement on one market")
    _common(p)
    p.add_argument("--json", metavar="PATH", help="also write the result as JSON ('-' for stdout)")
    p.add_argument("--trace", action="store_true", help="write trace.csv with per-iteration residuals")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="labeled-family or two-outcome grid sweep")
    p.add_argument("kind", choices=["mean-family", "variance-family", "grid2d"])
    _common(p, grid_default=49)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stability", help="iterations and Jacobian spectrum per labeled distribution")
    _common(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("welfare", help="per-outcome welfare, reference vs a comparison distribution")
    _common(p)
    p.add_argument("--comparison", help="label of the producer distribution to compare (e.g. mu3_up)")
    p.add_argument("--method", choices=["exact", "tatonnement"], default="exact",
                   help="how day-ahead quantities are computed (default: exact)")
    p.set_defaults(func=cmd_welfare)

    p = sub.add_parser("field", help="price-dynamics vector field for the two-outcome presets")
    _common(p, grid_default=21)
    p.add_argument("--preset", choices=[*ex.FIELD_PRESETS, "both"], default="both")
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("distributions", help="calibrated labeled distributions and their moments")
    _common(p)
    p.set_defaults(func=cmd_distributions)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, SolverError, InfeasibleError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
