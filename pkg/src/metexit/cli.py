"""Command-line front end: ``metexit {validate,threshold,gexit,rates,trace}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 non-convergence where convergence was required.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, fmt
from .density import DEFAULT_GRID, DensityError, GridSpec, write_density_csv
from .ensemble import BUILTIN_ENSEMBLES, EnsembleError, builtin_ensemble, load_ensemble, nominal_rate, validate_sockets

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_NONCONVERGENCE = 3

log = logging.getLogger("metexit")


class ConfigError(Exception):
    pass


class NonConvergence(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    ensemble: str | None
    grid: GridSpec
    sigma: float | None
    ebn0_db: float | None
    method: str
    out: Path | None


def _parse_range(text: str, n: int, what: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != n:
        raise ConfigError(f"{what} must look like {':'.join(['X'] * n)}, got {text!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{what} has a non-numeric field: {text!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{what} must be finite")
    return vals


def sweep_values(text: str) -> list[float]:
    lo, hi, step = _parse_range(text, 3, "--sweep")
    if step <= 0 or hi < lo:
        raise ConfigError("--sweep needs LO <= HI and STEP > 0")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + k * step for k in range(n)]


def _load(ref: str | None):
    if not ref:
        raise ConfigError("--ensemble is required")
    p = Path(ref)
    if p.exists():
        return load_ensemble(p)
    if ref in BUILTIN_ENSEMBLES:
        return builtin_ensemble(ref)
    raise ConfigError(f"ensemble file not found: {ref} (builtins: {', '.join(BUILTIN_ENSEMBLES)})")


def _grid(args) -> GridSpec:
    try:
        return GridSpec(args.grid_llr_max, args.grid_bins)
    except (DensityError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _sigma(args, rate: float) -> float:
    from .de import convert_units

    if args.sigma is not None:
        if not args.sigma > 0:
            raise ConfigError("--sigma must be positive")
        return args.sigma
    if args.ebn0_db is not None:
        return convert_units(rate, args.ebn0_db, "ebn0_db", "sigma")
    raise ConfigError("one of --sigma or --ebn0-db is required")


def _emit_json(obj, out: Path | None) -> None:
    text = json.dumps(obj, indent=2, default=_json_default) + "\n"
    if out is not None:
        atomic_write_text(out, text)
    sys.stdout.write(text)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serialisable: {type(x)}")


def _round(x):
    # twelve significant digits, kept numeric in JSON
    if isinstance(x, float) and math.isfinite(x):
        return float(fmt(x))
    return x


def cmd_validate(args) -> int:
    spec = _load(args.ensemble)
    reports = validate_sockets(spec)
    rate = nominal_rate(spec)
    ok = all(r.balanced for r in reports)
    print(f"ensemble: {spec.name}")
    print(f"edge types: {spec.n_edge_types}, received slots: {spec.n_slots}")
    print(f"nominal rate: {fmt(rate)}")
    print(f"punctured fraction: {fmt(spec.punctured_fraction())}")
    for r in reports:
        state = "balanced" if r.balanced else "IMBALANCED"
        print(f"  edge {r.edge}: variable {fmt(r.variable_sockets)} check {fmt(r.check_sockets)} {state}")
    if args.out:
        _write_report(args.out, spec, rate, reports, ok)
    return EXIT_OK if ok else EXIT_CONFIG


def _write_report(out, spec, rate, reports, ok):
    atomic_write_text(
        out,
        json.dumps(
            {
                "ensemble": spec.name,
                "n_edge_types": spec.n_edge_types,
                "rate": _round(rate),
                "punctured_fraction": _round(spec.punctured_fraction()),
                "balanced": ok,
                "sockets": [
                    {"edge": r.edge, "variable": _round(r.variable_sockets), "check": _round(r.check_sockets), "balanced": r.balanced}
                    for r in reports
                ],
            },
            indent=2,
        )
        + "\n",
    )


def cmd_threshold(args) -> int:
    from .de import ThresholdBracketError, asymptotic_efficiency, convert_units, find_threshold, shannon_sigma

    spec = _load(args.ensemble)
    grid = _grid(args)
    rate = nominal_rate(spec)
    if not 0 < rate < 1:
        raise ConfigError(f"nominal rate {rate} outside (0, 1)")
    s_sh = shannon_sigma(rate, grid)
    if args.bracket:
        lo, hi = _parse_range(args.bracket, 2, "--bracket")
    else:
        lo, hi = 0.8 * s_sh, s_sh
    try:
        res = find_threshold(
            spec, lo, hi, args.tol, args.max_iter, args.target_pe, grid=grid, method=args.method
        )
    except ThresholdBracketError as exc:
        raise NonConvergence(str(exc)) from None
    s = res.sigma
    report = {
        "ensemble": spec.name,
        "method": args.method,
        "rate": _round(rate),
        "sigma": _round(s),
        "sigma_bracket": [_round(res.sigma_lo), _round(res.sigma_hi)],
        "snr_db": _round(convert_units(rate, s, "sigma", "snr_db")),
        "ebn0_db": _round(convert_units(rate, s, "sigma", "ebn0_db")),
        "iterations": res.trace_lo.iterations,
        "shannon_sigma": _round(s_sh),
        "shannon_ebn0_db": _round(convert_units(rate, s_sh, "sigma", "ebn0_db")),
        "efficiency": _round(asymptotic_efficiency(rate, s, grid)),
        "grid": {"llr_max": grid.llr_max, "n_bins": grid.n_bins},
    }
    _emit_json(report, args.out)
    return EXIT_OK


def cmd_gexit(args) -> int:
    from .gexit import gexit_chart, write_chart_csv

    spec = _load(args.ensemble)
    grid = _grid(args)
    sigma = _sigma(args, nominal_rate(spec))
    chart = gexit_chart(
        spec, sigma, per_edge=args.per_edge, method=args.method, grid=grid,
        max_iter=args.max_iter, target_pe=args.target_pe,
    )
    out = args.out or Path("gexit_out")
    write_chart_csv(out / "combined.csv", chart.curve, chart.dual)
    files = ["combined.csv"]
    for i, (c, d) in enumerate(chart.per_edge, start=1):
        write_chart_csv(out / f"edge{i}.csv", c, d)
        files.append(f"edge{i}.csv")
    meta = {k: _round(v) for k, v in chart.metadata().items()}
    meta.update({"ensemble": spec.name, "files": files})
    atomic_write_text(out / "metadata.json", json.dumps(meta, indent=2) + "\n")
    print(json.dumps(meta, indent=2))
    return EXIT_OK


def cmd_rates(args) -> int:
    from .mlcmsd import MlcError, QuantizerSpec, rate_sweep, rates_csv_text

    try:
        q = QuantizerSpec(args.levels, args.delta)
    except MlcError as exc:
        raise ConfigError(str(exc)) from None
    snrs = sweep_values(args.sweep or "-20:20:1")
    rows = rate_sweep(snrs, q)
    text = rates_csv_text(rows)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_trace(args) -> int:
    from .de import run_de

    spec = _load(args.ensemble)
    grid = _grid(args)
    sigma = _sigma(args, nominal_rate(spec))
    k = args.snapshot_every
    if k is not None and k < 1:
        raise ConfigError("--snapshot-every must be >= 1")
    tr = run_de(
        spec, sigma, args.max_iter, args.target_pe, grid=grid, method=args.method,
        snapshot_every=k or 10, snapshot_start=args.snapshot_start,
    )
    out = args.out or Path("trace_out")
    tr.write_csv(out / "pe.csv")
    for it, vn, cn in tr.snapshots:
        write_density_csv(out / f"vn_{it:05d}.csv", vn)
        write_density_csv(out / f"cn_{it:05d}.csv", cn)
    meta = {
        "ensemble": spec.name,
        "sigma": _round(sigma),
        "method": args.method,
        "iterations": tr.iterations,
        "converged": tr.converged,
        "final_pe": _round(tr.pe_history[-1]),
        "snapshots": [it for it, _, _ in tr.snapshots],
    }
    atomic_write_text(out / "metadata.json", json.dumps(meta, indent=2) + "\n")
    print(json.dumps(meta, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--ensemble", help="ensemble JSON file or builtin name (" + ", ".join(BUILTIN_ENSEMBLES) + ")")
    common.add_argument("--grid-llr-max", type=float, default=DEFAULT_GRID.llr_max)
    common.add_argument("--grid-bins", type=int, default=DEFAULT_GRID.n_bins)
    common.add_argument("--out", type=Path, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    chan = argparse.ArgumentParser(add_help=False)
    g = chan.add_mutually_exclusive_group()
    g.add_argument("--sigma", type=float)
    g.add_argument("--ebn0-db", type=float)

    de = argparse.ArgumentParser(add_help=False)
    de.add_argument("--method", choices=("de", "ga"), default="de")
    de.add_argument("--max-iter", type=int, default=2000)
    de.add_argument("--target-pe", type=float, default=1e-10)

    p = argparse.ArgumentParser(prog="metexit", description="Density evolution and G-EXIT charts for MET-LDPC ensembles.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check socket balance and report the rate")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("threshold", parents=[common, de], help="BIAWGN threshold by bisection")
    s.add_argument("--bracket", help="LO:HI in sigma (default: 0.8 to 1.0 times the Shannon sigma)")
    s.add_argument("--tol", type=float, default=1e-3, help="bisection tolerance in sigma")
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("gexit", parents=[common, chan, de], help="G-EXIT chart along the DE trajectory")
    s.add_argument("--per-edge", action="store_true", help="also write one chart per edge type")
    s.set_defaults(func=cmd_gexit)

    s = sub.add_parser("rates", parents=[common], help="MLC-MSD level rates over an SNR sweep")
    s.add_argument("--levels", type=int, default=4)
    s.add_argument("--delta", type=float, default=0.32)
    s.add_argument("--sweep", help="LO:HI:STEP in dB (default -20:20:1)")
    s.set_defaults(func=cmd_rates)

    s = sub.add_parser("trace", parents=[common, chan, de], help="dump combined densities during DE")
    s.add_argument("--snapshot-every", type=int, default=None)
    s.add_argument("--snapshot-start", type=int, default=0)
    s.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EnsembleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (DensityError, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
