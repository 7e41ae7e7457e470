"""Command-line interface: ``fit``, ``predict``, ``simulate`` and ``export``."""

from __future__ import annotations

import argparse
import io
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text
from .artifact import load_fit, save_fit
from .curves import Grid, center, interpolate, load_curves, read_table, save_curves
from .errors import FormatError, ParseError, PflsimError
from .estimator import OptimizerConfig, RegressionData, fit, predict
from .simgen import SimSpec, default_jobs, generate, monte_carlo

log = logging.getLogger("pflsim")

_BLOCK = re.compile(r"^(y|w\d+|z\d+)$", re.IGNORECASE)


def load_scalars(path, require_y: bool = True) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Read the ``y, w1..wq, z1..zd`` table; returns ``(y, W, Z)``."""
    rows, _ = read_table(path)
    if not rows:
        raise FormatError(f"{path}: missing header row")
    header = [h.lower() for h in rows[0]]
    for col, h in enumerate(header, start=1):
        if not _BLOCK.match(h):
            raise FormatError(f"{path}: row 1, column {col}: unknown column name {h!r} (expected y, w<k> or z<k>)")
    y_cols = [i for i, h in enumerate(header) if h == "y"]
    w_cols = sorted((i for i, h in enumerate(header) if h.startswith("w")), key=lambda i: int(header[i][1:]))
    z_cols = sorted((i for i, h in enumerate(header) if h.startswith("z")), key=lambda i: int(header[i][1:]))
    if require_y and len(y_cols) != 1:
        raise FormatError(f"{path}: expected exactly one 'y' column (response block missing)")
    if not z_cols:
        raise FormatError(f"{path}: no z columns (index covariate block Z is missing)")
    vals = []
    for r, cells in enumerate(rows[1:], start=2):
        if len(cells) != len(header):
            raise FormatError(f"{path}: ragged row {r}: expected {len(header)} columns, found {len(cells)}")
        out = []
        for c, cell in enumerate(cells, start=1):
            try:
                out.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {c}: cannot parse {cell!r} as a number") from None
        vals.append(out)
    mat = np.asarray(vals, dtype=float).reshape(len(vals), len(header))
    y = mat[:, y_cols[0]] if y_cols else None
    return y, mat[:, w_cols], mat[:, z_cols]


def _table_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
    return buf.getvalue()


def _config_from(args) -> OptimizerConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text()).get("estimator", {})
    for key in ("m", "c0", "degree", "rho0", "seed", "max_iter", "h0", "knot_count"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    return OptimizerConfig(**base)


def _file_settings(args, section: str) -> dict:
    if not getattr(args, "config", None):
        return {}
    return json.loads(Path(args.config).read_text()).get(section, {})


def fit_summary(f) -> str:
    lines = [
        "alpha  = " + " ".join(f"{v:.6f}" for v in f.alpha),
        "beta   = " + " ".join(f"{v:.6f}" for v in f.beta),
        f"m = {f.m}   m_tilde = {f.m_tilde}   K_star = {f.K_star}",
        f"objective = {f.objective_value:.6g}   iterations = {f.iterations}   converged = {f.converged}",
    ]
    return "\n".join(lines)


def run_fit(args) -> int:
    sample = load_curves(args.curves, grid_header=args.grid_header)
    if args.grid_size:
        sample = interpolate(sample, Grid.uniform(args.grid_size, sample.grid.lo, sample.grid.hi))
    y, w, z = load_scalars(args.scalars)
    if y.size != sample.n:
        raise FormatError(f"{args.scalars}: {y.size} rows but {args.curves} has {sample.n} curves")
    data = RegressionData.build(center(sample), y, w, z)
    result = fit(data, _config_from(args))
    save_fit(result, args.out)
    summary = fit_summary(result)
    print(summary)
    if args.summary:
        atomic_write_text(args.summary, summary + "\n")
    if not result.converged:
        print(f"warning: optimisation did not converge ({result.message})", file=sys.stderr)
    return 0


def _is_empty(path) -> bool:
    rows, _ = read_table(path)
    return not rows or (len(rows) == 1 and rows[0] and rows[0][0].startswith("#"))


def run_predict(args) -> int:
    model = load_fit(args.artifact)
    empty_curves = _is_empty(args.curves)
    _, w, z = load_scalars(args.scalars, require_y=False)
    if empty_curves:
        if z.shape[0]:
            raise FormatError(f"{args.curves}: no curves for {z.shape[0]} covariate rows")
        atomic_write_text(args.out, "prediction\n")
        return 0
    sample = load_curves(args.curves, grid_header=args.grid_header)
    if sample.n != z.shape[0]:
        raise FormatError(f"{args.scalars}: {z.shape[0]} rows but {args.curves} has {sample.n} curves")
    pred = predict(model, sample, w, z)
    atomic_write_text(args.out, _table_text(["prediction"], [[v] for v in pred]))
    return 0


def run_simulate(args) -> int:
    settings = _file_settings(args, "simulation")
    for key in ("model", "n", "delta", "reps", "seed", "sigma", "test_size", "grid_size"):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    if "reps" in settings:
        settings["replications"] = settings.pop("reps")
    settings["baseline"] = bool(args.baseline or settings.get("baseline", False))
    spec = SimSpec(config=_config_from(_EstimatorArgs(args)), **settings)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    report = monte_carlo(spec, jobs=jobs)
    atomic_write_text(args.out, report.to_json() + "\n")
    table = args.table or str(Path(args.out).with_suffix(".csv"))
    header, rows = report.table_rows()
    atomic_write_text(table, _table_text(header, rows))
    print(report.summary())
    return 0


class _EstimatorArgs:
    """Estimator flags for ``simulate``; ``--seed`` belongs to the simulation."""

    def __init__(self, args):
        self.config = args.config
        for key in ("m", "c0", "degree", "rho0", "max_iter", "h0", "knot_count"):
            setattr(self, key, getattr(args, key, None))
        self.seed = None


def run_export(args) -> int:
    draw = generate(args.model, args.n, args.delta, args.seed, 0, "train", args.grid_size, args.sigma)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_curves(out / "curves.csv", draw.curves)
    q, d = draw.w.shape[1], draw.z.shape[1]
    header = ["y"] + [f"w{k + 1}" for k in range(q)] + [f"z{k + 1}" for k in range(d)]
    rows = np.column_stack([draw.y, draw.w, draw.z])
    atomic_write_text(out / "scalars.csv", _table_text(header, rows))
    truth = {
        "model": args.model,
        "alpha": draw.truth.alpha.tolist(),
        "beta": draw.truth.beta.tolist(),
        "signal": draw.signal.tolist(),
    }
    atomic_write_text(out / "truth.json", json.dumps(truth, indent=2) + "\n")
    return 0


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimator")
    g.add_argument("--m", type=int, help="score cut-off used for profiling (default 5)")
    g.add_argument("--c0", type=float, help="knot spacing constant, h0 = c0 n^(-1/5) (default 1)")
    g.add_argument("--h0", type=float, help="explicit knot spacing, overrides --c0")
    g.add_argument("--knot-count", dest="knot_count", type=int, help="explicit number of knot intervals")
    g.add_argument("--degree", type=int, help="spline degree (default 3)")
    g.add_argument("--rho0", type=float, help="lower bound for the last index coefficient (default 0.01)")
    g.add_argument("--max-iter", dest="max_iter", type=int, help="optimiser iteration cap (default 200)")
    g.add_argument("--config", help="JSON file with 'estimator' and 'simulation' sections; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pflsim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the model to curve and scalar files")
    p.add_argument("--curves", required=True, help="curve file, one subject per row")
    p.add_argument("--scalars", required=True, help="table with columns y, w1..wq, z1..zd")
    p.add_argument("--out", required=True, help="fit artifact (JSON)")
    p.add_argument("--summary", help="also write the text summary here")
    p.add_argument("--grid-header", action="store_true", help="first curve row holds grid points")
    p.add_argument("--grid-size", type=int, help="interpolate curves onto this many equispaced points")
    p.add_argument("--seed", type=int, help="seed for the multi-start direction screen (default 0)")
    _add_estimator_flags(p)
    p.set_defaults(func=run_fit)

    p = sub.add_parser("predict", help="predict responses with a saved fit")
    p.add_argument("--artifact", required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--scalars", required=True, help="table with columns w1..wq, z1..zd (y optional)")
    p.add_argument("--out", required=True, help="output table, one prediction per row")
    p.add_argument("--grid-header", action="store_true")
    p.set_defaults(func=run_predict)

    p = sub.add_parser("simulate", help="Monte Carlo study for model m41 or m42")
    p.add_argument("--model", choices=["m41", "m42"])
    p.add_argument("--n", type=int, help="training sample size (default 200)")
    p.add_argument("--delta", type=float, help="eigenvalue decay exponent (default 1.5)")
    p.add_argument("--reps", type=int, help="replications (default 100)")
    p.add_argument("--seed", type=int, help="master seed (default 20240601)")
    p.add_argument("--sigma", type=float, help="noise sd (default 0.5 for m41, 1 for m42)")
    p.add_argument("--test-size", dest="test_size", type=int, help="test sample size for MAE (default 300)")
    p.add_argument("--grid-size", dest="grid_size", type=int, help="curve grid size (default 101)")
    p.add_argument("--baseline", action="store_true", help="also record the linear-link baseline")
    p.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
    p.add_argument("--out", required=True, help="report (JSON)")
    p.add_argument("--table", help="per-replication table (default: report path with .csv)")
    _add_estimator_flags(p)
    p.set_defaults(func=run_simulate)

    p = sub.add_parser("export", help="write one seeded synthetic dataset as curve/scalar files")
    p.add_argument("--model", choices=["m41", "m42"], default="m41")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--delta", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=20240601)
    p.add_argument("--sigma", type=float)
    p.add_argument("--grid-size", dest="grid_size", type=int, default=101)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=run_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (PflsimError, OSError, json.JSONDecodeError, TypeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
