"""Command-line entry point.

CSV files use fixed column orders, a header row, ``\\n`` line endings and
``repr`` floats so that repeated runs are byte-identical.  Flows are written
in veh/h, densities in veh/mi and times in s.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import ctm as ctm_mod
from .atlas import ClassificationError, admissible_pairs, boundary_points
from .config import ConfigError, RunConfig, load_config, read_config_file
from .lqm import ChatteringError, average_flow, cycle_map, simulate
from .mfd import (
    closed_form_curve,
    gridlock_time_formula,
    gridlock_time_simulated,
    mfd_numeric,
)
from .model import DomainError, InvariantError, Scenario
from .poincare import NotInRegion, fixed_point_closed, scan_seeds, scan_stationary_states

log = logging.getLogger("ringlab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
PER_HOUR = 3600.0

SCHEMAS = {
    "simulate.csv": ["t", "k1", "k2", "region", "g1", "g2", "q_rolling"],
    "cells.csv": ["t", "ring", "cell", "density"],
    "fixed_points.csv": ["k", "k1_star_lo", "k1_star_hi", "multiplier", "stability", "gridlock", "pair"],
    "phi.csv": ["k", "k1", "phi"],
    "mfd.csv": ["k", "q", "stability", "source", "k1_star_lo", "k1_star_hi"],
    "gridlock.csv": ["xi", "k1_0", "t", "k1"],
    "gridlock_forecast.csv": ["xi", "k1_0", "method", "T_g"],
    "atlas.csv": ["deltas", "boundary_id", "k1", "k"],
}

REPRO_K_FIG4 = 90.0
FIG6_KS = (20.0, 45.0, 65.0, 78.0, 100.0)


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, tuple):
        return "-".join(str(x) for x in v)
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
    log.info("wrote %s", path)
    return path


# --- row builders -----------------------------------------------------------


def simulate_rows(sc: Scenario, n_cycles: int) -> List[list]:
    tr = simulate(sc, n_cycles)
    T = sc.timing.T
    rows = []
    for t, k1, region, g1, g2 in zip(tr.t, tr.k1, tr.region, tr.g1, tr.g2):
        qr = average_flow(tr, float(t)) * PER_HOUR if t >= T - 1e-9 * T else None
        rows.append([float(t), float(k1), 2.0 * sc.k - float(k1), int(region), g1 * PER_HOUR, g2 * PER_HOUR, qr])
    return rows


def ctm_simulate_rows(sc: Scenario, n_cycles: int, dt: float, snapshot_every: Optional[int]):
    run = ctm_mod.ctm_simulate(sc, n_cycles, dt, snapshot_every=snapshot_every)
    steps = int(round(sc.timing.T / run.dt))
    rows = []
    for i, t in enumerate(run.t):
        g1 = g2 = None
        if i > 0:
            g1 = (run.out1[i] - run.out1[i - 1]) / run.dt * PER_HOUR
            g2 = (run.out2[i] - run.out2[i - 1]) / run.dt * PER_HOUR
        qr = None
        if i >= steps:
            qr = (run.out1[i] - run.out1[i - steps] + run.out2[i] - run.out2[i - steps]) / (
                2.0 * steps * run.dt
            ) * PER_HOUR
        rows.append([float(t), float(run.k1[i]), float(run.k2[i]), None, g1, g2, qr])
    cells = []
    for t, r1, r2 in run.snapshots:
        for ring, arr in ((1, r1), (2, r2)):
            for j, rho in enumerate(arr):
                cells.append([t, ring, j, float(rho)])
    return rows, cells


def fixed_point_rows(cfg: RunConfig) -> List[list]:
    rows = []
    for sc0 in cfg.scenarios:
        for k in cfg.densities() if cfg.k_grid is not None else [sc0.k]:
            sc = _at_k(sc0, k)
            for fp in scan_stationary_states(sc, dk=cfg.dk, tol=cfg.tol, n_max=cfg.n_max):
                hi = fp.k1_hi if fp.continuum else fp.k1_star
                rows.append([k, fp.k1_star, hi, fp.multiplier, fp.stability.value, fp.gridlock, "numeric"])
            if sc.turning.is_symmetric and sc.timing.symmetric:
                for pair in sorted(admissible_pairs(sc.turning.xi1)):
                    try:
                        fp = fixed_point_closed(pair, sc)
                    except NotInRegion:
                        continue
                    rows.append([k, fp.k1_star, fp.k1_star, fp.multiplier, fp.stability.value, fp.gridlock, pair])
    rows.sort(key=lambda r: (r[0], r[6] != "numeric", fmt(r[6]), r[1]))
    return rows


def phi_rows(sc0: Scenario, ks: Sequence[float], dk: Optional[float]) -> List[list]:
    rows = []
    for k in ks:
        sc = _at_k(sc0, k)
        step = sc.fd.k_j / 400.0 if dk is None else dk
        for x in scan_seeds(sc, step):
            rows.append([k, x, x - cycle_map(sc, x)])
    return rows


def mfd_rows(cfg: RunConfig, engine: str) -> List[list]:
    rows = []
    for sc in cfg.scenarios:
        ks = cfg.densities() if cfg.k_grid is not None else [sc.k]
        if engine == "ctm":
            pts = ctm_mod.ctm_mfd(sc, ks, cfg.dt, cfg.ctm_cycles, cfg.ctm_splits)
        else:
            pts = mfd_numeric(sc, ks, dk=cfg.dk, tol=cfg.tol, parallel=cfg.parallel)
            if sc.turning.is_symmetric and sc.timing.symmetric:
                pts = pts + closed_form_curve(sc.fd, sc.timing.pi, sc.turning.xi1, ks)
        for p in pts:
            rows.append([p.k, p.q * PER_HOUR, p.stability, p.source, p.k1_star_lo, p.k1_star_hi])
    rows.sort(key=lambda r: (r[0], r[3], r[1], r[4], r[5]))
    return rows


def gridlock_rows(cfg: RunConfig, engine: str):
    traj, forecast = [], []
    for sc in cfg.scenarios:
        xi = sc.turning.xi1
        if engine == "ctm":
            fc = ctm_mod.ctm_gridlock_time(sc, cfg.dt, cfg.sigma, cfg.max_cycles)
            n = _cycles_to_show(sc, fc.T_g, cfg.n_cycles)
            run = ctm_mod.ctm_simulate(sc, n, cfg.dt)
            traj.extend([xi, sc.k1_0, float(t), float(k1)] for t, k1 in zip(run.t, run.k1))
            forecast.append([xi, sc.k1_0, "ctm", fc.T_g])
        else:
            fc = gridlock_time_simulated(sc, cfg.sigma, cfg.max_cycles)
            n = _cycles_to_show(sc, fc.T_g, cfg.n_cycles)
            tr = simulate(sc, n)
            traj.extend([xi, sc.k1_0, float(t), float(k1)] for t, k1 in zip(tr.t, tr.k1))
            forecast.append([xi, sc.k1_0, "simulation", fc.T_g])
        if xi > 0.5 and sc.turning.is_symmetric and sc.timing.symmetric:
            f = gridlock_time_formula(sc.k1_0, xi, sc.timing.pi, sc.fd, sc.L, cfg.sigma)
            forecast.append([xi, sc.k1_0, "formula", f.T_g])
    return traj, forecast


def _cycles_to_show(sc: Scenario, T_g: float, floor: int) -> int:
    if math.isinf(T_g):
        return floor
    return max(floor, int(math.ceil(T_g / sc.timing.T)) + 2)


def atlas_rows(sc: Scenario) -> List[list]:
    return [list(r) for r in boundary_points(sc.turning, sc.fd)]


def _at_k(sc: Scenario, k: float) -> Scenario:
    lo, hi = max(2.0 * k - sc.fd.k_j, 0.0), min(2.0 * k, sc.fd.k_j)
    return sc.with_(k=float(k), k1_0=min(max(sc.k1_0 if sc.k == k else k, lo), hi))


# --- commands -----------------------------------------------------------------


def _single(cfg: RunConfig, what: str) -> Scenario:
    if len(cfg.scenarios) != 1:
        raise ConfigError(f"{what} takes a single scenario; config sweeps {len(cfg.scenarios)}")
    return cfg.scenarios[0]


def cmd_simulate(cfg: RunConfig, out: Path, engine: str) -> List[Path]:
    sc = _single(cfg, "simulate")
    if engine == "ctm":
        rows, cells = ctm_simulate_rows(sc, cfg.n_cycles, cfg.dt, cfg.snapshot_every)
        paths = [write_csv(out / "simulate.csv", SCHEMAS["simulate.csv"], rows)]
        if cfg.snapshot_every:
            paths.append(write_csv(out / "cells.csv", SCHEMAS["cells.csv"], cells))
        return paths
    return [write_csv(out / "simulate.csv", SCHEMAS["simulate.csv"], simulate_rows(sc, cfg.n_cycles))]


def cmd_fixed_points(cfg: RunConfig, out: Path, engine: str) -> List[Path]:
    paths = [write_csv(out / "fixed_points.csv", SCHEMAS["fixed_points.csv"], fixed_point_rows(cfg))]
    sc = cfg.scenarios[0]
    ks = cfg.phi_k if cfg.phi_k is not None else (cfg.densities() if cfg.k_grid is not None else [sc.k])
    paths.append(write_csv(out / "phi.csv", SCHEMAS["phi.csv"], phi_rows(sc, [float(k) for k in ks], cfg.dk)))
    return paths


def cmd_mfd(cfg: RunConfig, out: Path, engine: str) -> List[Path]:
    return [write_csv(out / "mfd.csv", SCHEMAS["mfd.csv"], mfd_rows(cfg, engine))]


def cmd_gridlock(cfg: RunConfig, out: Path, engine: str) -> List[Path]:
    traj, forecast = gridlock_rows(cfg, engine)
    return [
        write_csv(out / "gridlock.csv", SCHEMAS["gridlock.csv"], traj),
        write_csv(out / "gridlock_forecast.csv", SCHEMAS["gridlock_forecast.csv"], forecast),
    ]


def cmd_atlas(cfg: RunConfig, out: Path, engine: str) -> List[Path]:
    sc = _single(cfg, "atlas")
    return [write_csv(out / "atlas.csv", SCHEMAS["atlas.csv"], atlas_rows(sc))]


COMMANDS = {
    "simulate": cmd_simulate,
    "fixed-points": cmd_fixed_points,
    "mfd": cmd_mfd,
    "gridlock": cmd_gridlock,
    "atlas": cmd_atlas,
}


def recipe(target: str) -> List[Dict]:
    """Config overrides for each reproduction target, one dict per run."""
    k_grid = [150.0 * i / 50 for i in range(51)]
    if target == "fig4":
        return [
            dict(T=30.0, delta=2.0, k=REPRO_K_FIG4, xi=[0.6, 0.7, 0.8, 0.9], k1_0_frac=[0.7, 0.8, 0.9], _cmd="gridlock", _engine=e)
            for e in ("lqm", "ctm")
        ]
    if target == "fig6":
        return [dict(T=60.0, delta=4.0, xi=0.55, k=65.0, k_grid=list(FIG6_KS), _cmd="fixed-points", _engine="lqm")]
    if target == "fig7a":
        return [
            dict(T=100.0, delta=0.0, xi=0.85, k_grid=k_grid, _cmd="mfd", _engine=e) for e in ("lqm", "ctm")
        ]
    if target in ("fig7b", "fig7c"):
        xi = 0.3 if target == "fig7b" else 0.5
        return [dict(T=100.0, delta=0.0, xi=xi, k_grid=k_grid, _cmd="mfd", _engine="lqm")]
    raise ConfigError(f"unknown reproduction target {target!r}")


def cmd_reproduce(target: str, out: Path, base: Dict, parallel: int) -> List[Path]:
    paths = []
    for run in recipe(target):
        run = dict(run)
        command, engine = run.pop("_cmd"), run.pop("_engine")
        cfg = load_config(None, {**base, **run, "parallel": parallel})
        sub = out / target / engine
        paths.extend(COMMANDS[command](cfg, sub, engine))
    return paths


# --- entry point ----------------------------------------------------------------

EPILOG = "CSV schemas (flows in veh/h, densities in veh/mi, times in s):\n" + "\n".join(
    f"  {name}: {', '.join(cols)}" for name, cols in SCHEMAS.items()
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--engine", choices=("lqm", "ctm"), default=None)
    common.add_argument("--out", metavar="DIR", default=None, help="output directory")
    common.add_argument("--parallel", metavar="N", type=int, default=None, help="worker processes for sweeps")

    p = argparse.ArgumentParser(
        prog="ringlab",
        description="Signalized double-ring network analysis.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    c = sub.add_parser("ctm", parents=[common], help="simulate, gridlock or mfd on the cell model")
    c.add_argument("mode", nargs="?", choices=("simulate", "gridlock", "mfd"), default="simulate")
    r = sub.add_parser("reproduce", parents=[common], help="run a reproduction recipe")
    r.add_argument("target", choices=("fig4", "fig6", "fig7a", "fig7b", "fig7c"))
    return p


def _error(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("RINGLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.engine is not None:
        overrides["engine"] = args.engine
    if args.parallel is not None:
        overrides["parallel"] = args.parallel
    try:
        if args.command == "reproduce":
            base = read_config_file(args.config) if args.config else {}
            if not isinstance(base, dict):
                raise ConfigError("config must be a JSON object")
            out = Path(args.out or ".")
            cmd_reproduce(args.target, out, base, args.parallel or 0)
            return EXIT_OK
        cfg = load_config(args.config, overrides)
        out = Path(args.out or cfg.out)
        if args.command == "ctm":
            COMMANDS[args.mode](cfg, out, "ctm")
        else:
            COMMANDS[args.command](cfg, out, cfg.engine)
    except (ConfigError, InvariantError, json.JSONDecodeError, OSError) as e:
        return _error("config", e, EXIT_CONFIG)
    except (DomainError, ChatteringError, ClassificationError, NotInRegion, ArithmeticError, RuntimeError) as e:
        return _error("numeric", e, EXIT_NUMERIC)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
