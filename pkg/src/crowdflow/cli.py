"""Command-line entry points and file outputs.

Subcommands:
    simulate  run one scenario; snapshot CSVs, metrics JSON, optional PGM
    braess    paired runs (open room vs obstacle columns) + exit-time report
    gateaux   finite-difference sensitivity error table over a list of h
    confine   reachable-set evolution + confinement/dispersal verdicts

Exit codes: 0 success, 2 validation failure, 3 numerical abort.
All outputs are deterministic and embed the config hash.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .confinement import (DomainTooSmall, confinement_condition,
                          dispersal_condition, reach_evolve)
from .config import ConfigError, build_scenario, parse_config
from .dynamics import ModelSpec
from .functionals import evacuation_time, gateaux_check
from .grid import GeometryError, gaussian_datum
from .kernels import KernelError
from .solver import NumericalAbort, RunResult, run_scenario


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _provenance(cfg_text: str, scn=None) -> dict:
    prov = {"generator": f"crowdflow {__version__}",
            "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest()}
    if scn is not None:
        prov["scheme"] = {"cfl": scn.params.cfl, "dt_max": scn.params.dt_max,
                          "t_end": scn.params.t_end,
                          "snapshot_dt": scn.params.snapshot_dt,
                          "dx": scn.geometry.grid.dx, "dy": scn.geometry.grid.dy}
    return prov


def write_snapshot_csv(path: Path, run: RunResult, idx: int, prov: dict) -> None:
    grid = run.grid
    snap = run.snapshots[idx]
    t = run.snapshot_times[idx]
    X, Y = grid.centers()
    cols = ["i", "j", "x", "y"] + (["rho"] if len(snap) == 1 else
                                   [f"rho{k + 1}" for k in range(len(snap))])
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# config_sha256={prov['config_sha256']} t={_fmt(t)} "
                 f"dx={_fmt(grid.dx)} dy={_fmt(grid.dy)}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(grid.nx):
            for j in range(grid.ny):
                row = [str(i), str(j), _fmt(X[i, j]), _fmt(Y[i, j])]
                row += [_fmt(rho[i, j]) for rho in snap]
                fh.write(",".join(row) + "\n")


def write_snapshot_pgm(path: Path, run: RunResult, idx: int, prov: dict,
                       rho_max: float) -> None:
    """8-bit grayscale: gray = round(255 * min(rho/rho_max, 1)); densities
    are summed over populations.  Image rows run from high y to low y."""
    rho = sum(run.snapshots[idx])
    gray = np.round(255.0 * np.minimum(rho / rho_max, 1.0)).astype(np.uint8)
    img = gray.T[::-1, :]   # (ny, nx), top row = largest y
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        fh.write(f"# gray = round(255*min(rho/{_fmt(rho_max)},1)); "
                 f"config_sha256={prov['config_sha256']} "
                 f"t={_fmt(run.snapshot_times[idx])}\n".encode())
        fh.write(f"{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def _json_dump(obj, path: Path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _series_json(run: RunResult) -> dict:
    out = {"t": [float(v) for v in run.series["t"]],
           "mass": [[float(v) for v in row] for row in run.series["mass"]],
           "linf": [[float(v) for v in row] for row in run.series["linf"]],
           "tv": [[float(v) for v in row] for row in run.series["tv"]],
           "evacuated": [float(v) for v in run.series["evacuated"]]}
    if run.agent_track is not None:
        out["agents"] = [[[float(c) for c in p] for p in frame]
                         for frame in run.agent_track]
    return out


def _write_run(outdir: Path, prefix: str, run: RunResult, cfg, prov: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    if cfg.output.get("csv", True):
        for idx in range(len(run.snapshot_times)):
            write_snapshot_csv(outdir / f"{prefix}snapshot_{idx:04d}.csv",
                               run, idx, prov)
    if cfg.output.get("pgm", False):
        rho_max = max(cfg.law.jam, 1e-12) if cfg.law is not None else 1.0
        for idx in range(len(run.snapshot_times)):
            write_snapshot_pgm(outdir / f"{prefix}snapshot_{idx:04d}.pgm",
                               run, idx, prov, rho_max)
    if cfg.output.get("metrics", True):
        report = {"provenance": prov,
                  "snapshot_times": [float(t) for t in run.snapshot_times],
                  "initial_mass": float(run.initial_mass),
                  "series": _series_json(run)}
        _json_dump(report, outdir / f"{prefix}metrics.json")


def cmd_simulate(cfg, outdir: Path) -> int:
    scn = build_scenario(cfg)
    prov = _provenance(cfg.raw_text, scn)
    run = run_scenario(scn)
    _write_run(outdir, "", run, cfg, prov)
    return 0


def cmd_braess(cfg, outdir: Path) -> int:
    if not cfg.braess_columns:
        raise ConfigError("braess subcommand needs a [braess] table with columns")
    theta = cfg.braess_theta
    outdir.mkdir(parents=True, exist_ok=True)
    results = {}
    for label, extra in (("open", ()), ("columns", tuple(cfg.braess_columns))):
        scn = build_scenario(cfg, extra_obstacles=extra)
        prov = _provenance(cfg.raw_text, scn)
        run = run_scenario(scn)
        _write_run(outdir, f"{label}_", run, cfg, prov)
        results[label] = evacuation_time(run, theta)
    prov = _provenance(cfg.raw_text)
    t_open, t_cols = results["open"], results["columns"]
    report = {"provenance": prov, "theta": theta,
              "exit_time_open": t_open, "exit_time_columns": t_cols,
              "difference": (t_open - t_cols
                             if t_open is not None and t_cols is not None else None),
              "columns_faster": (t_cols < t_open
                                 if t_open is not None and t_cols is not None else None)}
    _json_dump(report, outdir / "braess_report.json")
    return 0


def cmd_gateaux(cfg, outdir: Path) -> int:
    if cfg.gateaux is None:
        raise ConfigError("gateaux subcommand needs a [gateaux] table")
    scn = build_scenario(cfg)
    gt = cfg.gateaux
    spec = ModelSpec(model="S", law=cfg.law, kernel=scn.model.kernel)
    r_o = gaussian_datum(scn.geometry.grid, gt["center"][0], gt["center"][1],
                         gt["sigma"], gt["amplitude"])
    r_o = np.where(scn.geometry.free, r_o, 0.0)
    params = replace(scn.params, fixed_dt=gt["fixed_dt"])
    errors = gateaux_check(scn.densities[0], r_o, gt["h"], spec, scn.nu,
                           scn.geometry, params, gt["t_end"])
    prov = _provenance(cfg.raw_text, scn)
    slope = None
    if len(gt["h"]) >= 2 and all(e > 0 for e in errors):
        slope = float(np.polyfit(np.log(gt["h"]), np.log(errors), 1)[0])
    report = {"provenance": prov, "t_end": gt["t_end"], "h": gt["h"],
              "error_l1": [float(e) for e in errors],
              "non_increasing": bool(all(b <= a * (1 + 1e-12)
                                         for a, b in zip(errors, errors[1:]))),
              "loglog_slope": slope}
    outdir.mkdir(parents=True, exist_ok=True)
    _json_dump(report, outdir / "gateaux_report.json")
    return 0


def cmd_confine(cfg, outdir: Path) -> int:
    spec = cfg.confinement
    if spec is None:
        raise ConfigError("confine subcommand needs a [confinement] table")
    from .grid import make_grid
    grid = make_grid(spec.domain, spec.dx)
    X, Y = grid.centers()
    k0_mask = spec.k0.contains(X, Y)
    tracks = [spec.track] if spec.track is not None else []
    snaps = reach_evolve(k0_mask, tracks, spec.psi, spec.c, spec.t_end, grid,
                         snapshot_dt=spec.snapshot_dt)
    report = {"provenance": _provenance(cfg.raw_text),
              "c": spec.c, "t_end": spec.t_end,
              "area": {"t": [float(s.t) for s in snaps],
                       "value": [float(s.area) for s in snaps]}}
    if spec.rstar is not None and spec.track is not None and spec.track.kind == "orbit":
        rep = confinement_condition(spec.psi, spec.c, spec.track.radius,
                                    spec.rstar[0], spec.rstar[1])
        report["confinement_condition"] = {
            "holds": rep.holds, "margin": rep.margin, "worst_rstar": rep.worst}
    area0 = float(np.count_nonzero(k0_mask)) * grid.cell_area
    disp = dispersal_condition(spec.psi, spec.c, area0, spec.sigma_max,
                               spec.sigma_samples)
    report["dispersal_condition"] = {
        "holds": disp.holds, "margin": disp.margin,
        "sigma": disp.worst, "conclusive": disp.conclusive}
    outdir.mkdir(parents=True, exist_ok=True)
    _json_dump(report, outdir / "confine_report.json")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdflow",
                                description="Macroscopic crowd-dynamics simulator")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "run one scenario"),
                           ("braess", "paired obstacle comparison"),
                           ("gateaux", "sensitivity finite-difference check"),
                           ("confine", "reachable-set confinement study")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", type=Path)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--dx", type=float, default=None,
                        help="override the grid resolution")
        sp.add_argument("--end-time", type=float, default=None,
                        help="override the simulation horizon")
        sp.add_argument("--seedless", action="store_true",
                        help="reserved; the simulator uses no randomness")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
        if args.dx is not None:
            if cfg.dx is not None:
                cfg.dx = args.dx
            if cfg.confinement is not None:
                cfg.confinement.dx = args.dx
        if args.end_time is not None:
            if cfg.scheme is not None:
                cfg.scheme = replace(cfg.scheme, t_end=args.end_time)
            if cfg.confinement is not None:
                cfg.confinement.t_end = args.end_time
        handler = {"simulate": cmd_simulate, "braess": cmd_braess,
                   "gateaux": cmd_gateaux, "confine": cmd_confine}[args.command]
        return handler(cfg, args.out)
    except (ConfigError, GeometryError, KernelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalAbort, DomainTooSmall) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
