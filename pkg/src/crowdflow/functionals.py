"""Diagnostics and control-oriented functionals: mass / sup / total
variation, the region-occupancy cost J_T, evacuation times, and the
linearized sensitivity equation with its finite-difference check.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import ModelSpec, speed, speed_prime
from .grid import Grid2D, Rect, RoomGeometry, total_mass
from .kernels import convolve_local
from .solver import (RunResult, Scenario, SchemeParams, discrete_tv,
                     fv_step_tangent, run_scenario)


def metrics(rho: np.ndarray, grid: Grid2D) -> tuple[float, float, float]:
    """(mass, L-infinity, discrete TV) of one density layer."""
    return (total_mass(rho, grid),
            float(rho.max()) if rho.size else 0.0,
            discrete_tv(rho, grid))


@dataclass(frozen=True)
class CostSpec:
    """Cost J_T = int_0^T int_Omega f(rho): region, horizon and penalty."""
    region: list[Rect]
    horizon: float
    family: str = "quadratic-excess"     # or "tabulated"
    rho_hat: float = 0.0
    table_rho: np.ndarray | None = field(default=None, repr=False)
    table_f: np.ndarray | None = field(default=None, repr=False)

    def penalty(self, rho: np.ndarray) -> np.ndarray:
        if self.family == "quadratic-excess":
            return np.maximum(rho - self.rho_hat, 0.0) ** 2
        if self.family == "tabulated":
            return np.interp(rho, self.table_rho, self.table_f)
        raise ValueError(f"unknown penalty family {self.family!r}")


def cost_JT(run: RunResult, spec: CostSpec) -> float:
    """Time-trapezoid, space-midpoint quadrature of the penalty over the
    stored snapshots up to the horizon."""
    times = np.asarray(run.snapshot_times)
    if spec.horizon > times[-1] + 1e-9:
        raise ValueError(f"cost horizon {spec.horizon} beyond run horizon {times[-1]}")
    X, Y = run.grid.centers()
    mask = np.zeros(run.grid.shape, dtype=bool)
    for rect in spec.region:
        mask |= rect.contains(X, Y)
    keep = times <= spec.horizon + 1e-9
    t_sel = times[keep]
    vals = []
    for snap in (s for s, k in zip(run.snapshots, keep) if k):
        rho_tot = sum(snap)
        vals.append(float(spec.penalty(rho_tot)[mask].sum()) * run.grid.cell_area)
    if len(t_sel) < 2:
        return 0.0
    return float(np.trapezoid(vals, t_sel))


def evacuation_time(run: RunResult, theta: float = 0.999) -> float | None:
    """First time at which a fraction theta of the initial mass has left,
    linearly interpolated between recorded steps; None if not reached."""
    if not (0.0 < theta <= 1.0):
        raise ValueError("theta must be in (0, 1]")
    m0 = run.initial_mass
    if m0 == 0:
        return 0.0
    mass = run.series["mass"].sum(axis=1)
    target = (1.0 - theta) * m0
    below = np.nonzero(mass <= target)[0]
    if len(below) == 0:
        return None
    k = int(below[0])
    if k == 0:
        return float(run.series["t"][0])
    t0, t1 = run.series["t"][k - 1], run.series["t"][k]
    m_prev, m_next = mass[k - 1], mass[k]
    if m_prev == m_next:
        return float(t1)
    frac = (m_prev - target) / (m_prev - m_next)
    return float(t0 + frac * (t1 - t0))


def _steps(t_end: float, params: SchemeParams):
    """Fixed-dt step sequence hitting t_end exactly (final step clamped)."""
    dt = params.fixed_dt if params.fixed_dt is not None else params.dt_max
    t = 0.0
    while t < t_end - 1e-12:
        yield min(dt, t_end - t)
        t += min(dt, t_end - t)


def solve_linearized(rho_o: np.ndarray, r_o: np.ndarray, spec: ModelSpec,
                     nu: np.ndarray, geometry: RoomGeometry,
                     params: SchemeParams, t_end: float):
    """Co-evolve the nonlocal-speed density and the linearized
    perturbation r up to t_end.

    The perturbation is advanced by the same splitting scheme with the
    frozen velocity v(rho*eta) nu plus the explicit perturbation flux
    rho v'(rho*eta) (r*eta) nu, i.e. the exact tangent of the nonlinear
    update; see the package notes on the linearized source term.
    Returns (rho(t_end), r(t_end)).
    """
    if spec.model != "S":
        raise ValueError("the linearized equation is defined for the nonlocal-speed model only")
    grid = geometry.grid
    rho = np.where(geometry.free, rho_o, 0.0)
    r = np.where(geometry.free, r_o, 0.0)
    step = 0
    for dt in _steps(t_end, params):
        avg = convolve_local(rho, spec.kernel, grid)
        V = speed(spec.law, avg)[..., None] * nu
        r_avg = convolve_local(r, spec.kernel, grid)
        dV = (speed_prime(spec.law, avg) * r_avg)[..., None] * nu
        rho, r = fv_step_tangent(rho, r, V, dV, dt, geometry, step_index=step)
        step += 1
    return rho, r


def gateaux_check(rho_o: np.ndarray, r_o: np.ndarray, h_list, spec: ModelSpec,
                  nu: np.ndarray, geometry: RoomGeometry, params: SchemeParams,
                  t_end: float) -> list[float]:
    """Finite-difference validation of the directional derivative:
    e(h) = || (rho_h(T) - rho(T)) / h - r(T) ||_L1 for each h.

    All runs share the same fixed step sequence so the perturbed and base
    solutions are directly comparable.
    """
    h_list = list(h_list)
    if any(h <= 0 for h in h_list):
        raise ValueError("perturbation sizes must be positive")
    rho_T, r_T = solve_linearized(rho_o, r_o, spec, nu, geometry, params, t_end)

    run_params = replace(params, t_end=t_end, snapshot_dt=None, stop_theta=None)

    def nonlinear(datum):
        scn = Scenario(geometry=geometry, nu=nu, model=spec,
                       densities=[datum], agents=None, params=run_params)
        run = run_scenario(scn)
        return run.snapshots[-1][0]

    area = geometry.grid.cell_area
    errors = []
    for h in h_list:
        rho_h = nonlinear(rho_o + h * r_o)
        diff = (rho_h - rho_T) / h - r_T
        errors.append(float(np.abs(diff).sum()) * area)
    return errors
