"""Time integration: dimensional-splitting finite-volume scheme for the
conservation law(s) coupled with an explicit midpoint step for the agents.

Fluxes are local Lax-Friedrichs,

    F = 1/2 (f_L + f_R) - 1/2 alpha (rho_R - rho_L),

with zero flux through wall faces and copy-out (upwind) outflow through
exit faces.  Only the nonlocal/geometric part of the velocity is frozen
at the start of the step: the sweep flux is f = rho (v(rho) w(x) + b(x))
with the speed factor evaluated at the in-sweep density, the drift
direction w and the additive drift b frozen.  Freezing the speed factor
as well would make the flux linear in rho, and linear advection in a
convergent field piles density up without bound; keeping v(rho) live
makes the flux vanish at the jam density, so the sweep is a monotone
scheme with the constants 0 and jam as steady states and the density
stays in [0, jam] wherever b = 0.  The dissipation coefficient covers
the characteristic speed, alpha = max_{L,R} |(v + rho v') w + b|.
Model S evaluates the speed at the mollified density, its flux really
is linear in rho, and it uses the frozen full velocity with alpha =
max(|u_L|, |u_R|).

Sweep order alternates (xy, yx, ...) to suppress splitting bias.  Exit
cells hold zero density; mass crossing into them is counted as
evacuated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (AgentState, ModelSpec, deviation_I, dog_repulsion,
                       outflow_demand, phi_dogs, phi_piper, piper_pull, speed,
                       speed_lipschitz, velocity_S)
from .grid import EXIT, FREE, Grid2D, RoomGeometry, total_mass

STABILITY_CFL = 0.5


class CFLError(RuntimeError):
    pass


class NumericalAbort(RuntimeError):
    """Non-finite density detected; carries a diagnostic snapshot."""

    def __init__(self, message: str, t: float, densities):
        super().__init__(message)
        self.t = t
        self.densities = densities


@dataclass(frozen=True)
class SchemeParams:
    cfl: float = 0.45
    dt_max: float = 0.01
    t_end: float = 1.0
    snapshot_dt: float | None = None   # None: snapshots only at 0 and t_end
    stop_theta: float | None = None    # stop once this mass fraction evacuated
    fixed_dt: float | None = None      # bypass adaptive dt (sensitivity runs)

    def __post_init__(self):
        if not (0.0 < self.cfl <= STABILITY_CFL):
            raise ValueError(f"cfl must be in (0, {STABILITY_CFL}], got {self.cfl}")
        if self.dt_max <= 0:
            raise ValueError("dt_max must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if self.snapshot_dt is not None and self.snapshot_dt <= 0:
            raise ValueError("snapshot_dt must be positive")
        if self.stop_theta is not None and not (0.0 < self.stop_theta <= 1.0):
            raise ValueError("stop_theta must be in (0, 1]")


@dataclass
class SimState:
    t: float
    densities: list[np.ndarray]
    agents: AgentState | None = None
    step: int = 0


def cfl_dt(velocities, grid: Grid2D, params: SchemeParams,
           wavespeeds=None) -> float:
    """dt = min(dt_max, cfl * min(dx,dy) / max |V|_inf); dt_max if quiescent.
    Wave-speed bound fields, when given, replace |V| in the maximum."""
    vmax = 0.0
    if wavespeeds is None:
        wavespeeds = [None] * len(velocities)
    for V, ws in zip(velocities, wavespeeds):
        if not np.all(np.isfinite(V)):
            raise ValueError("velocity field contains non-finite values")
        if V.size:
            vmax = max(vmax, float(np.max(np.abs(V))))
        if ws is not None and ws.size:
            vmax = max(vmax, float(np.max(ws)))
    if vmax == 0.0:
        return params.dt_max
    return min(params.dt_max, params.cfl * min(grid.dx, grid.dy) / vmax)


def _sweep(rho, u, dt, h, axis, geometry, w=None, b=None, law=None,
           r=None, du=None):
    """One Lax-Friedrichs sweep along `axis`.

    With `w`/`b`/`law` given the flux is the nonlinear
    f = rho (v(rho) w(x) + b(x)) with the speed factor live in the
    in-sweep density and alpha covering the characteristic speed
    |(v + rho v') w + b|; `u` is ignored.  Otherwise the flux is the
    linear rho u(x) with alpha = max(|u_L|, |u_R|).

    When r/du are given (linear flux only), the exact tangent of the
    sweep is advanced alongside: d(flux) = LF flux of r with velocity u,
    plus the velocity perturbation terms 1/2(rho_L du_L + rho_R du_R)
    - 1/2 dalpha (rho_R - rho_L).  Returns
    (rho_new, evacuated_mass[, r_new]).
    """
    cls = geometry.classes
    if axis == 1:
        rho, cls = rho.T, cls.T
        if u is not None:
            u = u.T
        if w is not None:
            w = w.T
            b = None if b is None else b.T
        if r is not None:
            r, du = r.T, du.T
    lam = dt / h

    if w is not None:
        v = speed(law, rho)
        u = v * w if b is None else v * w + b
        # Dissipation bound: Lip(rho v) |w| + |b|, deliberately independent
        # of the density.  A state-dependent alpha(rho) breaks monotonicity
        # through the d(alpha)/d(rho) (rho_R - rho_L) term (near vacuum it
        # decreases exactly as fast as f' and the flux dips the wrong way),
        # which shows up as negative densities and jam-density overshoots.
        char = speed_lipschitz(law) * np.abs(w)
        if b is not None:
            char = char + np.abs(b)
    rl, rr = rho[:-1, :], rho[1:, :]
    ul, ur = u[:-1, :], u[1:, :]
    free_l, free_r = cls[:-1, :] == FREE, cls[1:, :] == FREE
    exit_l, exit_r = ~free_l & (cls[:-1, :] == EXIT), ~free_r & (cls[1:, :] == EXIT)

    if w is None:
        wl, wr = np.abs(ul), np.abs(ur)
    else:
        wl, wr = char[:-1, :], char[1:, :]
    left_bigger = wl >= wr
    alpha = np.where(left_bigger, wl, wr)
    lf = 0.5 * (rl * ul + rr * ur) - 0.5 * alpha * (rr - rl)
    # Exit faces: Godunov flux against a vacuum ghost state.  For the
    # linear flux this is the upwind rho max(u, 0); for the nonlinear
    # flux it is the demand max_{s in [0, rho]} f(s), which saturates at
    # the door capacity instead of self-blocking in a jam.
    if w is None:
        out_to_r = rl * np.maximum(ul, 0.0)
        out_to_l = rr * np.minimum(ur, 0.0)
    else:
        # exit faces are few; evaluate the demand only there
        mr, ml = free_l & exit_r, exit_l & free_r
        out_to_r = np.zeros_like(rl)
        out_to_l = np.zeros_like(rr)
        if mr.any():
            out_to_r[mr] = outflow_demand(
                law, rl[mr], w[:-1, :][mr],
                None if b is None else b[:-1, :][mr])
        if ml.any():
            out_to_l[ml] = -outflow_demand(
                law, rr[ml], -w[1:, :][ml],
                None if b is None else -b[1:, :][ml])
    F_int = np.where(free_l & free_r, lf,
                     np.where(free_l & exit_r, out_to_r,
                              np.where(exit_l & free_r, out_to_l, 0.0)))
    n = rho.shape[0]
    F = np.zeros((n + 1, rho.shape[1]))
    F[1:n, :] = F_int

    free = cls == FREE
    rho_new = np.where(free, rho - lam * (F[1:, :] - F[:-1, :]), 0.0)
    # mass leaving through faces into exit cells (face length = dt*h gives
    # flux * dt * transverse cell size; transverse size handled by caller)
    out_r = np.where(free_l & exit_r, F_int, 0.0).sum()
    out_l = np.where(exit_l & free_r, -F_int, 0.0).sum()
    evacuated = float(out_r + out_l) * dt

    if r is None:
        return (rho_new.T if axis == 1 else rho_new), evacuated

    sl, sr = r[:-1, :], r[1:, :]
    dul, dur = du[:-1, :], du[1:, :]
    dalpha = np.where(left_bigger, np.sign(ul) * dul, np.sign(ur) * dur)
    dlf = (0.5 * (sl * ul + sr * ur) - 0.5 * alpha * (sr - sl)
           + 0.5 * (rl * dul + rr * dur) - 0.5 * dalpha * (rr - rl))
    dF_int = np.where(free_l & free_r, dlf,
                      np.where(free_l & exit_r,
                               (sl * ul + rl * dul) * (ul > 0.0),
                               np.where(exit_l & free_r,
                                        (sr * ur + rr * dur) * (ur < 0.0), 0.0)))
    dF = np.zeros_like(F)
    dF[1:n, :] = dF_int
    r_new = np.where(free, r - lam * (dF[1:, :] - dF[:-1, :]), 0.0)
    if axis == 1:
        rho_new, r_new = rho_new.T, r_new.T
    return rho_new, evacuated, r_new


def _check_cfl(V, dt, grid, wavespeed=None):
    W = np.abs(V) if wavespeed is None else np.maximum(np.abs(V), wavespeed)
    lam_x = dt * float(np.max(W[..., 0])) / grid.dx if W.size else 0.0
    lam_y = dt * float(np.max(W[..., 1])) / grid.dy if W.size else 0.0
    if max(lam_x, lam_y) > STABILITY_CFL * (1.0 + 1e-9):
        raise CFLError(f"CFL violation: dt*|V|/h = {max(lam_x, lam_y):.4g} "
                       f"> {STABILITY_CFL}")


@dataclass(frozen=True)
class ModelFlux:
    """Frozen part of the flux for one splitting step.

    `V` is the velocity at the assembly density (CFL and diagnostics).
    With `w` set the sweeps use the nonlinear flux rho (v(rho) w + b);
    with `w` None the flux is the linear rho V.  `bound` is a
    density-independent wave-speed field used for time-step selection."""
    V: np.ndarray
    w: np.ndarray | None = None
    b: np.ndarray | None = None
    bound: np.ndarray | None = None


def fv_step(rho: np.ndarray, V: np.ndarray, dt: float, geometry: RoomGeometry,
            step_index: int = 0, w: np.ndarray | None = None,
            b: np.ndarray | None = None, law=None,
            wavespeed: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """One dimensional-splitting step; sweep order alternates with
    step_index parity.  Returns the new density and the evacuated mass.
    `w`/`b`/`law` select the nonlinear flux (see `_sweep`)."""
    grid = geometry.grid
    _check_cfl(V, dt, grid, wavespeed)
    order = ((0, 1) if step_index % 2 == 0 else (1, 0))
    evac = 0.0
    for axis in order:
        h = grid.dx if axis == 0 else grid.dy
        transverse = grid.dy if axis == 0 else grid.dx
        rho, out = _sweep(rho, V[..., axis] if w is None else None,
                          dt, h, axis, geometry,
                          w=None if w is None else w[..., axis],
                          b=None if b is None else b[..., axis], law=law)
        evac += out * transverse
    return rho, evac


def fv_step_tangent(rho, r, V, dV, dt, geometry, step_index=0):
    """Step the density and its directional perturbation together; dV is
    the derivative of the frozen velocity field along the perturbation."""
    grid = geometry.grid
    _check_cfl(V, dt, grid)
    order = ((0, 1) if step_index % 2 == 0 else (1, 0))
    for axis in order:
        h = grid.dx if axis == 0 else grid.dy
        rho, _, r = _sweep(rho, V[..., axis], dt, h, axis, geometry,
                           r=r, du=dV[..., axis])
    return rho, r


def assemble_velocity(rho: np.ndarray, spec: ModelSpec, nu: np.ndarray,
                      grid: Grid2D, agents: AgentState | None) -> ModelFlux:
    """Split the model velocity into the parts the FV step needs.

    Model S has the speed frozen at the mollified density, so its flux
    is linear in rho and the full velocity is frozen.  All other models
    evaluate the speed at the local density; only the direction/drift
    fields are frozen and the sweeps keep v(rho) live (see the module
    docstring)."""
    law = spec.law
    if spec.model == "S":
        return ModelFlux(V=velocity_S(rho, spec.kernel, law, nu, grid))
    v = speed(law, rho)[..., None]
    lip = speed_lipschitz(law)
    if spec.model == "local":
        return ModelFlux(V=v * nu, w=nu, bound=lip * np.abs(nu))
    if spec.model == "R":
        w = nu + deviation_I(rho, spec.kernel, spec.epsilon, grid)
        return ModelFlux(V=v * w, w=w, bound=lip * np.abs(w))
    if spec.model == "piper":
        w = piper_pull(agents, grid)
        return ModelFlux(V=v * w, w=w, bound=lip * np.abs(w))
    if spec.model == "shepherd":
        rep = dog_repulsion(agents, grid)
        return ModelFlux(V=v * nu + rep, w=nu, b=rep,
                         bound=lip * np.abs(nu) + np.abs(rep))
    raise AssertionError(spec.model)


def _agent_rhs(spec: ModelSpec, rho, agents, t, grid):
    if spec.model == "piper":
        return phi_piper(rho, agents, spec.kernel, t, grid)
    if spec.model == "shepherd":
        return phi_dogs(rho, agents, spec.kernel, grid, spec.perp_sign)
    return np.zeros_like(agents.positions)


def advance(state: SimState, dt: float, spec: ModelSpec, geometry: RoomGeometry,
            nu: np.ndarray, velocities=None) -> tuple[SimState, float]:
    """One coupled step: per-population FV step with the model velocity
    frozen at time t, then an explicit midpoint (RK2) agent step using
    the pre-step density.  Returns (new state, evacuated mass)."""
    grid = geometry.grid
    if velocities is None:
        velocities = [assemble_velocity(rho, spec, nu, grid, state.agents)
                      for rho in state.densities]
    new_densities = []
    evac = 0.0
    for rho, mf in zip(state.densities, velocities):
        rho_new, out = fv_step(rho, mf.V, dt, geometry, state.step,
                               w=mf.w, b=mf.b, law=spec.law, wavespeed=mf.bound)
        if not np.all(np.isfinite(rho_new)):
            raise NumericalAbort("non-finite density", state.t, state.densities)
        new_densities.append(rho_new)
        evac += out

    agents = state.agents
    if agents is not None and agents.k > 0:
        rho0 = state.densities[0]
        pos = agents.positions
        k1 = _agent_rhs(spec, rho0, agents, state.t, grid)
        mid = AgentState(pos + 0.5 * dt * k1, role=agents.role, track=agents.track)
        k2 = _agent_rhs(spec, rho0, mid, state.t + 0.5 * dt, grid)
        agents = AgentState(pos + dt * k2, role=agents.role, track=agents.track)

    return SimState(t=state.t + dt, densities=new_densities, agents=agents,
                    step=state.step + 1), evac


@dataclass
class RunResult:
    """Immutable record of one simulation: snapshot series, per-step
    metric time series and agent tracks."""
    grid: Grid2D
    geometry: RoomGeometry
    snapshot_times: list[float]
    snapshots: list[list[np.ndarray]]          # per snapshot: one array per population
    series: dict = field(default_factory=dict)  # t, mass, linf, tv, evacuated, ...
    agent_track: np.ndarray | None = None       # (n_steps+1, k, 2)
    params: SchemeParams | None = None
    initial_mass: float = 0.0


def discrete_tv(rho: np.ndarray, grid: Grid2D) -> float:
    """Sum of interior inter-cell jumps times face length."""
    return (float(np.abs(np.diff(rho, axis=0)).sum()) * grid.dy
            + float(np.abs(np.diff(rho, axis=1)).sum()) * grid.dx)


@dataclass
class Scenario:
    """Fully assembled, validated simulation problem."""
    geometry: RoomGeometry
    nu: np.ndarray
    model: ModelSpec
    densities: list[np.ndarray]
    agents: AgentState | None
    params: SchemeParams


def run_scenario(scn: Scenario) -> RunResult:
    """Advance until t_end (or the evacuation threshold), recording
    snapshots at the configured cadence and per-step metrics.  Fully
    deterministic: identical scenarios give bit-identical results."""
    geometry, params = scn.geometry, scn.params
    grid = geometry.grid
    densities = [np.where(geometry.free, rho, 0.0) for rho in scn.densities]
    state = SimState(t=0.0, densities=densities, agents=scn.agents)
    n_pop = len(densities)
    m0 = sum(total_mass(rho, grid) for rho in densities)

    if params.snapshot_dt is None:
        snap_times = [params.t_end] if params.t_end > 0 else []
    else:
        n_snap = int(np.floor(params.t_end / params.snapshot_dt + 1e-9))
        snap_times = [k * params.snapshot_dt for k in range(1, n_snap + 1)]
        if not snap_times or snap_times[-1] < params.t_end - 1e-12:
            snap_times.append(params.t_end)

    series = {"t": [0.0],
              "mass": [[total_mass(r, grid) for r in densities]],
              "linf": [[float(r.max()) if r.size else 0.0 for r in densities]],
              "tv": [[discrete_tv(r, grid) for r in densities]],
              "evacuated": [0.0]}
    snapshots = [[r.copy() for r in densities]]
    snapshot_times = [0.0]
    track = [state.agents.positions.copy()] if state.agents is not None else None

    evac_total = 0.0
    next_snap = 0
    while state.t < params.t_end - 1e-12:
        velocities = [assemble_velocity(rho, scn.model, nu=scn.nu, grid=grid,
                                        agents=state.agents)
                      for rho in state.densities]
        if params.fixed_dt is not None:
            dt = params.fixed_dt
        else:
            dt = cfl_dt([mf.V for mf in velocities], grid, params,
                        wavespeeds=[mf.bound for mf in velocities])
        # clamp to the next snapshot and the horizon
        t_stop = params.t_end
        if next_snap < len(snap_times):
            t_stop = min(t_stop, snap_times[next_snap])
        dt = min(dt, t_stop - state.t)
        if dt <= 0:
            break
        state, evac = advance(state, dt, scn.model, geometry, scn.nu,
                              velocities=velocities)
        evac_total += evac

        series["t"].append(state.t)
        series["mass"].append([total_mass(r, grid) for r in state.densities])
        series["linf"].append([float(r.max()) for r in state.densities])
        series["tv"].append([discrete_tv(r, grid) for r in state.densities])
        series["evacuated"].append(evac_total)
        if track is not None:
            track.append(state.agents.positions.copy())

        at_snap = (next_snap < len(snap_times)
                   and state.t >= snap_times[next_snap] - 1e-12)
        if at_snap:
            snapshots.append([r.copy() for r in state.densities])
            snapshot_times.append(state.t)
            next_snap += 1

        if params.stop_theta is not None and m0 > 0:
            mass_now = sum(series["mass"][-1])
            if mass_now <= (1.0 - params.stop_theta) * m0:
                if not at_snap:
                    snapshots.append([r.copy() for r in state.densities])
                    snapshot_times.append(state.t)
                break

    if snapshot_times[-1] < state.t - 1e-12 or len(snapshot_times) == 0:
        snapshots.append([r.copy() for r in state.densities])
        snapshot_times.append(state.t)

    series_arr = {k: np.asarray(v) for k, v in series.items()}
    return RunResult(grid=grid, geometry=geometry, snapshot_times=snapshot_times,
                     snapshots=snapshots, series=series_arr,
                     agent_track=(np.asarray(track) if track is not None else None),
                     params=params, initial_mass=m0)
