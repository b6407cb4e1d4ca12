"""Velocity laws for the crowd and drift laws for the coupled agents.

Models:
    local     V = v(rho) nu(x)
    S         V = v(rho*eta) nu(x)                  (nonlocal speed)
    R         V = v(rho) (nu(x) + I(rho))           (nonlocal route choice)
    piper     V = v(rho) (p - x) exp(-|p - x|), leader ODE
    shepherd  V = v(rho) nu(x) + sum_i (x - p_i) exp(-|p_i - x|), dog ODEs

with the deviation I(rho) = -eps g / sqrt(1 + |g|^2), g = grad(rho*eta).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid2D
from .kernels import Kernel, convolve_local

log = logging.getLogger(__name__)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SpeedLaw:
    """Pedestrian speed as a function of density.

    `linear`: v(rho) = vmax (1 - rho/jam), clamped to 0 above the jam
    density.  `tabulated`: monotone non-increasing samples, linearly
    interpolated (a constant table gives v' = 0 everywhere).
    """
    family: str = "linear"
    vmax: float = 6.0
    jam: float = 1.0
    table_rho: np.ndarray | None = field(default=None, repr=False)
    table_v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family == "linear":
            if self.vmax <= 0 or self.jam <= 0:
                raise ModelError("linear speed law needs vmax > 0 and jam > 0")
        elif self.family == "tabulated":
            rr, vv = np.asarray(self.table_rho, float), np.asarray(self.table_v, float)
            if rr is None or vv is None or rr.shape != vv.shape or rr.ndim != 1 or len(rr) < 2:
                raise ModelError("tabulated speed law needs matching 1D rho/v samples")
            if np.any(np.diff(rr) <= 0):
                raise ModelError("tabulated speed law: rho samples must increase")
            if np.any(np.diff(vv) > 0):
                raise ModelError("tabulated speed law must be non-increasing in rho")
            if np.any(vv < 0):
                raise ModelError("tabulated speed law must be nonnegative")
            object.__setattr__(self, "table_rho", rr)
            object.__setattr__(self, "table_v", vv)
        else:
            raise ModelError(f"unknown speed law family {self.family!r}")


def speed(law: SpeedLaw, rho) -> np.ndarray:
    """v(rho); densities above the jam density clamp to 0."""
    rho = np.asarray(rho, float)
    if law.family == "linear":
        return np.maximum(law.vmax * (1.0 - rho / law.jam), 0.0)
    return np.interp(rho, law.table_rho, law.table_v)


def speed_prime(law: SpeedLaw, rho) -> np.ndarray:
    """dv/drho, with 0 in the clamped region rho > jam."""
    rho = np.asarray(rho, float)
    if law.family == "linear":
        return np.where(rho < law.jam, -law.vmax / law.jam, 0.0)
    slopes = np.diff(law.table_v) / np.diff(law.table_rho)
    idx = np.clip(np.searchsorted(law.table_rho, rho, side="right") - 1,
                  0, len(slopes) - 1)
    inside = (rho > law.table_rho[0]) & (rho < law.table_rho[-1])
    return np.where(inside, slopes[idx], 0.0)


def char_speed(law: SpeedLaw, rho) -> np.ndarray:
    """Per-cell upper bound on the characteristic speed |d(rho v)/drho|,
    valid over the whole interval between the cell value and any neighbor
    state in [0, rho].  For the linear law the derivative is linear in
    rho below the jam density, so the cell value bounds it there; cells
    at or above the jam density report vmax to cover the clamp kink."""
    rho = np.asarray(rho, float)
    if law.family == "linear":
        q = law.vmax * np.abs(1.0 - 2.0 * rho / law.jam)
        return np.where(rho >= law.jam, law.vmax, q)
    rr, vv = law.table_rho, law.table_v
    m = np.diff(vv) / np.diff(rr)
    lip = max(float(np.max(np.abs(vv[:-1] + rr[:-1] * m))),
              float(np.max(np.abs(vv[1:] + rr[1:] * m))),
              float(vv[0]))
    return np.full(rho.shape, lip)


def outflow_demand(law: SpeedLaw, rho, w, b=None) -> np.ndarray:
    """Godunov demand max_{s in [0, rho]} s (v(s) w + b) per cell.

    This is the free-discharge flux through an open boundary: it grows
    with the upstream density until the critical density and then
    saturates at the capacity instead of self-blocking (the plain
    f(rho) would drop back to zero in a jam) or over-discharging (a
    Lax-Friedrichs ghost-vacuum flux keeps growing past the capacity).
    Nondecreasing in rho with D(0) = 0, so it is monotone and cannot
    pull mass in from the vacuum side."""
    rho = np.asarray(rho, float)
    w = np.asarray(w, float)
    b = np.zeros_like(rho) if b is None else np.asarray(b, float)

    def f(s):
        return s * (speed(law, s) * w + b)

    if law.family == "linear":
        # quadratic on [0, jam]; vertex of s(vmax(1 - s/jam) w + b)
        cap = np.minimum(rho, law.jam)
        with np.errstate(divide="ignore", invalid="ignore"):
            vertex = np.where(w > 0,
                              (law.vmax * w + b) * law.jam / (2.0 * law.vmax * w),
                              0.0)
        best = f(np.clip(vertex, 0.0, cap))
        best = np.maximum(best, f(cap))
        best = np.maximum(best, f(rho))   # s > jam branch (pure drift)
        return np.maximum(best, 0.0)
    best = np.maximum(f(rho), 0.0)
    for s in law.table_rho:               # knots of the piecewise-linear law
        best = np.maximum(best, np.where(rho >= s, f(float(s)), 0.0))
    return best


def speed_lipschitz(law: SpeedLaw) -> float:
    """Global bound max_rho |d(rho v)/drho| (density-independent)."""
    if law.family == "linear":
        return law.vmax
    return float(char_speed(law, np.zeros(1))[0])


@dataclass(frozen=True)
class LeaderTrack:
    """Piecewise-linear waypoint track traversed at unit base speed.

    psi(t) is the unit direction of the segment active at arc-length
    time t; after the last waypoint the leader's direction is zero (the
    leader stops waiting)."""
    waypoints: np.ndarray  # (k, 2)

    def __post_init__(self):
        wp = np.asarray(self.waypoints, float)
        if wp.ndim != 2 or wp.shape[1] != 2 or len(wp) < 2:
            raise ModelError("leader track needs at least two waypoints in the plane")
        seg = np.diff(wp, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths == 0):
            raise ModelError("leader track has a zero-length segment")
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "_dirs", seg / lengths[:, None])
        object.__setattr__(self, "_times", np.concatenate([[0.0], np.cumsum(lengths)]))

    def psi(self, t: float) -> np.ndarray:
        """Unit direction at arc-length time t."""
        times = self._times
        if t >= times[-1]:
            return np.zeros(2)
        k = int(np.searchsorted(times, t, side="right") - 1)
        k = min(max(k, 0), len(self._dirs) - 1)
        return self._dirs[k].copy()


@dataclass
class AgentState:
    """Positions of the discrete individuals coupled to the PDE."""
    positions: np.ndarray        # (k, 2)
    role: str = "dog"            # "leader" or "dog"
    track: LeaderTrack | None = None

    def __post_init__(self):
        p = np.asarray(self.positions, float).reshape(-1, 2)
        if not np.all(np.isfinite(p)):
            raise ModelError("agent positions must be finite")
        self.positions = p

    @property
    def k(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class ModelSpec:
    model: str                       # local | S | R | piper | shepherd
    law: SpeedLaw
    kernel: Kernel | None = None
    epsilon: float = 0.0
    n_populations: int = 1
    perp_sign: float = 1.0           # orientation of the dogs' perpendicular

    def __post_init__(self):
        if self.model not in ("local", "S", "R", "piper", "shepherd"):
            raise ModelError(f"unknown model {self.model!r}")
        if self.epsilon < 0:
            raise ModelError("deviation strength epsilon must be >= 0")
        if self.model in ("S", "R", "piper", "shepherd") and self.kernel is None:
            raise ModelError(f"model {self.model} requires a kernel")
        if self.perp_sign not in (1.0, -1.0):
            raise ModelError("perp_sign must be +1 or -1")


def bilinear_sample(field: np.ndarray, grid: Grid2D, p: np.ndarray) -> np.ndarray:
    """Sample a cell-centered field at point(s) p by bilinear interpolation
    with constant extrapolation at the domain edge.  field may carry a
    trailing component axis."""
    p = np.atleast_2d(np.asarray(p, float))
    x0, y0 = grid.origin
    fx = (p[:, 0] - x0) / grid.dx - 0.5
    fy = (p[:, 1] - y0) / grid.dy - 0.5
    i0 = np.clip(np.floor(fx).astype(int), 0, grid.nx - 1)
    j0 = np.clip(np.floor(fy).astype(int), 0, grid.ny - 1)
    i1 = np.minimum(i0 + 1, grid.nx - 1)
    j1 = np.minimum(j0 + 1, grid.ny - 1)
    tx = np.clip(fx - i0, 0.0, 1.0)
    ty = np.clip(fy - j0, 0.0, 1.0)
    if field.ndim == 3:
        tx = tx[:, None]
        ty = ty[:, None]
    out = ((1 - tx) * (1 - ty) * field[i0, j0] + tx * (1 - ty) * field[i1, j0]
           + (1 - tx) * ty * field[i0, j1] + tx * ty * field[i1, j1])
    return out


# -- grid velocity laws ------------------------------------------------------

def velocity_local(rho: np.ndarray, law: SpeedLaw, nu: np.ndarray) -> np.ndarray:
    """Eq-(2)-type local law V = v(rho(x)) nu(x)."""
    return speed(law, rho)[..., None] * nu


def velocity_S(rho: np.ndarray, kernel: Kernel, law: SpeedLaw, nu: np.ndarray,
               grid: Grid2D) -> np.ndarray:
    """Nonlocal speed V = v(rho*eta) nu(x)."""
    avg = convolve_local(rho, kernel, grid)
    return speed(law, avg)[..., None] * nu


def deviation_I(rho: np.ndarray, kernel: Kernel, eps: float,
                grid: Grid2D) -> np.ndarray:
    """I(rho) = -eps g / sqrt(1 + |g|^2) with g = grad(rho*eta)."""
    g = convolve_local(rho, kernel, grid, grad=True)
    denom = np.sqrt(1.0 + np.sum(g * g, axis=-1))
    return -eps * g / denom[..., None]


def velocity_R(rho: np.ndarray, kernel: Kernel, law: SpeedLaw, nu: np.ndarray,
               eps: float, grid: Grid2D) -> np.ndarray:
    """Nonlocal route choice V = v(rho(x)) (nu(x) + I(rho)(x)); the speed
    factor uses the local density."""
    return speed(law, rho)[..., None] * (nu + deviation_I(rho, kernel, eps, grid))


def piper_pull(agents: AgentState, grid: Grid2D) -> np.ndarray:
    """Unit-free attraction toward the single leader, (p - x)e^{-|p-x|}."""
    if agents.k != 1:
        raise ModelError(f"piper model needs exactly one leader, got {agents.k}")
    X, Y = grid.centers()
    px, py = agents.positions[0]
    dxv, dyv = px - X, py - Y
    damp = np.exp(-np.hypot(dxv, dyv))
    return np.stack([dxv * damp, dyv * damp], axis=-1)


def velocity_piper(rho: np.ndarray, agents: AgentState, law: SpeedLaw,
                   grid: Grid2D) -> np.ndarray:
    """Followers move toward the single leader: V = v(rho)(p - x)e^{-|p-x|}."""
    return speed(law, rho)[..., None] * piper_pull(agents, grid)


def phi_piper(rho: np.ndarray, agents: AgentState, kernel: Kernel, t: float,
              grid: Grid2D) -> np.ndarray:
    """Leader ODE right-hand side phi = (1 + (rho*eta)(p)) psi(t)."""
    if agents.track is None:
        raise ModelError("piper model needs a leader waypoint track")
    p = agents.positions[0]
    if grid.contains(p[0], p[1]):
        avg = convolve_local(rho, kernel, grid)
        sampled = float(bilinear_sample(avg, grid, p)[0])
    else:
        log.warning("leader at %s left the grid; averaged density taken as 0", p)
        sampled = 0.0
    return ((1.0 + sampled) * agents.track.psi(t))[None, :]


def dog_repulsion(agents: AgentState, grid: Grid2D) -> np.ndarray:
    """Summed repulsion away from every dog, sum_i (x - p_i)e^{-|p_i-x|}."""
    X, Y = grid.centers()
    rep = np.zeros(X.shape + (2,))
    for px, py in agents.positions:
        dxv, dyv = X - px, Y - py
        damp = np.exp(-np.hypot(dxv, dyv))
        rep[..., 0] += dxv * damp
        rep[..., 1] += dyv * damp
    return rep


def velocity_sheep(rho: np.ndarray, agents: AgentState, law: SpeedLaw,
                   nu: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Sheep law: preferred-direction term plus dog repulsion."""
    return velocity_local(rho, law, nu) + dog_repulsion(agents, grid)


def phi_dogs(rho: np.ndarray, agents: AgentState, kernel: Kernel,
             grid: Grid2D, perp_sign: float = 1.0) -> np.ndarray:
    """Dog ODE right-hand sides: unit-bounded run perpendicular to the
    sampled averaged-density gradient, phi_i = g_perp / sqrt(1 + |g|^2)."""
    out = np.zeros_like(agents.positions)
    if agents.k == 0:
        return out
    g_field = convolve_local(rho, kernel, grid, grad=True)
    for idx, p in enumerate(agents.positions):
        if not grid.contains(p[0], p[1]):
            log.warning("dog %d at %s left the grid; drift set to 0", idx, p)
            continue
        g = bilinear_sample(g_field, grid, p)[0]
        denom = np.sqrt(1.0 + g[0] ** 2 + g[1] ** 2)
        out[idx] = perp_sign * np.array([-g[1], g[0]]) / denom
    return out
