"""Reachable sets of the controlled differential inclusion

    x' in psi(|x - xi(t)|)(x - xi(t)) + B(0, c),  x(0) in K0,

with circular-orbit agent strategies and numeric verifiers of the
confinement and dispersal criteria.

The occupied region is tracked as a level set: u < 0 inside, advected by
the drift and expanded at normal speed c (first-order upwind / Godunov),
with periodic reinitialization to a signed distance via Euclidean
distance transforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import Grid2D

LS_CFL = 0.4


class ConfinementError(ValueError):
    pass


class DomainTooSmall(RuntimeError):
    """The evolving front reached the grid boundary."""


# -- drift profiles ----------------------------------------------------------

@dataclass(frozen=True)
class PsiProfile:
    """Radial interaction profile psi(r); negative values attract toward
    the agent, positive values repel."""
    family: str                   # constant | scaled-exponential | tabulated
    value: float = 0.0            # constant value, or amplitude a of a e^{-r}
    table_r: np.ndarray | None = field(default=None, repr=False)
    table_psi: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in ("constant", "scaled-exponential", "tabulated"):
            raise ConfinementError(f"unknown psi family {self.family!r}")
        if self.family == "tabulated":
            rr = np.asarray(self.table_r, float)
            vv = np.asarray(self.table_psi, float)
            if rr.ndim != 1 or rr.shape != vv.shape or len(rr) < 2:
                raise ConfinementError("tabulated psi needs matching 1D r/psi samples")
            if np.any(np.diff(rr) <= 0):
                raise ConfinementError("tabulated psi: r samples must increase")
            if not np.all(np.isfinite(vv)):
                raise ConfinementError("tabulated psi must be bounded")
            object.__setattr__(self, "table_r", rr)
            object.__setattr__(self, "table_psi", vv)

    def __call__(self, r):
        r = np.asarray(r, float)
        if self.family == "constant":
            return np.full_like(r, self.value)
        if self.family == "scaled-exponential":
            return self.value * np.exp(-r)
        return np.interp(r, self.table_r, self.table_psi)

    def derivative(self, r):
        r = np.asarray(r, float)
        if self.family == "constant":
            return np.zeros_like(r)
        if self.family == "scaled-exponential":
            return -self.value * np.exp(-r)
        dv = np.gradient(self.table_psi, self.table_r)
        return np.interp(r, self.table_r, dv)


def drift(psi: PsiProfile, x: np.ndarray, agents: np.ndarray) -> np.ndarray:
    """Drift field psi(|x - xi|)(x - xi) summed over the agents.

    x: (..., 2) points; agents: (k, 2) positions."""
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    for xi in np.atleast_2d(agents):
        d = x - xi
        r = np.sqrt(np.sum(d * d, axis=-1))
        out += psi(r)[..., None] * d
    return out


# -- agent tracks ------------------------------------------------------------

@dataclass(frozen=True)
class AgentTrack:
    """Parametric agent path: circular orbit or piecewise-linear waypoints."""
    kind: str                         # orbit | waypoints
    radius: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    waypoints: np.ndarray | None = None   # (n, 2)
    times: np.ndarray | None = None       # (n,)

    def position(self, t: float) -> np.ndarray:
        if self.kind == "orbit":
            a = self.omega * t + self.phase
            return np.array([self.center[0] + self.radius * math.cos(a),
                             self.center[1] + self.radius * math.sin(a)])
        wp, tt = self.waypoints, self.times
        x = np.interp(t, tt, wp[:, 0])
        y = np.interp(t, tt, wp[:, 1])
        return np.array([x, y])


def orbit_strategy(radius: float, omega: float, phase: float = 0.0,
                   center=(0.0, 0.0)) -> AgentTrack:
    """Agent circling the origin: xi(t) = R (cos(wt + p), sin(wt + p))."""
    if radius <= 0:
        raise ConfinementError("orbit radius must be positive")
    return AgentTrack(kind="orbit", radius=radius, omega=omega, phase=phase,
                      center=center)


# -- level-set reachable set -------------------------------------------------

@dataclass
class OccupancyField:
    """Signed distance u (negative inside the reachable set) at one time."""
    grid: Grid2D
    t: float
    u: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.u < 0

    @property
    def area(self) -> float:
        return float(np.count_nonzero(self.u < 0)) * self.grid.cell_area


def signed_distance(mask: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Approximate signed distance to the boundary of the masked region
    (negative inside), via Euclidean distance transforms with a half-cell
    interface offset."""
    sampling = (grid.dx, grid.dy)
    half = 0.5 * min(grid.dx, grid.dy)
    if not mask.any():
        return np.full(mask.shape, 10.0 * max(grid.nx * grid.dx, grid.ny * grid.dy))
    if mask.all():
        return np.full(mask.shape, -10.0 * max(grid.nx * grid.dx, grid.ny * grid.dy))
    d_out = ndimage.distance_transform_edt(~mask, sampling=sampling)
    d_in = ndimage.distance_transform_edt(mask, sampling=sampling)
    return np.where(mask, -(d_in - half), d_out - half)


def _upwind_step(u, ax, ay, c, dt, dx, dy):
    """First-order upwind advection plus Godunov expansion at speed c."""
    dmx = np.empty_like(u); dpx = np.empty_like(u)
    dmy = np.empty_like(u); dpy = np.empty_like(u)
    dmx[1:, :] = (u[1:, :] - u[:-1, :]) / dx; dmx[0, :] = 0.0
    dpx[:-1, :] = (u[1:, :] - u[:-1, :]) / dx; dpx[-1, :] = 0.0
    dmy[:, 1:] = (u[:, 1:] - u[:, :-1]) / dy; dmy[:, 0] = 0.0
    dpy[:, :-1] = (u[:, 1:] - u[:, :-1]) / dy; dpy[:, -1] = 0.0

    adv = (np.maximum(ax, 0.0) * dmx + np.minimum(ax, 0.0) * dpx
           + np.maximum(ay, 0.0) * dmy + np.minimum(ay, 0.0) * dpy)
    grad_plus = np.sqrt(np.maximum(dmx, 0.0) ** 2 + np.minimum(dpx, 0.0) ** 2
                        + np.maximum(dmy, 0.0) ** 2 + np.minimum(dpy, 0.0) ** 2)
    return u - dt * (adv + c * grad_plus)


def reach_evolve(k0_mask: np.ndarray, tracks: list[AgentTrack], psi: PsiProfile,
                 c: float, t_end: float, grid: Grid2D,
                 snapshot_dt: float | None = None,
                 reinit_every: int = 25) -> list[OccupancyField]:
    """Evolve the occupied region from the initial mask under drift plus
    free wandering at speed c; returns occupancy snapshots (always
    including t = 0 and t_end).  Aborts if the front reaches the grid
    boundary."""
    if c < 0:
        raise ConfinementError("wandering speed c must be >= 0")
    if not k0_mask.any():
        raise ConfinementError("initial set K0 is empty")
    X, Y = grid.centers()
    pts = np.stack([X, Y], axis=-1)
    u = signed_distance(k0_mask, grid)
    snaps = [OccupancyField(grid=grid, t=0.0, u=u.copy())]
    if snapshot_dt is None:
        snap_times = [t_end]
    else:
        snap_times = list(np.arange(snapshot_dt, t_end + 1e-9, snapshot_dt))
        if not snap_times or snap_times[-1] < t_end - 1e-9:
            snap_times.append(t_end)
    next_snap = 0
    t = 0.0
    step = 0
    while t < t_end - 1e-12:
        agents = np.array([tr.position(t) for tr in tracks]) if tracks else np.zeros((0, 2))
        a = drift(psi, pts, agents) if len(agents) else np.zeros_like(pts)
        ax, ay = a[..., 0], a[..., 1]
        amax = float(np.max(np.abs(ax))) + float(np.max(np.abs(ay))) if len(agents) else 0.0
        speed = c + amax
        if speed == 0:
            dt = t_end - t
        else:
            dt = LS_CFL * min(grid.dx, grid.dy) / speed
        dt = min(dt, snap_times[next_snap] - t)
        u = _upwind_step(u, ax, ay, c, dt, grid.dx, grid.dy)
        t += dt
        step += 1
        if step % reinit_every == 0:
            u = signed_distance(u < 0, grid)
        inside = u < 0
        if inside[0, :].any() or inside[-1, :].any() or inside[:, 0].any() or inside[:, -1].any():
            raise DomainTooSmall(f"reachable set hit the grid boundary at t={t:.3f}")
        if t >= snap_times[next_snap] - 1e-12:
            snaps.append(OccupancyField(grid=grid, t=t, u=u.copy()))
            next_snap += 1
            if next_snap >= len(snap_times):
                break
    return snaps


# -- condition verifiers -----------------------------------------------------

def _adaptive_simpson(f, a, b, tol):
    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, tol, depth):
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(lo, mid, flo, flm, fmid)
        right = simpson(mid, hi, fmid, frm, fhi)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (recurse(lo, mid, flo, flm, fmid, left, tol / 2.0, depth - 1)
                + recurse(mid, hi, fmid, frm, fhi, right, tol / 2.0, depth - 1))

    mid = 0.5 * (a + b)
    fa, fm, fb = f(a), f(mid), f(b)
    return recurse(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, 40)


def orbit_integral(psi: PsiProfile, R: float, r_star: float,
                   tol: float = 1e-8) -> float:
    """(1/pi) int_0^pi psi(sqrt(R^2 + R*^2 - 2 R* R cos t))(R* - R cos t) dt."""

    def f(theta):
        ct = math.cos(theta)
        rad = math.sqrt(max(R * R + r_star * r_star - 2.0 * r_star * R * ct, 0.0))
        return float(psi(rad)) * (r_star - R * ct)

    return _adaptive_simpson(f, 0.0, math.pi, tol) / math.pi


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    margin: float
    worst: float          # R* (or sigma) realizing the minimal margin / first violation
    conclusive: str = "window"


def confinement_condition(psi: PsiProfile, c: float, R: float, r_minus: float,
                          r_plus: float, n_rstar: int = 200,
                          tol: float = 1e-8) -> ConditionReport:
    """Check the orbit-averaged attraction criterion: the angular mean of
    the radial drift must stay below -c for every ring radius in
    [r_minus, r_plus].  Returns the minimal margin -c - max(integral)."""
    if not (0 < r_minus <= r_plus):
        raise ConfinementError("need 0 < r_minus <= r_plus")
    if psi.family == "tabulated" and not np.all(np.isfinite(psi.table_psi)):
        raise ConfinementError("unbounded psi rejected")
    rstars = np.linspace(r_minus, r_plus, n_rstar)
    vals = np.array([orbit_integral(psi, R, rs, tol) for rs in rstars])
    k = int(np.argmax(vals))
    # refine around the worst ring radius
    lo = rstars[max(k - 1, 0)]
    hi = rstars[min(k + 1, len(rstars) - 1)]
    fine = np.linspace(lo, hi, 50)
    fvals = np.array([orbit_integral(psi, R, rs, tol) for rs in fine])
    if fvals.max() > vals[k]:
        worst = float(fine[int(np.argmax(fvals))])
        worst_val = float(fvals.max())
    else:
        worst, worst_val = float(rstars[k]), float(vals[k])
    margin = -c - worst_val
    return ConditionReport(holds=margin > 0, margin=margin, worst=worst)


def dispersal_phi(psi: PsiProfile, s) -> np.ndarray:
    """Area-parametrized radial divergence psi'(q) q + 2 psi(q), q = sqrt(s/pi)."""
    s = np.asarray(s, float)
    if np.any(s < 0):
        raise ConfinementError("area parameter s must be >= 0")
    q = np.sqrt(s / math.pi)
    return psi.derivative(q) * q + 2.0 * psi(q)


def rearrange(samples: np.ndarray) -> np.ndarray:
    """Discrete non-decreasing (equimeasurable) rearrangement of uniform
    samples: ascending sort."""
    return np.sort(np.asarray(samples, float))


def dispersal_condition(psi: PsiProfile, c: float, area0: float,
                        sigma_max: float, n_samples: int = 2000) -> ConditionReport:
    """Check 2 c sqrt(pi sigma) + int_0^sigma phi_*(s) ds > 0 on
    [area0, sigma_max]; phi_* is the non-decreasing rearrangement of the
    area-parametrized divergence.  When it holds no confinement is
    possible (the occupied area grows without bound)."""
    if sigma_max < area0:
        raise ConfinementError("sigma_max must be >= the initial area")
    if area0 < 0:
        raise ConfinementError("area0 must be >= 0")
    s = np.linspace(0.0, sigma_max, n_samples)
    phi_star = rearrange(dispersal_phi(psi, s))
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (phi_star[1:] + phi_star[:-1])
                                                * np.diff(s))])
    g = 2.0 * c * np.sqrt(math.pi * s) + integral
    window = s >= area0
    gw = g[window]
    sw = s[window]
    margin = float(gw.min())
    if np.all(gw > 0):
        conclusive = "monotone-tail" if phi_star[-1] >= 0 else "window"
        return ConditionReport(holds=True, margin=margin,
                               worst=float(sw[int(np.argmin(gw))]),
                               conclusive=conclusive)
    k = int(np.nonzero(gw <= 0)[0][0])
    # interpolate the first crossing
    if k == 0:
        sigma_v = float(sw[0])
    else:
        g0, g1 = gw[k - 1], gw[k]
        sigma_v = float(sw[k - 1] + (sw[k] - sw[k - 1]) * g0 / (g0 - g1))
    return ConditionReport(holds=False, margin=margin, worst=sigma_v)
