"""Geodesic distance to the exits and the preferred-direction field.

First-order fast marching for |grad d| = 1 on free cells (walls
impassable, d = 0 on exits); the unit field nu = -grad d / |grad d|
points along shortest obstacle-avoiding paths to the exit.
"""

from __future__ import annotations

import heapq
import logging

import numpy as np

from .grid import RoomGeometry, WALL

log = logging.getLogger(__name__)


class EikonalError(ValueError):
    pass


def _eikonal_update(a: float, b: float, dx: float, dy: float) -> float:
    """Solve ((d-a)/dx)^2 + ((d-b)/dy)^2 = 1 upwind; a, b are the minimal
    neighbor values along x and y (inf if none)."""
    if a > b:
        a, b, dx, dy = b, a, dy, dx
    if not np.isfinite(a):
        return np.inf
    if not np.isfinite(b) or b - a >= dx:
        return a + dx
    # both directions active
    ix2, iy2 = 1.0 / dx ** 2, 1.0 / dy ** 2
    s = ix2 + iy2
    p = a * ix2 + b * iy2
    disc = p * p - s * (a * a * ix2 + b * b * iy2 - 1.0)
    if disc < 0:
        return a + dx
    return (p + np.sqrt(disc)) / s


def solve_eikonal(geometry: RoomGeometry) -> np.ndarray:
    """Geodesic distance to the exit set through free cells.

    Unreachable free cells and walls are inf.  Raises if the geometry
    has no exit cell.
    """
    grid = geometry.grid
    if geometry.n_exit_cells() == 0:
        raise EikonalError("no exit: geometry has no exit cell")
    nx, ny = grid.shape
    dx, dy = grid.dx, grid.dy
    d = np.full((nx, ny), np.inf)
    passable = geometry.classes != WALL
    done = np.zeros((nx, ny), dtype=bool)

    heap: list[tuple[float, int, int]] = []
    for i, j in zip(*np.nonzero(geometry.exit)):
        d[i, j] = 0.0
        heapq.heappush(heap, (0.0, int(i), int(j)))

    while heap:
        du, i, j = heapq.heappop(heap)
        if done[i, j] or du > d[i, j]:
            continue
        done[i, j] = True
        for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
            if not (0 <= ni < nx and 0 <= nj < ny):
                continue
            if not passable[ni, nj] or done[ni, nj]:
                continue
            a = min(d[ni - 1, nj] if ni > 0 and done[ni - 1, nj] else np.inf,
                    d[ni + 1, nj] if ni < nx - 1 and done[ni + 1, nj] else np.inf)
            b = min(d[ni, nj - 1] if nj > 0 and done[ni, nj - 1] else np.inf,
                    d[ni, nj + 1] if nj < ny - 1 and done[ni, nj + 1] else np.inf)
            cand = _eikonal_update(a, b, dx, dy)
            if cand < d[ni, nj]:
                d[ni, nj] = cand
                heapq.heappush(heap, (cand, ni, nj))
    return d


def geodesic_directions(distance: np.ndarray, geometry: RoomGeometry) -> np.ndarray:
    """Unit field nu = -grad d / |grad d|, shape (nx, ny, 2).

    Central differences where both neighbors are usable, one-sided next
    to walls or infinite cells; zero on walls, exits and where the
    gradient degenerates (logged).
    """
    grid = geometry.grid
    nx, ny = grid.shape
    usable = (geometry.classes != WALL) & np.isfinite(distance)

    def _grad_axis(axis: int, h: float) -> np.ndarray:
        g = np.zeros((nx, ny))
        dm = np.zeros((nx, ny))
        dp = np.zeros((nx, ny))
        okm = np.zeros((nx, ny), dtype=bool)
        okp = np.zeros((nx, ny), dtype=bool)
        if axis == 0:
            dm[1:, :] = distance[:-1, :]
            okm[1:, :] = usable[:-1, :]
            dp[:-1, :] = distance[1:, :]
            okp[:-1, :] = usable[1:, :]
        else:
            dm[:, 1:] = distance[:, :-1]
            okm[:, 1:] = usable[:, :-1]
            dp[:, :-1] = distance[:, 1:]
            okp[:, :-1] = usable[:, 1:]
        both = okm & okp
        g[both] = (dp[both] - dm[both]) / (2 * h)
        only_p = okp & ~okm
        g[only_p] = (dp[only_p] - distance[only_p]) / h
        only_m = okm & ~okp
        g[only_m] = (distance[only_m] - dm[only_m]) / h
        return g

    gx = _grad_axis(0, grid.dx)
    gy = _grad_axis(1, grid.dy)
    norm = np.hypot(gx, gy)
    active = usable & (norm > 0)
    nu = np.zeros((nx, ny, 2))
    nu[active, 0] = -gx[active] / norm[active]
    nu[active, 1] = -gy[active] / norm[active]

    degenerate = int(np.count_nonzero(usable & geometry.free & (norm == 0)))
    if degenerate:
        log.info("geodesic_directions: %d free cells with degenerate gradient "
                 "(direction set to zero)", degenerate)
    return nu
