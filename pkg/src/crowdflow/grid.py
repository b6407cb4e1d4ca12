"""Uniform 2D grid, scalar/vector fields and room geometry.

Cell (i, j) is centered at origin + ((i+1/2)dx, (j+1/2)dy).  Scalar
fields are arrays of shape (nx, ny) indexed [i, j] with axis 0 along x;
vector fields carry a trailing component axis of length 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# cell classes
FREE = 0
WALL = 1
EXIT = 2


class GeometryError(ValueError):
    """Raised for rejected geometry configurations."""


@dataclass(frozen=True)
class Grid2D:
    origin: tuple[float, float]
    dx: float
    dy: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise GeometryError(f"cell sizes must be positive, got dx={self.dx}, dy={self.dy}")
        if not (self.nx >= 1 and self.ny >= 1):
            raise GeometryError(f"cell counts must be >= 1, got nx={self.nx}, ny={self.ny}")

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def cell_center(self, i, j):
        """Center of cell (i, j); accepts scalars or arrays."""
        x0, y0 = self.origin
        return (x0 + (np.asarray(i) + 0.5) * self.dx,
                y0 + (np.asarray(j) + 0.5) * self.dy)

    def cell_index(self, x, y):
        """Index of the cell containing (x, y); inverse of cell_center."""
        x0, y0 = self.origin
        return (np.floor((np.asarray(x) - x0) / self.dx).astype(int),
                np.floor((np.asarray(y) - y0) / self.dy).astype(int))

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid arrays (X, Y) of all cell centers, shape (nx, ny)."""
        x0, y0 = self.origin
        xs = x0 + (np.arange(self.nx) + 0.5) * self.dx
        ys = y0 + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(xs, ys, indexing="ij")

    def contains(self, x, y):
        x0, y0 = self.origin
        return ((np.asarray(x) >= x0) & (np.asarray(x) <= x0 + self.nx * self.dx)
                & (np.asarray(y) >= y0) & (np.asarray(y) <= y0 + self.ny * self.dy))


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""
    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, x, y):
        return ((np.asarray(x) >= self.x0) & (np.asarray(x) <= self.x1)
                & (np.asarray(y) >= self.y0) & (np.asarray(y) <= self.y1))

    @property
    def area(self) -> float:
        return max(self.x1 - self.x0, 0.0) * max(self.y1 - self.y0, 0.0)


@dataclass(frozen=True)
class Disc:
    """Closed disc of given center and radius."""
    cx: float
    cy: float
    radius: float

    def contains(self, x, y):
        return (np.asarray(x) - self.cx) ** 2 + (np.asarray(y) - self.cy) ** 2 <= self.radius ** 2


@dataclass(frozen=True)
class RoomGeometry:
    grid: Grid2D
    classes: np.ndarray = field(repr=False)  # int array (nx, ny) of FREE/WALL/EXIT

    def __post_init__(self):
        if self.classes.shape != self.grid.shape:
            raise GeometryError("class array shape does not match grid")
        self.classes.setflags(write=False)

    @property
    def free(self) -> np.ndarray:
        return self.classes == FREE

    @property
    def wall(self) -> np.ndarray:
        return self.classes == WALL

    @property
    def exit(self) -> np.ndarray:
        return self.classes == EXIT

    def n_exit_cells(self) -> int:
        return int(np.count_nonzero(self.classes == EXIT))


def make_grid(bounds: Rect, dx: float, dy: float | None = None) -> Grid2D:
    """Grid covering the rectangular domain with the given cell size.

    The cell counts are rounded so the grid covers the bounds; bounds
    should be (near) multiples of the cell size for an exact cover.
    """
    if dy is None:
        dy = dx
    if bounds.area <= 0:
        raise GeometryError("zero-area domain")
    nx = int(round((bounds.x1 - bounds.x0) / dx))
    ny = int(round((bounds.y1 - bounds.y0) / dy))
    if nx < 1 or ny < 1:
        raise GeometryError("domain smaller than one cell")
    return Grid2D(origin=(bounds.x0, bounds.y0), dx=dx, dy=dy, nx=nx, ny=ny)


def rasterize_geometry(bounds: Rect, obstacles, exits, dx: float,
                       dy: float | None = None) -> RoomGeometry:
    """Classify cells of the domain grid as free / wall / exit.

    A cell is wall iff its center lies in an obstacle (center-point
    membership, first-order geometry error).  Exit cells are the free
    cells whose center lies in an exit rectangle; an exit rectangle
    fully swallowed by obstacles is rejected.
    """
    grid = make_grid(bounds, dx, dy)
    X, Y = grid.centers()
    wall = np.zeros(grid.shape, dtype=bool)
    for obs in obstacles:
        wall |= obs.contains(X, Y)
    classes = np.where(wall, WALL, FREE).astype(np.int8)
    for ex in exits:
        mask = ex.contains(X, Y)
        if not mask.any():
            raise GeometryError(f"exit {ex} covers no cell")
        if not (mask & ~wall).any():
            raise GeometryError(f"exit {ex} lies entirely inside a wall")
        classes[mask & ~wall] = EXIT
    return RoomGeometry(grid=grid, classes=classes)


def indicator_datum(grid: Grid2D, rectangle: Rect, level: float) -> np.ndarray:
    """Piecewise-constant initial density: `level` inside the rectangle."""
    if level < 0:
        raise ValueError(f"density level must be >= 0, got {level}")
    X, Y = grid.centers()
    return np.where(rectangle.contains(X, Y), float(level), 0.0)


def gaussian_datum(grid: Grid2D, cx: float, cy: float, sigma: float,
                   amplitude: float) -> np.ndarray:
    """Smooth bump exp(-(|x-c|^2)/(2 sigma^2)) scaled by amplitude."""
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    X, Y = grid.centers()
    return amplitude * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * sigma ** 2))


def total_mass(rho: np.ndarray, grid: Grid2D) -> float:
    """Discrete integral of the density; single summation path, row-major."""
    return float(np.sum(rho)) * grid.cell_area
