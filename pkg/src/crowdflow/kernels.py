"""Compactly supported mollifier kernels and discrete convolutions.

The averaged density rho*eta and its gradient grad(rho*eta) = rho*grad(eta)
are computed by direct stencil sums with zero padding outside the domain
(the crowd cannot occupy walls).  The bump profile

    eta(x) = [1 - (x1/r)^2]^3 [1 - (x2/r)^2]^3   on [-r, r]^2

is separable, so a two-pass 1D convolution is available as a fast path;
the direct path accumulates stencil entries in fixed row-major order and
is bit-reproducible against a per-cell double sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import Grid2D

NORMALIZATION_TOL = 1e-12


class KernelError(ValueError):
    """Raised for unusable kernel configurations."""


def _poly3_1d(u: np.ndarray, r: float) -> np.ndarray:
    """1D factor (1 - (u/r)^2)^3 on [-r, r], 0 outside."""
    w = np.where(np.abs(u) <= r, (1.0 - (u / r) ** 2) ** 3, 0.0)
    return w


def _poly3_1d_deriv(u: np.ndarray, r: float) -> np.ndarray:
    """Derivative of the 1D factor: -6u/r^2 (1 - (u/r)^2)^2 on [-r, r]."""
    return np.where(np.abs(u) <= r,
                    -6.0 * u / r ** 2 * (1.0 - (u / r) ** 2) ** 2, 0.0)


@dataclass(frozen=True)
class Kernel:
    radius: float
    profile: str                      # "poly3" or "tabulated"
    normalized: bool
    dx: float
    m: int                            # stencil half-width in cells
    weights: np.ndarray = field(repr=False)       # (2m+1, 2m+1) samples of eta
    grad_weights: np.ndarray = field(repr=False)  # (2, 2m+1, 2m+1) samples of grad eta
    sep_x: np.ndarray | None = field(default=None, repr=False)  # 1D factors if separable
    sep_y: np.ndarray | None = field(default=None, repr=False)
    sep_dx: np.ndarray | None = field(default=None, repr=False)
    sep_dy: np.ndarray | None = field(default=None, repr=False)

    @property
    def separable(self) -> bool:
        return self.sep_x is not None

    def discrete_integral(self) -> float:
        """Midpoint-quadrature integral of eta; 1 if normalized."""
        return float(np.sum(self.weights)) * self.dx * self.dx


def build_kernel(profile: str, r: float, normalized: bool, grid: Grid2D,
                 table: tuple[np.ndarray, np.ndarray] | None = None) -> Kernel:
    """Sample the mollifier on the grid stencil (midpoint quadrature).

    `table` is required for the "tabulated" profile: radial sample points
    and values of eta(|x|); the gradient then uses the interpolated radial
    derivative.  Rejects under-resolved kernels (r < 2 dx) and
    non-square cells.
    """
    if abs(grid.dx - grid.dy) > 1e-12 * grid.dx:
        raise KernelError("convolution stencil requires square cells (dx == dy)")
    dx = grid.dx
    if r <= 0:
        raise KernelError(f"kernel radius must be positive, got {r}")
    if r < 2 * dx:
        raise KernelError(f"kernel radius {r} under-resolved at dx={dx} (need r >= 2 dx)")
    m = math.ceil(r / dx)
    offsets = np.arange(-m, m + 1) * dx

    if profile == "poly3":
        fx = _poly3_1d(offsets, r)
        gx = _poly3_1d_deriv(offsets, r)
        weights = np.outer(fx, fx)
        grad = np.stack([np.outer(gx, fx), np.outer(fx, gx)])
        sep_x, sep_y, sep_dx, sep_dy = fx, fx.copy(), gx, gx.copy()
    elif profile == "tabulated":
        if table is None:
            raise KernelError("tabulated profile requires a radial sample table")
        rp, vp = np.asarray(table[0], float), np.asarray(table[1], float)
        if rp.ndim != 1 or rp.shape != vp.shape or len(rp) < 2:
            raise KernelError("radial table needs matching 1D point/value arrays")
        if np.any(np.diff(rp) <= 0):
            raise KernelError("radial table points must be strictly increasing")
        X, Y = np.meshgrid(offsets, offsets, indexing="ij")
        rad = np.hypot(X, Y)
        weights = np.where(rad <= r, np.interp(rad, rp, vp, right=0.0), 0.0)
        dvp = np.gradient(vp, rp)
        psi_prime = np.where(rad <= r, np.interp(rad, rp, dvp, right=0.0), 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            gxc = np.where(rad > 0, psi_prime * X / rad, 0.0)
            gyc = np.where(rad > 0, psi_prime * Y / rad, 0.0)
        grad = np.stack([gxc, gyc])
        sep_x = sep_y = sep_dx = sep_dy = None
    else:
        raise KernelError(f"unknown kernel profile {profile!r}")

    if normalized:
        integral = float(np.sum(weights)) * dx * dx
        if integral <= 0:
            raise KernelError("kernel has non-positive discrete integral")
        scale = 1.0 / integral
        weights = weights * scale
        grad = grad * scale
        if sep_x is not None:
            # split the scale so outer(sep_x, sep_y) still equals weights
            s = math.sqrt(scale)
            sep_x, sep_y = sep_x * s, sep_y * s
            sep_dx, sep_dy = sep_dx * s, sep_dy * s

    weights.setflags(write=False)
    grad.setflags(write=False)
    return Kernel(radius=r, profile=profile, normalized=normalized, dx=dx, m=m,
                  weights=weights, grad_weights=grad,
                  sep_x=sep_x, sep_y=sep_y, sep_dx=sep_dx, sep_dy=sep_dy)


def _check_grid(field: np.ndarray, kernel: Kernel, grid: Grid2D) -> None:
    if field.shape != grid.shape:
        raise KernelError("field shape does not match grid")
    if abs(grid.dx - kernel.dx) > 1e-12 * kernel.dx:
        raise KernelError(f"kernel built for dx={kernel.dx}, field grid has dx={grid.dx}")


def _stencil_sum(field: np.ndarray, stencil: np.ndarray, m: int) -> np.ndarray:
    """Direct convolution: out[i,j] = sum_{a,b} stencil[a,b] field[i-a, j-b].

    Offsets are visited in row-major order so every output cell
    accumulates in the same fixed sequence (bit-reproducible).
    """
    nx, ny = field.shape
    out = np.zeros_like(field)
    for a in range(-m, m + 1):
        i0, i1 = max(0, a), min(nx, nx + a)
        if i0 >= i1:
            continue
        for b in range(-m, m + 1):
            j0, j1 = max(0, b), min(ny, ny + b)
            if j0 >= j1:
                continue
            w = stencil[a + m, b + m]
            out[i0:i1, j0:j1] += w * field[i0 - a:i1 - a, j0 - b:j1 - b]
    return out


def _separable_sum(field: np.ndarray, wx: np.ndarray, wy: np.ndarray, m: int) -> np.ndarray:
    """Two-pass 1D convolution for separable stencils (fast path);
    out[i,j] = sum_{a,b} wx[a+m] wy[b+m] field[i-a, j-b] with zero padding."""
    mid = ndimage.correlate1d(field, wx[::-1], axis=0, mode="constant", cval=0.0)
    return ndimage.correlate1d(mid, wy[::-1], axis=1, mode="constant", cval=0.0)


def convolve(field: np.ndarray, kernel: Kernel, grid: Grid2D,
             method: str = "auto") -> np.ndarray:
    """(rho * eta) on the grid; density outside the domain is 0."""
    _check_grid(field, kernel, grid)
    if method == "auto":
        method = "separable" if kernel.separable else "direct"
    if method == "separable":
        if not kernel.separable:
            raise KernelError("kernel profile is not separable")
        out = _separable_sum(field, kernel.sep_x, kernel.sep_y, kernel.m)
    elif method == "direct":
        out = _stencil_sum(field, kernel.weights, kernel.m)
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    out *= grid.cell_area
    return out


def convolve_grad(field: np.ndarray, kernel: Kernel, grid: Grid2D,
                  method: str = "auto") -> np.ndarray:
    """grad(rho * eta) = rho * grad(eta), shape (nx, ny, 2)."""
    _check_grid(field, kernel, grid)
    if method == "auto":
        method = "separable" if kernel.separable else "direct"
    if method == "separable":
        if not kernel.separable:
            raise KernelError("kernel profile is not separable")
        gx = _separable_sum(field, kernel.sep_dx, kernel.sep_y, kernel.m)
        gy = _separable_sum(field, kernel.sep_x, kernel.sep_dy, kernel.m)
    elif method == "direct":
        gx = _stencil_sum(field, kernel.grad_weights[0], kernel.m)
        gy = _stencil_sum(field, kernel.grad_weights[1], kernel.m)
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    out = np.stack([gx, gy], axis=-1)
    out *= grid.cell_area
    return out


def convolve_local(field: np.ndarray, kernel: Kernel, grid: Grid2D,
                   grad: bool = False) -> np.ndarray:
    """Convolution restricted to the populated region.

    The result of rho*eta (or rho*grad eta) vanishes more than one
    kernel radius away from supp(rho), so the stencil sums only run on
    the support bounding box padded by the stencil half-width.  Neglects
    density tails below the support threshold (1e-14), far under scheme
    accuracy.
    """
    _check_grid(field, kernel, grid)
    box = support_box(field, margin=2 * kernel.m + 2)
    shape = field.shape + ((2,) if grad else ())
    if box is None:
        return np.zeros(shape)
    i0, i1, j0, j1 = box
    sub = field[i0:i1, j0:j1]
    m = kernel.m
    if grad:
        if kernel.separable:
            gx = _separable_sum(sub, kernel.sep_dx, kernel.sep_y, m)
            gy = _separable_sum(sub, kernel.sep_x, kernel.sep_dy, m)
        else:
            gx = _stencil_sum(sub, kernel.grad_weights[0], m)
            gy = _stencil_sum(sub, kernel.grad_weights[1], m)
        part = np.stack([gx, gy], axis=-1)
    elif kernel.separable:
        part = _separable_sum(sub, kernel.sep_x, kernel.sep_y, m)
    else:
        part = _stencil_sum(sub, kernel.weights, m)
    part *= grid.cell_area
    out = np.zeros(shape)
    out[i0:i1, j0:j1] = part
    return out


def support_box(field: np.ndarray, margin: int,
                threshold: float = 1e-14) -> tuple[int, int, int, int] | None:
    """Bounding index box of cells with |field| > threshold, padded by
    `margin` cells and clipped to the array.  None if the field is
    (numerically) zero.  Used to restrict convolutions to the populated
    region: outside the padded box the convolution is zero up to the
    threshold tail.
    """
    mask = np.abs(field) > threshold
    if not mask.any():
        return None
    ii, jj = np.nonzero(mask)
    nx, ny = field.shape
    return (max(int(ii.min()) - margin, 0), min(int(ii.max()) + margin + 1, nx),
            max(int(jj.min()) - margin, 0), min(int(jj.max()) + margin + 1, ny))
