"""Uniform grids over C^d (realified axes x1, y1, x2, y2, ...) and their stencils.

Fields are arrays whose axes follow the grid's real axes (``indexing='ij'``).
Non-periodic stencils leave NaN on the margin they cannot reach, so derived
fields inherit the right margin automatically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    origin: tuple
    spacing: float
    shape: tuple
    periodic: bool = False

    def __post_init__(self):
        if len(self.origin) != len(self.shape) or len(self.shape) % 2:
            raise ValueError("grid needs an even number of real axes")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    @classmethod
    def square(cls, n, half_width, d=1, center=None):
        """``n`` nodes per real axis spanning [c - half_width, c + half_width]."""
        center = np.zeros(2 * d) if center is None else np.asarray(center, dtype=float)
        h = 2.0 * half_width / (n - 1)
        return cls(tuple(float(c - half_width) for c in center), h, (n,) * (2 * d))

    @property
    def d(self):
        return len(self.shape) // 2

    @property
    def cell_area(self):
        return self.spacing ** len(self.shape)

    def axes(self, dtype=float):
        h = np.asarray(self.spacing, dtype=dtype)
        return [np.asarray(o, dtype=dtype) + h * np.arange(n, dtype=dtype)
                for o, n in zip(self.origin, self.shape)]

    def coords(self, dtype=float):
        return np.meshgrid(*self.axes(dtype), indexing="ij")

    def z(self, dtype=float):
        """Complex node coordinates, shape ``shape + (d,)``; ``dtype`` sets the real precision."""
        c = self.coords(dtype)
        return np.stack([c[2 * k] + 1j * c[2 * k + 1] for k in range(self.d)], axis=-1)

    def edges(self):
        """Histogram bin edges centred on nodes (planar axes only)."""
        return [o - 0.5 * self.spacing + self.spacing * np.arange(n + 1)
                for o, n in zip(self.origin, self.shape)]

    def integrate(self, field):
        """Node-sum quadrature (trapezoid on a periodic grid)."""
        return float(np.nansum(field) * self.cell_area)


class TorusGrid(Grid):
    """N×N periodic grid on [0, L)², a flat one-complex-dimensional torus."""

    def __init__(self, n: int, length: float):
        if n < 16:
            raise ValueError("torus grids need N >= 16")
        super().__init__((0.0, 0.0), length / n, (n, n), True)
        object.__setattr__(self, "length", float(length))

    def periodic_delta(self, center):
        """Minimum-image displacement of every node from ``center`` (x, y)."""
        x, y = self.coords()
        L = self.length
        dx = (x - center[0] + L / 2) % L - L / 2
        dy = (y - center[1] + L / 2) % L - L / 2
        return dx, dy


def _shift(f, axis, k, periodic):
    if periodic:
        return np.roll(f, -k, axis=axis)
    out = np.full_like(f, np.nan)
    src = [slice(None)] * f.ndim
    dst = [slice(None)] * f.ndim
    if k > 0:
        src[axis], dst[axis] = slice(k, None), slice(None, -k)
    else:
        src[axis], dst[axis] = slice(None, k), slice(-k, None)
    out[tuple(dst)] = f[tuple(src)]
    return out


def d1(f, axis, h, periodic=False):
    return (_shift(f, axis, 1, periodic) - _shift(f, axis, -1, periodic)) / (2 * h)


def d2(f, axis, h, periodic=False, edges=False):
    out = (_shift(f, axis, 1, periodic) - 2 * f + _shift(f, axis, -1, periodic)) / h**2
    if edges and not periodic:
        # second-order one-sided second derivative on the two boundary planes
        f = np.moveaxis(f, axis, 0)
        o = np.moveaxis(out, axis, 0)
        o[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
        o[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2
    return out


def dmixed(f, a, b, h, periodic=False):
    fa = _shift(f, a, 1, periodic), _shift(f, a, -1, periodic)
    return ((_shift(fa[0], b, 1, periodic) - _shift(fa[0], b, -1, periodic))
            - (_shift(fa[1], b, 1, periodic) - _shift(fa[1], b, -1, periodic))) / (4 * h**2)


def ddbar(f, h, periodic=False, edges=False):
    """Mixed Wirtinger Hessian ∂_i∂_{j̄} f of a real field: shape ``f.shape + (d, d)``.

    ``edges`` (d = 1, non-periodic only) fills the boundary with one-sided stencils.
    """
    f = np.asarray(f)
    if not np.issubdtype(f.dtype, np.floating):
        f = f.astype(float)
    d = f.ndim // 2
    out = np.empty(f.shape + (d, d), dtype=np.result_type(f.dtype, np.complex64))
    for i in range(d):
        for j in range(d):
            if i == j:
                re = d2(f, 2 * i, h, periodic, edges) + d2(f, 2 * i + 1, h, periodic, edges)
                out[..., i, i] = 0.25 * re
            else:
                re = dmixed(f, 2 * i, 2 * j, h, periodic) + dmixed(f, 2 * i + 1, 2 * j + 1, h, periodic)
                im = dmixed(f, 2 * i, 2 * j + 1, h, periodic) - dmixed(f, 2 * i + 1, 2 * j, h, periodic)
                out[..., i, j] = 0.25 * (re + 1j * im)
    return out


def dz(f, h, periodic=False, coord=0):
    """∂f/∂z_coord = ½(∂x − i∂y)."""
    return 0.5 * (d1(f, 2 * coord, h, periodic) - 1j * d1(f, 2 * coord + 1, h, periodic))


def dzbar(f, h, periodic=False, coord=0):
    return 0.5 * (d1(f, 2 * coord, h, periodic) + 1j * d1(f, 2 * coord + 1, h, periodic))
