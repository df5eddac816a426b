"""Kähler metrics from potentials and flow maps, Ricci and scalar curvature.

Matrix fields store ``h[..., i, j] = h_{i j̄}``. Every ∂∂̄ is the real
second-difference stencil of :func:`kahlerflow.grids.ddbar`.

Potentials built by :meth:`PotentialGrid.from_function` are evaluated in
``np.longdouble``: Ricci curvature nests two second differences, which
amplify float64 rounding of the potential by about 1/spacing⁴.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kahlerflow.grids import Grid, ddbar
from kahlerflow.wirtinger import DET_FLOOR, Singular, hermitian_pd_mask, wirtinger_fd


@dataclass
class PotentialGrid:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not np.issubdtype(self.values.dtype, np.floating):
            self.values = self.values.astype(float)
        if self.values.shape != tuple(self.grid.shape):
            raise ValueError("values do not match the grid shape")
        if min(self.grid.shape) < 5:
            raise ValueError("need at least 5 nodes per axis")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential must be finite")

    @classmethod
    def from_function(cls, grid, phi, dtype=np.longdouble):
        return cls(grid, phi(grid.z(dtype)))


def hermitian_det(h):
    """Real determinant of Hermitian fields, closed form (precision-preserving) for d ≤ 2."""
    d = h.shape[-1]
    if d == 1:
        return h[..., 0, 0].real
    if d == 2:
        return (h[..., 0, 0] * h[..., 1, 1] - h[..., 0, 1] * h[..., 1, 0]).real
    return np.linalg.det(h.astype(complex)).real


@dataclass
class HermitianMetricField:
    grid: Grid
    h: np.ndarray
    not_positive: np.ndarray

    @property
    def interior(self):
        return np.all(np.isfinite(self.h), axis=(-1, -2))

    def log_det(self):
        det = hermitian_det(np.nan_to_num(self.h))
        out = np.full(det.shape, np.nan)
        ok = self.interior
        if np.any(det[ok] <= DET_FLOOR):
            raise Singular("det h at or below floor")
        out[ok] = np.log(det[ok])
        return out


def metric_from_potential(p: PotentialGrid, tol: float = 1e-8) -> HermitianMetricField:
    """h_{ij̄} = ∂_i∂_{j̄}Φ on interior nodes (one-cell margin is NaN)."""
    h = ddbar(p.values, p.grid.spacing, p.grid.periodic)
    interior = np.all(np.isfinite(h), axis=(-1, -2))
    flag = ~hermitian_pd_mask(np.nan_to_num(h), tol) & interior
    return HermitianMetricField(p.grid, h, flag)


def pullback_metric(psi, z, step: float = 1e-5) -> np.ndarray:
    """(∇Ψ)†(∇Ψ) from the holomorphic Wirtinger Jacobian of ``psi`` at ``z``."""
    J = wirtinger_fd(psi, z, step).d_dz
    return np.swapaxes(J.conj(), -1, -2) @ J


def ricci(field: HermitianMetricField) -> np.ndarray:
    """Ric_{ij̄} = −∂_i∂_{j̄} log det h (two-cell margin)."""
    return -ddbar(field.log_det(), field.grid.spacing, field.grid.periodic)


def scalar_curvature(field: HermitianMetricField, ric=None, imag_tol: float = 1e-8) -> np.ndarray:
    """R = h^{j̄i} Ric_{ij̄} = tr(h⁻¹ Ric); NaN outside the Ricci margin."""
    ric = ricci(field) if ric is None else ric
    ok = np.all(np.isfinite(ric), axis=(-1, -2))
    R = np.full(ok.shape, np.nan)
    h, ric = field.h.astype(complex), ric.astype(complex)
    tr = np.trace(np.linalg.solve(h[ok], ric[ok]), axis1=-2, axis2=-1)
    scale = np.maximum(1.0, np.abs(tr.real))
    if np.any(np.abs(tr.imag) > imag_tol * scale):
        raise ArithmeticError("scalar curvature has a non-negligible imaginary part")
    R[ok] = tr.real
    return R


def jacobi_check(h_path, t: float, dt: float = 1e-4):
    """(∂_t log det h, tr(h⁻¹ ḣ)) by central differences in time.

    ``h_path(t)`` returns a Hermitian matrix or a field of them.
    """
    hp, hm, h0 = (np.asarray(h_path(s), dtype=complex) for s in (t + dt, t - dt, t))
    dets = [np.linalg.det(m).real for m in (hp, hm, h0)]
    if np.any(np.asarray(dets) <= DET_FLOOR):
        raise Singular("det h at or below floor")
    lhs = (np.log(dets[0]) - np.log(dets[1])) / (2 * dt)
    hdot = (hp - hm) / (2 * dt)
    rhs = np.trace(np.linalg.solve(h0, hdot), axis1=-2, axis2=-1).real
    return lhs, rhs


def einstein_residual(field: HermitianMetricField, ric=None) -> float:
    """sup over nodes of ‖h − Ric‖_∞; zero exactly for Kähler–Einstein with λ = 1."""
    ric = ricci(field) if ric is None else ric
    diff = np.abs(field.h - ric)
    return float(np.nanmax(diff))
