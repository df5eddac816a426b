"""Histogram densities, the two planar curvature maps, holomorphy probes, and artifact writers."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from matplotlib import colormaps
from PIL import Image
from scipy.ndimage import gaussian_filter

from kahlerflow.datasets import Dataset, sample_complex_gaussian
from kahlerflow.flow import base_log_prob
from kahlerflow.geometry import pullback_metric
from kahlerflow.grids import Grid, d1, d2, dmixed
from kahlerflow.wirtinger import wirtinger_fd, wirtinger_hessian_fd

DENSITY_FLOOR = 1e-12
MASK_RGB = (255, 0, 255)


class EmptyDataset(ValueError):
    pass


class AllMasked(ArithmeticError):
    pass


@dataclass
class DensityField:
    grid: Grid
    p: np.ndarray
    Z: float

    @property
    def mass(self):
        return float(np.sum(self.p) * self.grid.cell_area)

    @classmethod
    def from_unnormalized(cls, grid, values):
        values = np.asarray(values, dtype=float)
        if np.any(values < 0):
            raise ValueError("densities must be non-negative")
        Z = float(np.sum(values) * grid.cell_area)
        if not Z > 0:
            raise ArithmeticError("zero mass")
        return cls(grid, values / Z, Z)


@dataclass
class CurvatureMap:
    grid: Grid
    values: np.ndarray  # in [0, 1], NaN where masked
    raw: np.ndarray  # before clipping/normalization, NaN where masked
    clip_percentile: float

    @property
    def mask(self):
        return ~np.isfinite(self.raw)


def histogram_density(points, grid: Grid, sigma: float = 1.0, coord: int = 0) -> DensityField:
    """Histogram of (Re z, Im z) of one coordinate, Gaussian-smoothed (σ in cells), renormalized."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    z = points.points if isinstance(points, Dataset) else np.asarray(points, dtype=complex)
    z = np.atleast_2d(z)[:, coord] if np.ndim(z) > 1 or np.iscomplexobj(z) and z.ndim == 2 else np.ravel(z)
    if z.size == 0:
        raise EmptyDataset("no points to histogram")
    ex, ey = grid.edges()
    counts, _, _ = np.histogram2d(z.real, z.imag, bins=[ex, ey])
    if counts.sum() == 0:
        raise EmptyDataset("no points fall inside the grid")
    if sigma > 0:
        counts = gaussian_filter(counts, sigma, mode="constant", truncate=4.0)
    return DensityField.from_unnormalized(grid, counts)


def clip_normalize(raw, percentile: float = 60.0):
    """Clamp |raw| at its percentile over unmasked nodes, then min-max to [0, 1]."""
    ok = np.isfinite(raw)
    if not np.any(ok):
        raise AllMasked("every node is masked")
    c = np.percentile(np.abs(raw[ok]), percentile)
    clipped = np.clip(raw, -c, c)
    lo, hi = np.min(clipped[ok]), np.max(clipped[ok])
    out = np.full(raw.shape, np.nan)
    out[ok] = (clipped[ok] - lo) / (hi - lo) if hi > lo else 0.0
    return out


def _log_density(p: DensityField):
    vals = np.asarray(p.p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(vals > DENSITY_FLOOR, np.log(np.maximum(vals, DENSITY_FLOOR)), np.nan)


def kahler_curvature_raw(p: DensityField) -> np.ndarray:
    """−2 h⁻¹ ∂_z∂_z̄ log h with h = ∂_z∂_z̄(−log p); NaN where h ≤ 0 or out of reach."""
    h_sp = p.grid.spacing
    phi = -_log_density(p)
    h = 0.25 * (d2(phi, 0, h_sp) + d2(phi, 1, h_sp))
    with np.errstate(divide="ignore", invalid="ignore"):
        logh = np.where(h > 0, np.log(np.where(h > 0, h, 1.0)), np.nan)
        inner = -2.0 / h * 0.25 * (d2(logh, 0, h_sp) + d2(logh, 1, h_sp))
    inner[~(h > 0)] = np.nan
    return inner


def score_curvature_raw(p: DensityField, eps: float = 1e-6) -> np.ndarray:
    """−(1/p)·∂_xy log p / (|∇ log p|² + ε)."""
    h_sp = p.grid.spacing
    lp = _log_density(p)
    lxy = dmixed(lp, 0, 1, h_sp)
    gx, gy = d1(lp, 0, h_sp), d1(lp, 1, h_sp)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -(1.0 / p.p) * lxy / (gx * gx + gy * gy + eps)


def kahler_curvature_map(p: DensityField, clip_percentile: float = 60.0) -> CurvatureMap:
    raw = kahler_curvature_raw(p)
    return CurvatureMap(p.grid, clip_normalize(raw, clip_percentile), raw, clip_percentile)


def score_curvature_proxy(p: DensityField, eps: float = 1e-6, clip_percentile: float = 60.0) -> CurvatureMap:
    if eps <= 0:
        raise ValueError("eps must be positive")
    raw = score_curvature_raw(p, eps)
    return CurvatureMap(p.grid, clip_normalize(raw, clip_percentile), raw, clip_percentile)


@dataclass
class LayerHolomorphy:
    layer: int
    dz_norm: np.ndarray
    dzbar_norm: np.ndarray

    @property
    def median_dz(self):
        return float(np.median(self.dz_norm))

    @property
    def median_dzbar(self):
        return float(np.median(self.dzbar_norm))


def holomorphy_probe(stack, n: int = 5000, seed: int = 0, step: float = 1e-4) -> list[LayerHolomorphy]:
    """Frobenius norms of ∂f/∂z and ∂f/∂z̄ for every layer on base-Gaussian inputs."""
    if n <= 0:
        raise ValueError("n must be positive")
    z = sample_complex_gaussian(n, stack.d, seed).points
    out = []
    for k, layer in enumerate(stack.layers):
        jet = wirtinger_fd(layer, z, step)
        out.append(LayerHolomorphy(k, np.linalg.norm(jet.d_dz, axis=(-2, -1)),
                                   np.linalg.norm(jet.d_dzbar, axis=(-2, -1))))
        z = layer(z)
    return out


def pullback_log_density(stack, z):
    """log q(z|θ) = log p_α(Ψ(z)) + log|det ∇Ψ(z)|² with Ψ the stack's forward map."""
    w, logdet = stack.push_forward(z)
    return base_log_prob(w) + logdet


def fisher_pullback_check(stack, z, step: float = 5e-3, jac_step: float = 1e-5):
    """(spatial Fisher metric, pullback J†J, sup-norm difference) at ``z``.

    The Fisher matrix −∂_i∂_{j̄} log q is returned transposed so that it shares
    the J†J index layout.
    """
    z = np.asarray(z, dtype=complex)
    H = wirtinger_hessian_fd(lambda u: pullback_log_density(stack, u), z, step)
    fisher = -np.swapaxes(H, -1, -2)
    pull = pullback_metric(stack, z, jac_step)
    return fisher, pull, float(np.max(np.abs(fisher - pull)))


def _to_unit(obj):
    if isinstance(obj, CurvatureMap):
        return obj.values
    vals = np.asarray(obj.p if isinstance(obj, DensityField) else obj, dtype=float)
    ok = np.isfinite(vals)
    out = np.full(vals.shape, np.nan)
    if np.any(ok):
        lo, hi = vals[ok].min(), vals[ok].max()
        out[ok] = (vals[ok] - lo) / (hi - lo) if hi > lo else 0.0
    return out


def heatmap_rgb(obj, cmap: str = "viridis") -> np.ndarray:
    unit = _to_unit(obj)
    rgb = np.round(colormaps[cmap](np.nan_to_num(unit))[..., :3] * 255).astype(np.uint8)
    rgb[~np.isfinite(unit)] = MASK_RGB
    # arrays are [x, y]; image row 0 is the top of the grid
    return np.ascontiguousarray(np.transpose(rgb, (1, 0, 2))[::-1])


def render_heatmap(obj, path, cmap: str = "viridis") -> None:
    Image.fromarray(heatmap_rgb(obj, cmap), mode="RGB").save(path, format="PNG")


def write_field_csv(grid: Grid, fields: dict, path) -> None:
    """Columns x, y, then one column per named field."""
    x, y = grid.coords()
    names = list(fields)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", *names])
        flat = [np.ravel(fields[k]) for k in names]
        for i, (xi, yi) in enumerate(zip(x.ravel(), y.ravel())):
            w.writerow([repr(float(xi)), repr(float(yi)), *(repr(float(f[i])) for f in flat)])
