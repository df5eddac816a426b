"""Grid laboratory for Kähler-Ricci flow identities on flat one-dimensional complex tori.

Scalar (d = 1) metrics are stored as plain real fields ``h`` with
``h = 1 + ∂_z∂_z̄Φ`` over the flat background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kahlerflow.diagnostics import DensityField
from kahlerflow.flow import base_log_prob
from kahlerflow.grids import Grid, TorusGrid, d1, d2, dzbar
from kahlerflow.wirtinger import NonFinite

LOGQ_FLOOR = -700.0


class NotPositive(ArithmeticError):
    pass


class NegativeDensity(ArithmeticError):
    pass


class PositivityLost(ArithmeticError):
    def __init__(self, step, msg=None):
        super().__init__(msg or f"metric lost positivity at step {step}")
        self.step = step


class MongeAmpereViolation(ArithmeticError):
    pass


class ZeroMass(ArithmeticError):
    pass


def laplacian_quarter(f, grid: Grid, edges: bool = False):
    """∂_z∂_z̄ f = ¼(f_xx + f_yy) on a planar grid."""
    h = grid.spacing
    return 0.25 * (d2(f, 0, h, grid.periodic, edges) + d2(f, 1, h, grid.periodic, edges))


@dataclass
class KRFState:
    grid: Grid
    phi: np.ndarray
    f: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if self.grid.d != 1:
            raise ValueError("the lab runs on one complex dimension")
        self.phi = np.asarray(self.phi, dtype=float)
        self.f = np.broadcast_to(np.asarray(self.f, dtype=float), self.phi.shape)

    def metric(self):
        return 1.0 + laplacian_quarter(self.phi, self.grid)


def nkrf_density_step(logq_prev, logdet_term, nu: float, dt: float):
    """log q_k = log q_{k-1} − [logdet_term + ν·Δt·log q_{k-1}], no renormalization."""
    logq_prev = np.asarray(logq_prev, dtype=float)
    logdet_term = np.asarray(logdet_term, dtype=float)
    if not (np.all(np.isfinite(logq_prev)) and np.all(np.isfinite(logdet_term))):
        raise NonFinite("density recursion needs finite fields")
    out = logq_prev - (logdet_term + nu * dt * logq_prev)
    if not np.all(np.isfinite(out)):
        raise NonFinite("density recursion overflowed")
    return out


def velocity_from_potential(state: KRFState, phidot):
    """Holomorphic particle velocity V = −h⁻¹ ∂_z̄ Φ̇ at every node."""
    h = state.metric()
    if np.any(h[np.isfinite(h)] <= 0):
        raise NotPositive("metric is not positive")
    with np.errstate(invalid="ignore"):  # NaN margins on open grids
        return -dzbar(np.asarray(phidot, dtype=float), state.grid.spacing, state.grid.periodic) / h


def real_velocity(V):
    """Real transport field X = ½(V + V̄) written as (x, y) components."""
    return 0.5 * V.real, 0.5 * V.imag


def kl_divergence(q, p, cell_area):
    return float(np.sum(q * np.log(q / p)) * cell_area)


def _face_flux(q, phidot, grid: TorusGrid, axis: int, face: str):
    """q·X on the +½ faces along ``axis`` with X = −¼ ∂Φ̇ (flat metric)."""
    hs = grid.spacing
    q_next = np.roll(q, -1, axis)
    vel = -0.25 * (np.roll(phidot, -1, axis) - phidot) / hs
    if face == "central":
        qf = 0.5 * (q + q_next)
    elif face == "upwind":
        qf = np.where(vel > 0, q, q_next)
    else:
        raise ValueError(f"unknown face reconstruction {face!r}")
    return qf * vel


def continuity_rate(q, p, grid: TorusGrid, face: str = "central"):
    """∂_t q = −div(q X) in flux form, velocity driven by Φ̇ = log(q/p)."""
    phidot = np.log(q / p)
    rate = np.zeros_like(q)
    for axis in (0, 1):
        flux = _face_flux(q, phidot, grid, axis, face)
        rate -= (flux - np.roll(flux, 1, axis)) / grid.spacing
    return rate


def dissipation_rhs(q, p, qdot, grid: TorusGrid):
    """(−∫ h⁻¹ |∂_z Φ̇|² q dA, ∫ q̇ dA) with node-centred gradients, flat h."""
    phidot = np.log(q / p)
    hs = grid.spacing
    gx, gy = d1(phidot, 0, hs, True), d1(phidot, 1, hs, True)
    fisher = float(np.sum(0.25 * (gx * gx + gy * gy) * q) * grid.cell_area)
    return -fisher, float(np.sum(qdot) * grid.cell_area)


@dataclass
class DissipationStep:
    step: int
    kl: float
    lhs: float
    rhs: float
    fisher_term: float
    correction: float

    @property
    def rel_error(self):
        return abs(self.lhs - self.rhs) / max(abs(self.lhs), 1e-8)


def kl_dissipation_check(grid: TorusGrid, q0, p, steps: int, dt: float, face: str = "central",
                         cfl_max: float = 0.4) -> list[DissipationStep]:
    """Transport q by the continuity equation (forward Euler) and compare dKL/dt with its identity.

    lhs is the forward difference of KL over one step; rhs is the trapezoid
    average of the right-hand side at both ends of the step.
    """
    if not grid.periodic:
        raise ValueError("the dissipation check needs a periodic grid")
    q = np.asarray(q0, dtype=float).copy()
    p = np.asarray(p, dtype=float)
    if np.any(q <= 0) or np.any(p <= 0):
        raise ValueError("q0 and p must be strictly positive")
    for name, arr in (("q0", q), ("p", p)):
        if abs(np.sum(arr) * grid.cell_area - 1.0) > 1e-6:
            raise ValueError(f"{name} must integrate to 1")

    def rhs_at(qq):
        qdot = continuity_rate(qq, p, grid, face)
        fis, corr = dissipation_rhs(qq, p, qdot, grid)
        return qdot, fis, corr

    qdot, fis, corr = rhs_at(q)
    kl = kl_divergence(q, p, grid.cell_area)
    out = []
    for n in range(steps):
        vmax = 0.25 * np.max(np.abs(np.gradient(np.log(q / p), grid.spacing)))
        if vmax * dt / grid.spacing > cfl_max:
            raise ValueError("time step violates the CFL bound")
        q_new = q + dt * qdot
        if np.any(q_new < -1e-12):
            raise NegativeDensity(f"transport produced q < 0 at step {n + 1}")
        if not np.all(np.isfinite(q_new)):
            raise NonFinite(f"transport became non-finite at step {n + 1}")
        q_new = np.maximum(q_new, 1e-300)
        kl_new = kl_divergence(q_new, p, grid.cell_area)
        qdot_new, fis_new, corr_new = rhs_at(q_new)
        f_avg, c_avg = 0.5 * (fis + fis_new), 0.5 * (corr + corr_new)
        out.append(DissipationStep(n, kl, (kl_new - kl) / dt, f_avg + c_avg, f_avg, c_avg))
        q, kl, qdot, fis, corr = q_new, kl_new, qdot_new, fis_new, corr_new
    return out


def bump_density(grid: TorusGrid, amplitude: float = 4.0, width: float = 1.0, center=None):
    """Normalized 1 + amplitude·(periodized Gaussian bump) on the torus."""
    center = (grid.length / 2, grid.length / 2) if center is None else center
    dx, dy = grid.periodic_delta(center)
    q = 1.0 + amplitude * np.exp(-(dx * dx + dy * dy) / (2 * width**2))
    return q / (np.sum(q) * grid.cell_area)


def perelman_functional(h, f, cell_area):
    """F_K = Σ (log h − f)·h·ΔA for d = 1 over a flat background."""
    return float(np.sum((np.log(h) - f) * h) * cell_area)


@dataclass
class PerelmanRun:
    phis: list
    F: np.ndarray
    dt: float

    @property
    def delta_F(self):
        return float(self.F[-1] - self.F[0])


def perelman_flow(state: KRFState, steps: int, dt: float, keep_fields: bool = True) -> PerelmanRun:
    """Explicit Euler on Φ̇ = log h − f with h = 1 + ∂∂̄Φ recomputed each step."""
    if not state.grid.periodic:
        raise ValueError("perelman_flow runs on a periodic grid")
    phi = state.phi.copy()
    area = state.grid.cell_area
    phis, F = [phi.copy()], []
    for n in range(steps + 1):
        h = 1.0 + laplacian_quarter(phi, state.grid)
        if not np.all(np.isfinite(h)):
            raise PositivityLost(n, f"metric became non-finite at step {n}")
        if np.any(h <= 0):
            raise PositivityLost(n)
        F.append(perelman_functional(h, state.f, area))
        if n == steps:
            break
        phi = phi + dt * (np.log(h) - state.f)
        if keep_fields:
            phis.append(phi.copy())
    if not keep_fields:
        phis.append(phi)
    return PerelmanRun(phis, np.array(F), dt)


def monge_ampere_det(h, phi, grid: Grid):
    """det(h + ∂∂̄φ) on every node (one-sided stencils on open grid edges)."""
    return np.asarray(h, dtype=float) + laplacian_quarter(np.asarray(phi, dtype=float), grid, edges=True)


def surgery_rescue(logq, phi, h, grid: Grid) -> DensityField:
    """Log-sum-exp rescue q̃ ∝ exp L + exp φ, normalized against the metric volume h·dA.

    The returned ``p`` is the density with respect to ``h·dA``.
    """
    logq = np.maximum(np.asarray(logq, dtype=float), LOGQ_FLOOR)
    phi = np.asarray(phi, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), logq.shape)
    if not np.all(np.isfinite(phi)):
        raise ValueError("rescue potential must be finite")
    ma = monge_ampere_det(h, phi, grid)
    if not np.all(ma > 0):
        raise MongeAmpereViolation(f"det(h + ddbar phi) <= 0 on {int(np.sum(~(ma > 0)))} nodes")
    q = np.exp(logq) + np.exp(phi)
    Z = float(np.sum(q * h) * grid.cell_area)
    if not (np.isfinite(Z) and Z > 0):
        raise ZeroMass("rescued density has no mass")
    return DensityField(grid, q / Z, Z)


def gaussian_rescue_potential(grid: Grid, h, center=0j, a: float = -1.0, b: float = 0.0,
                              sigma: float = 1.0, max_doublings: int = 60):
    """φ = a·exp(−|z − z₀|²/2σ²) + b with σ doubled until det(h + ∂∂̄φ) > 0 on every node.

    Returns (φ, σ). With a < 0 the bump is plurisubharmonic inside |z − z₀|² < 2σ²,
    so the search terminates once the grid fits in that disc.
    """
    r2 = np.abs(grid.z()[..., 0] - center) ** 2
    for _ in range(max_doublings):
        phi = a * np.exp(-r2 / (2 * sigma**2)) + b
        if np.all(monge_ampere_det(h, phi, grid) > 0):
            return phi, sigma
        sigma *= 2.0
    raise MongeAmpereViolation("no admissible rescue width found")


@dataclass
class SurgeryEvent:
    trigger_layer: int
    det_floor: float
    phi: np.ndarray
    rescued_Z: float
    mean_det: float
    grid: Grid
    logq: np.ndarray  # clipped log-density on the probe slice before rescue
    metric: np.ndarray  # slice metric |e^s|²
    rescued: DensityField = field(repr=False, default=None)
    sigma: float = 1.0


def layer_dets(stack, points):
    """Batch-mean det(J†J) = |det_C J|² for every layer at its own inputs."""
    z = np.atleast_2d(np.asarray(points, dtype=complex))
    out = []
    for layer in stack.layers:
        z_next, logdet = layer.forward(z)
        out.append(float(np.mean(np.exp(logdet))))
        z = z_next
    return out


def _prefix_pull(stack, z, k):
    total = np.zeros(len(z))
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in reversed(stack.layers[:k]):
            z, ld = layer.inverse(z)
            total = total + ld
    return z, total


def singularity_monitor(stack, batch, det_floor: float = 1e-12, probe_n: int = 33,
                        probe_half_width: float = 3.0) -> SurgeryEvent | None:
    """First layer whose batch-mean pullback determinant drops below ``det_floor``.

    The rescue is built on a complex-line slice through the batch mean, along
    the triggering layer's free coordinate.
    """
    pts = batch.points if hasattr(batch, "points") else batch
    z = np.atleast_2d(np.asarray(pts, dtype=complex))
    for k, layer in enumerate(stack.layers):
        with np.errstate(over="ignore", under="ignore"):
            z_next, logdet = layer.forward(z)
        mean_det = float(np.mean(np.exp(logdet)))
        if mean_det < det_floor:
            break
        z = z_next
    else:
        return None
    free = 1 - layer.parity
    center = z.mean(axis=0)
    grid = Grid.square(probe_n, probe_half_width, 1, (center[free].real, center[free].imag))
    line = grid.z()[..., 0].ravel()
    zin = np.tile(center, (line.size, 1))
    zin[:, free] = line
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        _, ld_k = layer.forward(zin)
        z0, inv_ld = _prefix_pull(stack, zin, k)
        logq = base_log_prob(z0) + inv_ld - ld_k
    logq = np.maximum(np.nan_to_num(logq, nan=LOGQ_FLOOR, neginf=LOGQ_FLOOR), LOGQ_FLOOR).reshape(grid.shape)
    metric = np.exp(ld_k).reshape(grid.shape)
    phi, sigma = gaussian_rescue_potential(grid, metric, center[free], sigma=probe_half_width)
    rescued = surgery_rescue(logq, phi, metric, grid)
    return SurgeryEvent(k, det_floor, phi, rescued.Z, mean_det, grid, logq, metric, rescued, sigma)
