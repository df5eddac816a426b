import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kahlerflow.datasets import sample_complex_gaussian
from kahlerflow.flow import FlowStack
from kahlerflow.grids import Grid, TorusGrid
from kahlerflow.krf_lab import (LOGQ_FLOOR, KRFState, MongeAmpereViolation, NotPositive, PositivityLost, ZeroMass,
                                bump_density, continuity_rate, gaussian_rescue_potential, kl_dissipation_check,
                                laplacian_quarter, monge_ampere_det, nkrf_density_step, perelman_flow,
                                perelman_functional, real_velocity, singularity_monitor, surgery_rescue,
                                velocity_from_potential)
from kahlerflow.layers import CouplingLayer
from kahlerflow.wirtinger import NonFinite

TORUS = TorusGrid(64, 2 * np.pi)


def uniform(grid):
    return np.full(grid.shape, 1.0 / grid.length**2)


# density recursion

def test_recursion_without_damping_is_change_of_variables(rng):
    logq, logdet = rng.normal(size=(32, 32)), rng.normal(size=(32, 32))
    assert np.array_equal(nkrf_density_step(logq, logdet, 0.0, 0.37), logq - logdet)


def test_recursion_cancellation(rng):
    logq = rng.normal(size=(32, 32)) * 10
    assert np.array_equal(nkrf_density_step(logq, np.zeros_like(logq), 2.0, 0.5), np.zeros_like(logq))


@given(st.integers(0, 10_000), st.floats(0, 5), st.floats(0, 1))
def test_recursion_dual_path(seed, nu, dt):
    rng = np.random.default_rng(seed)
    logq, logdet = rng.normal(size=64), rng.normal(size=64)
    mapped = (1.0 - nu * dt) * logq
    assert np.max(np.abs(nkrf_density_step(logq, logdet, nu, dt) - (mapped - logdet))) < 1e-14 * max(1, nu * dt) + 1e-15


def test_recursion_rejects_non_finite():
    with pytest.raises(NonFinite):
        nkrf_density_step(np.array([np.inf]), np.array([0.0]), 0.0, 0.1)


# particle velocity

def test_constant_potential_has_no_velocity():
    state = KRFState(TORUS, np.zeros(TORUS.shape), 0.0)
    assert np.all(velocity_from_potential(state, np.full(TORUS.shape, 3.0)) == 0)


def test_linear_potential_gives_constant_velocity():
    grid = Grid.square(21, 1.0)
    x, _ = grid.coords()
    V = velocity_from_potential(KRFState(grid, np.zeros(grid.shape), 0.0), x)
    assert np.allclose(V[1:-1, 1:-1], -0.5, atol=1e-12)


def test_velocity_requires_positive_metric():
    x, y = TORUS.coords()
    state = KRFState(TORUS, -8 * (np.cos(x) + np.cos(y)), 0.0)
    with pytest.raises(NotPositive):
        velocity_from_potential(state, np.zeros(TORUS.shape))


def test_velocity_matches_analytic_field():
    x, y = TORUS.coords()
    phidot = np.sin(x) * np.cos(y)
    V = velocity_from_potential(KRFState(TORUS, np.zeros(TORUS.shape), 0.0), phidot)
    exact = -0.5 * (np.cos(x) * np.cos(y) - 1j * np.sin(x) * np.sin(y))
    assert np.max(np.abs(V - exact)) < 5e-3
    vx, vy = real_velocity(V)
    assert np.allclose(vx, 0.5 * V.real) and np.allclose(vy, 0.5 * V.imag)


def test_transport_matches_continuity_equation():
    # ∂_t q = −div(qX) with X = −¼∇Φ̇ and Φ̇ = log(q/p)
    errs = []
    for n in (64, 128):
        grid = TorusGrid(n, 2 * np.pi)
        x, y = grid.coords()
        q = 1.0 + 0.3 * np.sin(x) * np.cos(y)
        phidot = 0.5 * np.cos(x) + 0.2 * np.sin(2 * y)
        p = q * np.exp(-phidot)
        grad_q = (0.3 * np.cos(x) * np.cos(y), -0.3 * np.sin(x) * np.sin(y))
        grad_phi = (-0.5 * np.sin(x), 0.4 * np.cos(2 * y))
        lap_phi = -0.5 * np.cos(x) - 0.8 * np.sin(2 * y)
        exact = 0.25 * (grad_q[0] * grad_phi[0] + grad_q[1] * grad_phi[1] + q * lap_phi)
        errs.append(np.max(np.abs(continuity_rate(q, p, grid) - exact)))
    assert errs[1] < 1e-3 and errs[0] / errs[1] > 3.5


def test_continuity_conserves_mass():
    q = bump_density(TORUS)
    assert abs(np.sum(continuity_rate(q, uniform(TORUS), TORUS))) < 1e-12


# KL dissipation

def test_kl_fixed_point():
    p = bump_density(TORUS)
    steps = kl_dissipation_check(TORUS, p, p, 5, 1e-3)
    assert all(s.kl == 0 and s.lhs == 0 and s.rhs == 0 for s in steps)


def test_kl_non_increasing_and_identity():
    grid = TorusGrid(128, 10.0)
    steps = kl_dissipation_check(grid, bump_density(grid), uniform(grid), 30, 1e-4)
    assert max(s.lhs for s in steps) <= 1e-6
    assert max(s.rel_error for s in steps) < 5e-3
    assert all(abs(s.correction) < 1e-10 for s in steps)


def test_kl_identity_improves_under_refinement():
    errs = []
    for n in (32, 64):
        grid = TorusGrid(n, 10.0)
        errs.append(max(s.rel_error for s in kl_dissipation_check(grid, bump_density(grid), uniform(grid), 10, 1e-4)))
    assert errs[0] / errs[1] > 2 ** 1.5


def test_upwind_faces_are_first_order():
    grid = TorusGrid(64, 10.0)
    central = kl_dissipation_check(grid, bump_density(grid), uniform(grid), 5, 1e-4)
    upwind = kl_dissipation_check(grid, bump_density(grid), uniform(grid), 5, 1e-4, face="upwind")
    assert max(s.rel_error for s in upwind) > max(s.rel_error for s in central)


def test_kl_validation():
    grid = TorusGrid(32, 10.0)
    with pytest.raises(ValueError):
        kl_dissipation_check(grid, 2 * bump_density(grid), uniform(grid), 1, 1e-4)
    with pytest.raises(ValueError, match="CFL"):
        kl_dissipation_check(grid, bump_density(grid), uniform(grid), 1, 10.0)
    with pytest.raises(ValueError):
        kl_dissipation_check(Grid.square(32, 1.0), np.ones((32, 32)), np.ones((32, 32)), 1, 1e-4)


# Perelman-type flow

def smooth_phi(grid, amp=0.3):
    x, y = grid.coords()
    return amp * np.cos(x) * np.cos(2 * y)


def test_perelman_stationary_state():
    phi0 = smooth_phi(TORUS)
    f = np.log(1.0 + laplacian_quarter(phi0, TORUS))
    run = perelman_flow(KRFState(TORUS, phi0, f), 20, 1e-3)
    assert all(np.array_equal(ph, phi0) for ph in run.phis)
    assert np.max(np.abs(np.diff(run.F))) < 1e-12


def test_perelman_sign_consistent_under_dt_halving():
    phi0 = smooth_phi(TORUS)
    coarse = perelman_flow(KRFState(TORUS, phi0, 0.0), 50, 1e-2, keep_fields=False)
    fine = perelman_flow(KRFState(TORUS, phi0, 0.0), 100, 5e-3, keep_fields=False)
    assert np.sign(coarse.delta_F) == np.sign(fine.delta_F) != 0
    assert abs(coarse.delta_F - fine.delta_F) < 0.01 * abs(fine.delta_F)
    # measured: descent at every step
    assert np.all(np.diff(fine.F) < 0)


@given(st.floats(-3, 3))
def test_perelman_functional_constant_case(c):
    F = perelman_functional(np.ones(TORUS.shape), np.full(TORUS.shape, c), TORUS.cell_area)
    assert F == pytest.approx(-c * TORUS.length**2, rel=1e-12, abs=1e-12)


def test_perelman_positivity_lost_at_start():
    with pytest.raises(PositivityLost) as info:
        perelman_flow(KRFState(TORUS, smooth_phi(TORUS, 3.0), 0.0), 5, 1e-3)
    assert info.value.step == 0


def test_perelman_aborts_instead_of_nan():
    with pytest.raises(PositivityLost):
        perelman_flow(KRFState(TORUS, smooth_phi(TORUS, 0.7), 0.0), 200, 0.5)


# surgery

PLANE = Grid.square(65, 4.0)


def log_bump(grid, sigma=1.0):
    r2 = np.abs(grid.z()[..., 0]) ** 2
    logb = -r2 / (2 * sigma**2)
    return logb - np.log(np.sum(np.exp(logb)) * grid.cell_area)


def test_total_collapse_recovers_bump():
    phi = log_bump(PLANE)
    out = surgery_rescue(np.full(PLANE.shape, -900.0), phi, 1.0, PLANE)
    assert abs(out.mass - 1) < 1e-6
    assert np.max(np.abs(out.p - np.exp(phi))) < 1e-6


def test_no_op_rescue():
    logq = log_bump(PLANE, 1.3)
    out = surgery_rescue(logq, np.full(PLANE.shape, LOGQ_FLOOR), 1.0, PLANE)
    assert np.max(np.abs(out.p - np.exp(logq))) < 1e-6


def test_half_collapse_is_positive_and_normalized():
    logq = log_bump(PLANE, 1.5)
    x, _ = PLANE.coords()
    logq[x < 0] = -1e4
    h = np.full(PLANE.shape, 2.0)
    out = surgery_rescue(logq, log_bump(PLANE), h, PLANE)
    assert np.all(out.p > 0)
    assert abs(np.sum(out.p * h) * PLANE.cell_area - 1) < 1e-6


def test_monge_ampere_violation():
    phi = -5 * np.abs(PLANE.z()[..., 0]) ** 2
    with pytest.raises(MongeAmpereViolation):
        surgery_rescue(np.zeros(PLANE.shape), phi, 1.0, PLANE)


def test_zero_mass():
    with pytest.raises(ZeroMass):
        surgery_rescue(np.full(PLANE.shape, -800.0), np.full(PLANE.shape, -800.0), 1e-30, PLANE)


@given(st.floats(1e-8, 10.0))
def test_rescue_potential_satisfies_monge_ampere(level):
    phi, sigma = gaussian_rescue_potential(PLANE, np.full(PLANE.shape, level), sigma=0.5)
    assert np.all(monge_ampere_det(np.full(PLANE.shape, level), phi, PLANE) > 0)
    assert sigma >= 0.5


def test_monitor_quiet_on_healthy_stack():
    stack = FlowStack.init(8, seed=1)
    assert singularity_monitor(stack, sample_complex_gaussian(500, seed=3)) is None


@pytest.mark.parametrize("forced", [0, 3, 7])
def test_monitor_finds_forced_collapse(forced):
    stack = FlowStack.init(8, seed=1)
    stack.layers[forced] = CouplingLayer.constant(-30.0, 0.1, parity=forced % 2, clamp=None)
    event = singularity_monitor(stack, sample_complex_gaussian(500, seed=3), det_floor=1e-12)
    assert event is not None and event.trigger_layer == forced
    assert event.mean_det == pytest.approx(np.exp(-60), rel=1e-9)
    assert np.all(monge_ampere_det(event.metric, event.phi, event.grid) > 0)
    assert np.all(event.rescued.p > 0)
    assert abs(np.sum(event.rescued.p * event.metric) * event.grid.cell_area - 1) < 1e-6
