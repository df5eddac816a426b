"""Acceptance checks with pinned tolerances, shared by the CLI and the test suite."""

from __future__ import annotations

import csv
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from kahlerflow.datasets import make_dataset, sample_complex_gaussian, standardization, standardize
from kahlerflow.diagnostics import (DensityField, fisher_pullback_check, holomorphy_probe,
                                    kahler_curvature_raw, score_curvature_raw)
from kahlerflow.flow import FlowStack, base_log_prob
from kahlerflow.geometry import PotentialGrid, jacobi_check, metric_from_potential, ricci
from kahlerflow.grids import Grid, TorusGrid
from kahlerflow.krf_lab import (KRFState, bump_density, kl_dissipation_check, laplacian_quarter,
                                monge_ampere_det, nkrf_density_step, perelman_flow, singularity_monitor)
from kahlerflow.layers import CouplingLayer
from kahlerflow.training import TrainConfig, nll_grad_check, nll_loss, train


@dataclass
class CheckResult:
    id: int
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""
    budget: float = float("inf")

    @property
    def in_budget(self):
        return self.seconds < self.budget

    @property
    def status(self):
        return "PASS" if self.passed and self.in_budget else "FAIL"

    def line(self):
        return (f"[{self.status}] {self.id:>2} {self.name}: measured={self.measured:.3e} "
                f"tol={self.tolerance:.1e} ({self.seconds:.1f}s of {self.budget:g}s) {self.detail}")


def affine_stack(a: complex, b) -> FlowStack:
    """Two constant couplings realizing Ψ(z) = a·z + b on C²."""
    s = complex(np.log(a))
    return FlowStack([CouplingLayer.constant(s, b[1], parity=0),
                      CouplingLayer.constant(s, b[0], parity=1)])


def check_change_of_variables():
    a, b = 2 + 1j, np.array([0.3 - 0.2j, -0.5 + 0.7j])
    stack = affine_stack(a, b)
    rng = np.random.default_rng(11)
    w = 2.0 * (rng.normal(size=(100, 2)) + 1j * rng.normal(size=(100, 2)))
    expected = base_log_prob((w - b) / a) - 2 * 2 * np.log(abs(a))
    err = float(np.max(np.abs(stack.log_prob(w) - expected)))
    return CheckResult(1, "change_of_variables", err < 1e-9, err, 1e-9)


def check_fisher_pullback():
    stack = FlowStack.init(4, activation=None, seed=3, out_scale=0.1)
    rng = np.random.default_rng(12)
    z = (rng.normal(size=(50, 2)) + 1j * rng.normal(size=(50, 2))) / np.sqrt(2)
    err = fisher_pullback_check(stack, z, step=2e-3)[2]
    err_half = fisher_pullback_check(stack, z, step=1e-3)[2]
    ratio = err / err_half
    ok = err < 1e-4 and ratio >= 3.5
    return CheckResult(2, "fisher_pullback", ok, err, 1e-4, detail=f"halving_ratio={ratio:.2f}")


def check_ricci_oracle():
    grid = Grid.square(200, 0.995)
    fs = metric_from_potential(PotentialGrid.from_function(grid, lambda z: np.log1p(np.abs(z[..., 0]) ** 2)))
    ric = ricci(fs)[..., 0, 0].real
    h = fs.h[..., 0, 0].real
    ok = np.isfinite(ric)
    rel = float(np.max(np.abs(ric[ok] - 2 * h[ok]) / h[ok]))
    flat = metric_from_potential(PotentialGrid.from_function(grid, lambda z: np.abs(z[..., 0]) ** 2))
    flat_err = float(np.nanmax(np.abs(ricci(flat))))
    passed = rel < 1e-3 and flat_err < 1e-8
    return CheckResult(3, "ricci_oracle", passed, rel, 1e-3, detail=f"flat_sup={flat_err:.2e}")


def check_jacobi():
    rng = np.random.default_rng(13)
    A = [rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(3)]

    def path(t):
        m = A[0] + t * A[1] + np.sin(t) * A[2]
        return m @ m.conj().T + np.eye(2)

    errs = []
    for t in np.linspace(-1, 1, 9):
        lhs, rhs = jacobi_check(path, t)
        errs.append(abs(lhs - rhs))
    err = float(max(errs))
    return CheckResult(4, "jacobi_formula", err < 1e-5, err, 1e-5)


def check_nkrf_recursion():
    rng = np.random.default_rng(14)
    logq, logdet = rng.normal(size=(64, 64)), rng.normal(size=(64, 64))
    plain = nkrf_density_step(logq, logdet, 0.0, 0.37)
    exact_nu0 = np.array_equal(plain, logq - logdet)
    cancel = nkrf_density_step(logq, np.zeros_like(logq), 4.0, 0.25)
    exact_cancel = np.array_equal(cancel, np.zeros_like(logq))
    ok = exact_nu0 and exact_cancel
    mism = float(np.max(np.abs(plain - (logq - logdet))) + np.max(np.abs(cancel)))
    return CheckResult(5, "nkrf_recursion", ok, mism, 0.0,
                       detail=f"nu0_exact={exact_nu0} cancel_exact={exact_cancel}")


def check_kl_dissipation():
    grid = TorusGrid(128, 10.0)
    q0 = bump_density(grid, amplitude=4.0, width=1.0)
    p = np.full(grid.shape, 1.0 / grid.length**2)
    steps = kl_dissipation_check(grid, q0, p, 50, 1e-4)
    rel = max(s.rel_error for s in steps)
    lhs_max = max(s.lhs for s in steps)
    ok = rel < 5e-3 and lhs_max <= 1e-6
    return CheckResult(6, "kl_dissipation", ok, rel, 5e-3, detail=f"max_lhs={lhs_max:.3e}")


def check_perelman():
    grid = TorusGrid(64, 2 * np.pi)
    x, y = grid.coords()
    phi0 = 0.3 * np.cos(x) * np.cos(2 * y)
    h0 = 1.0 + laplacian_quarter(phi0, grid)
    stat = perelman_flow(KRFState(grid, phi0, np.log(h0)), 100, 1e-3)
    drift = float(np.max(np.abs(np.diff(stat.F))))
    frozen = all(np.array_equal(ph, phi0) for ph in stat.phis)
    coarse = perelman_flow(KRFState(grid, phi0, 0.0), 50, 1e-2, keep_fields=False).delta_F
    fine = perelman_flow(KRFState(grid, phi0, 0.0), 100, 5e-3, keep_fields=False).delta_F
    consistent = np.sign(coarse) == np.sign(fine) != 0
    ok = drift < 1e-10 and frozen and consistent
    return CheckResult(7, "perelman_lab", bool(ok), drift, 1e-10,
                       detail=f"dF(dt)={coarse:.4e} dF(dt/2)={fine:.4e}")


def check_surgery():
    forced = 3
    stack = FlowStack.init(8, seed=1)
    stack.layers[forced] = CouplingLayer.constant(-30.0, 0.1, parity=forced % 2, clamp=None)
    batch = sample_complex_gaussian(500, 2, seed=3)
    event = singularity_monitor(stack, batch, det_floor=1e-12)
    if event is None:
        return CheckResult(8, "surgery", False, float("nan"), 1e-6, detail="no event")
    mass = float(np.sum(event.rescued.p * event.metric) * event.grid.cell_area)
    ma_min = float(np.min(monge_ampere_det(event.metric, event.phi, event.grid)))
    ok = (event.trigger_layer == forced and np.all(event.rescued.p > 0)
          and abs(mass - 1) < 1e-6 and ma_min > 0)
    return CheckResult(8, "surgery", bool(ok), abs(mass - 1), 1e-6,
                       detail=f"layer={event.trigger_layer} ma_min={ma_min:.3e}")


TRAIN_DATASETS = ("two_moons", "rings", "fractal_tree")
_TRAINED: dict = {}
_TRAIN_LOCK = threading.Lock()


@dataclass
class TrainedRun:
    stack: FlowStack
    initial_nll: float
    final_nll: float
    heldout_nll: float
    curve: np.ndarray  # minibatch NLL per epoch


def trained_run(name: str, n: int = 4000, epochs: int = 2000) -> TrainedRun:
    """Train (once per process) the K=8 discrete flow used by the training checks."""
    key = (name, n, epochs)
    with _TRAIN_LOCK:
        if key not in _TRAINED:
            _TRAINED[key] = _train_run(name, n, epochs)
    return _TRAINED[key]


def _train_run(name, n, epochs):
    tr = make_dataset(name, n, seed=7)
    te = make_dataset(name, n, seed=8)
    mean, scale = standardization(tr)
    tr, te = standardize(tr, mean, scale), standardize(te, mean, scale)
    stack = FlowStack.init(8, seed=7)
    initial = nll_loss(stack, tr)
    curve = train(stack, tr, TrainConfig(epochs=epochs, seed=7))
    return TrainedRun(stack, initial, nll_loss(stack, tr), nll_loss(stack, te), curve)


def smoothed_tail_rise(curve, window: int = 50) -> float:
    """Largest rise of the moving-average curve above its running minimum over the final half,
    relative to that minimum's magnitude."""
    smooth = np.convolve(curve, np.ones(window) / window, mode="valid")
    tail = smooth[len(smooth) // 2:]
    best = np.minimum.accumulate(tail)
    return float(np.max((tail - best) / np.abs(best)))


def check_training(name: str):
    run = trained_run(name)
    ratio = run.final_nll / run.initial_nll
    gap = abs(run.heldout_nll - run.final_nll) / abs(run.final_nll)
    ok = ratio <= 0.7 and gap <= 0.1
    return CheckResult(9, f"training_{name}", bool(ok), ratio, 0.7,
                       detail=f"initial={run.initial_nll:.3f} final={run.final_nll:.3f} "
                              f"heldout={run.heldout_nll:.3f} gap={gap:.3f}")


def check_holomorphic_bias():
    stack = trained_run("fractal_tree").stack
    stats = holomorphy_probe(stack, 5000, seed=0)
    worst = max(s.median_dzbar / s.median_dz for s in stats)
    ok = all(s.median_dzbar < s.median_dz for s in stats)
    return CheckResult(10, "holomorphic_bias", ok, worst, 1.0, detail="max median ratio dzbar/dz")


def check_gradients():
    stack = FlowStack.init(8, seed=2, out_scale=0.3)
    x = 1.5 * sample_complex_gaussian(16, 2, seed=4).points
    params = stack.parameters()
    rng = np.random.default_rng(15)
    errs = []
    for _ in range(100):
        k = int(rng.integers(len(params)))
        owner, attr = params[k]
        flat = int(rng.integers(getattr(owner, attr).size))
        a, f = nll_grad_check(stack, x, (k, flat))
        errs.append(abs(a - f) / max(abs(a), abs(f), 1e-8))
    err = float(max(errs))
    return CheckResult(11, "gradient_check", err < 1e-4, err, 1e-4)


def check_diagnostics_zero():
    grid = Grid.square(101, 2.5)
    z = grid.z()[..., 0]
    p = DensityField(grid, np.exp(-np.abs(z) ** 2) / np.pi, 1.0)
    k = float(np.nanmax(np.abs(kahler_curvature_raw(p))))
    s = float(np.nanmax(np.abs(score_curvature_raw(p))))
    return CheckResult(12, "diagnostics_zero_maps", max(k, s) < 1e-6, max(k, s), 1e-6,
                       detail=f"kahler_sup={k:.2e} score_sup={s:.2e}")


IDENTITY_CHECKS = [check_change_of_variables, check_fisher_pullback, check_ricci_oracle, check_jacobi,
                   check_nkrf_recursion, check_kl_dissipation, check_perelman, check_surgery,
                   check_gradients, check_diagnostics_zero]
TRAINING_CHECKS = [lambda n=n: check_training(n) for n in TRAIN_DATASETS] + [check_holomorphic_bias]
SUITES = {"identities": IDENTITY_CHECKS, "training": TRAINING_CHECKS,
          "all": IDENTITY_CHECKS + TRAINING_CHECKS}


# wall-clock budget per criterion; training runs are budgeted per dataset
BUDGET_SECONDS = {1: 1, 2: 10, 3: 5, 4: 1, 5: 1, 6: 30, 7: 30, 8: 10, 9: 600, 10: 60, 11: 30, 12: 5}


def worker_count():
    env = os.environ.get("KAHLERFLOW_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("KAHLERFLOW_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def timed(check):
    t = time.perf_counter()
    with np.errstate(all="ignore"):
        res = check()
    res.seconds = time.perf_counter() - t
    res.budget = BUDGET_SECONDS[res.id]
    return res


def run_suite(name: str = "identities", workers: int | None = None) -> list[CheckResult]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}")
    checks = SUITES[name]
    workers = workers or worker_count()
    if workers == 1:
        return [timed(c) for c in checks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(timed, checks))


def write_results_csv(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "name", "status", "measured", "tolerance", "seconds", "detail"])
        for r in results:
            w.writerow([r.id, r.name, r.status, repr(r.measured), repr(r.tolerance), f"{r.seconds:.3f}", r.detail])
