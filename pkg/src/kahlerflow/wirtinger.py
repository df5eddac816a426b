"""Wirtinger calculus on dense complex arrays.

States are complex numpy arrays of shape ``(d,)`` or batched ``(n, d)``;
maps ``f`` take and return arrays with the same leading batch shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DET_FLOOR = 1e-300
DEFAULT_STEP = 1e-4


class NonFinite(ArithmeticError):
    """A computation produced NaN or infinity."""


class Singular(ArithmeticError):
    """A determinant fell below the floor."""


class NonSquare(ValueError):
    pass


@dataclass(frozen=True)
class WirtingerJet:
    """Value of a map and its two Wirtinger Jacobian blocks.

    ``d_dz[..., k, j]`` is ∂f_k/∂z_j and ``d_dzbar[..., k, j]`` is ∂f_k/∂z̄_j.
    """

    value: np.ndarray
    d_dz: np.ndarray
    d_dzbar: np.ndarray


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFinite("non-finite value in stencil evaluation")


def wirtinger_fd(f, z, step: float = DEFAULT_STEP) -> WirtingerJet:
    """Central-difference Wirtinger Jacobians of ``f`` at ``z``.

    Uses the 4d stencil z ± step·e_j and z ± i·step·e_j; error is O(step²).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    z = np.asarray(z, dtype=complex)
    value = np.asarray(f(z), dtype=complex)
    _check_finite(value)
    d = z.shape[-1]
    m = value.shape[-1]
    d_dz = np.empty(value.shape[:-1] + (m, d), dtype=complex)
    d_dzbar = np.empty_like(d_dz)
    for j in range(d):
        e = np.zeros(d, dtype=complex)
        e[j] = step
        fxp, fxm = np.asarray(f(z + e)), np.asarray(f(z - e))
        fyp, fym = np.asarray(f(z + 1j * e)), np.asarray(f(z - 1j * e))
        _check_finite(fxp, fxm, fyp, fym)
        dfx = (fxp - fxm) / (2 * step)
        dfy = (fyp - fym) / (2 * step)
        d_dz[..., :, j] = 0.5 * (dfx - 1j * dfy)
        d_dzbar[..., :, j] = 0.5 * (dfx + 1j * dfy)
    return WirtingerJet(value, d_dz, d_dzbar)


def wirtinger_hessian_fd(f, z, step: float = 1e-3) -> np.ndarray:
    """Mixed Wirtinger Hessian ``H[..., i, j] = ∂_i ∂_{j̄} f`` of a real scalar ``f``.

    Built from real second differences via
    ∂_i∂_{j̄} = ¼[(∂x_i∂x_j + ∂y_i∂y_j) + i(∂x_i∂y_j − ∂y_i∂x_j)].
    """
    z = np.asarray(z, dtype=complex)
    d = z.shape[-1]
    f0 = np.asarray(f(z), dtype=float)

    def unit(k):
        # real coordinate k: 2j -> x_j, 2j+1 -> y_j
        e = np.zeros(d, dtype=complex)
        e[k // 2] = step if k % 2 == 0 else 1j * step
        return e

    second = np.empty(f0.shape + (2 * d, 2 * d))
    for a in range(2 * d):
        ea = unit(a)
        fp, fm = f(z + ea), f(z - ea)
        second[..., a, a] = (fp - 2 * f0 + fm) / step**2
        for b in range(a + 1, 2 * d):
            eb = unit(b)
            mixed = (f(z + ea + eb) - f(z + ea - eb) - f(z - ea + eb) + f(z - ea - eb))
            second[..., a, b] = second[..., b, a] = mixed / (4 * step**2)
    _check_finite(second)
    xx = second[..., 0::2, 0::2]
    yy = second[..., 1::2, 1::2]
    xy = second[..., 0::2, 1::2]  # ∂x_i ∂y_j
    yx = second[..., 1::2, 0::2]  # ∂y_i ∂x_j
    return 0.25 * ((xx + yy) + 1j * (xy - yx))


def det_c(m) -> complex:
    """Complex determinant (LAPACK LU with partial pivoting)."""
    m = np.asarray(m, dtype=complex)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise NonSquare(f"expected a square matrix, got shape {m.shape}")
    return np.linalg.det(m)


def log_abs_det_sq(m) -> float:
    """``log |det_C m|²``, the real log-Jacobian of a holomorphic map."""
    det = np.abs(det_c(m))
    if np.any(det < DET_FLOOR):
        raise Singular("|det| below floor")
    return 2.0 * np.log(det)


def is_hermitian_pd(m, tol: float = 1e-8) -> bool:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    if np.max(np.abs(m - m.conj().T), initial=0.0) > tol:
        return False
    try:
        np.linalg.cholesky(0.5 * (m + m.conj().T))
    except np.linalg.LinAlgError:
        return False
    return True


def hermitian_pd_mask(h, tol: float = 1e-8) -> np.ndarray:
    """Vectorized :func:`is_hermitian_pd` over fields ``h[..., d, d]``."""
    h = np.asarray(h, dtype=complex)
    finite = np.all(np.isfinite(h), axis=(-1, -2))
    herm = np.max(np.abs(h - np.swapaxes(h.conj(), -1, -2)), axis=(-1, -2)) <= tol
    ok = finite & herm
    hs = np.where(ok[..., None, None], 0.5 * (h + np.swapaxes(h.conj(), -1, -2)), 0.0)
    # Sylvester: leading principal minors all positive
    for k in range(1, h.shape[-1] + 1):
        minor = np.linalg.det(hs[..., :k, :k]).real
        ok &= minor > 0
    return ok
