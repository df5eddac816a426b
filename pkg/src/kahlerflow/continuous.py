"""Complex continuous normalizing flow with exact-trace divergence and RK4."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from kahlerflow import autodiff as ad
from kahlerflow.datasets import Dataset, sample_complex_gaussian
from kahlerflow.flow import LOG_PI, base_log_prob
from kahlerflow.layers import MLP
from kahlerflow.wirtinger import NonFinite

FD_STEP = 1e-4


class VelocityNet:
    """v(z, t) on C^d with t fed in as an extra complex input t + 0i."""

    def __init__(self, net: MLP, d: int = 2):
        self.net = net
        self.d = d

    @classmethod
    def init(cls, d=2, hidden=16, seed=0, out_scale=0.1):
        rng = np.random.default_rng(seed)
        return cls(MLP.init([d + 1, hidden, hidden, d], rng, "cgelu", out_scale), d)

    def parameters(self):
        return self.net.parameters()

    def pairs(self, re, im, t):
        """(n, d) real/imag matrices -> velocity real/imag matrices."""
        n = re.shape[0]
        tcol = np.full((n, 1), float(t))
        return self.net(ad.concat([re, tcol], axis=1), ad.concat([im, np.zeros((n, 1))], axis=1))

    def __call__(self, z, t):
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        re, im = self.pairs(z.real, z.imag, t)
        return re + 1j * im

    def to_dict(self):
        return {"d": self.d, "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(MLP.from_dict(d["net"]), d.get("d", 2))


def _as_pairs_fn(v):
    if isinstance(v, VelocityNet):
        return v.pairs

    def pairs(re, im, t):
        out = np.asarray(v(re + 1j * im, t), dtype=complex)
        out = np.broadcast_to(out, re.shape)
        return out.real, out.imag

    return pairs


def _drift(vp, re, im, t, step):
    """Velocity and realified divergence (trace of the 2d×2d Jacobian by central differences)."""
    n, d = re.shape
    offs_re, offs_im = [np.zeros((n, d))], [np.zeros((n, d))]
    for k in range(2 * d):
        for sign in (1.0, -1.0):
            o = np.zeros((n, d))
            o[:, k // 2] = sign * step
            offs_re.append(o if k % 2 == 0 else np.zeros((n, d)))
            offs_im.append(np.zeros((n, d)) if k % 2 == 0 else o)
    m = len(offs_re)
    big_re = ad.concat([re] * m, axis=0) + np.concatenate(offs_re)
    big_im = ad.concat([im] * m, axis=0) + np.concatenate(offs_im)
    out_re, out_im = vp(big_re, big_im, t)
    div = 0.0
    for k in range(2 * d):
        comp = out_re if k % 2 == 0 else out_im
        plus = comp[(1 + 2 * k) * n:(2 + 2 * k) * n, k // 2]
        minus = comp[(2 + 2 * k) * n:(3 + 2 * k) * n, k // 2]
        div = div + (plus - minus) * (1.0 / (2 * step))
    return out_re[:n], out_im[:n], div


def divergence_exact(v, z, t, step=FD_STEP):
    """Divergence of the realified field on R^{2d} at ``z`` (complex (d,) or (n, d))."""
    z = np.asarray(z, dtype=complex)
    zz = np.atleast_2d(z)
    _, _, div = _drift(_as_pairs_fn(v), zz.real, zz.imag, t, step)
    div = np.asarray(div, dtype=float) * np.ones(len(zz))
    if not np.all(np.isfinite(div)):
        raise NonFinite("divergence is not finite")
    return float(div[0]) if z.ndim == 1 else div


@dataclass
class AugmentedState:
    z: np.ndarray
    logq: np.ndarray
    t: float


def rk4_pairs(vp, re, im, logq, t0, t1, steps, step=FD_STEP, on_node=None):
    """Fixed-step RK4 on (z, logq) with dlogq/dt = -div v. Works on tape tensors too."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h = (t1 - t0) / steps

    def f(r, i, t):
        vr, vi, div = _drift(vp, r, i, t, step)
        return vr, vi, -div

    t = t0
    for n in range(steps):
        if on_node is not None:
            on_node(n, t, re, im)
        k1 = f(re, im, t)
        k2 = f(re + 0.5 * h * k1[0], im + 0.5 * h * k1[1], t + 0.5 * h)
        k3 = f(re + 0.5 * h * k2[0], im + 0.5 * h * k2[1], t + 0.5 * h)
        k4 = f(re + h * k3[0], im + h * k3[1], t + h)
        re = re + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        im = im + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        logq = logq + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        t = t0 + (n + 1) * h
        bad = [np.any(~np.isfinite(ad._value(a))) for a in (re, im, logq)]
        if any(bad):
            raise NonFinite(f"trajectory became non-finite at step {n + 1}")
    if on_node is not None:
        on_node(steps, t, re, im)
    return re, im, logq


def integrate(v, z0, t0=0.0, t1=1.0, steps=64, logq0=None, step=FD_STEP) -> AugmentedState:
    """Integrate the state and its log-density from t0 to t1.

    ``logq0`` defaults to the base log-density at ``z0``.
    """
    z0 = np.asarray(z0, dtype=complex)
    zz = np.atleast_2d(z0)
    lq = base_log_prob(zz) if logq0 is None else np.broadcast_to(np.asarray(logq0, float), len(zz)).copy()
    with np.errstate(over="ignore", invalid="ignore"):
        re, im, lq = rk4_pairs(_as_pairs_fn(v), zz.real, zz.imag, lq, t0, t1, steps, step)
    z = re + 1j * im
    if z0.ndim == 1:
        return AugmentedState(z[0], float(np.asarray(lq)[0]), t1)
    return AugmentedState(z, np.asarray(lq), t1)


def trajectory(v, z0, t0=0.0, t1=1.0, steps=64):
    """(t, z, logq) at every RK4 node, starting from the base log-density."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=complex))
    vp = _as_pairs_fn(v)
    h = (t1 - t0) / steps
    re, im, lq = z0.real, z0.imag, base_log_prob(z0)
    rows = [(t0, z0, lq)]
    for n in range(steps):
        re, im, lq = rk4_pairs(vp, re, im, lq, t0 + n * h, t0 + (n + 1) * h, 1)
        rows.append((t0 + (n + 1) * h, re + 1j * im, lq))
    return rows


def kinetic_energy(v, z0, t0=0.0, t1=1.0, steps=64):
    """∫|v(z(t), t)|² dt along the RK4 trajectory, trapezoid rule on the step nodes."""
    z0 = np.asarray(z0, dtype=complex)
    zz = np.atleast_2d(z0)
    vp = _as_pairs_fn(v)
    speeds = []

    def on_node(n, t, re, im):
        vr, vi = vp(re, im, t)
        speeds.append(np.sum(np.asarray(vr) ** 2 + np.asarray(vi) ** 2, axis=1))

    rk4_pairs(vp, zz.real, zz.imag, np.zeros(len(zz)), t0, t1, steps, on_node=on_node)
    s = np.array(speeds)
    h = (t1 - t0) / steps
    energy = h * (0.5 * s[0] + s[1:-1].sum(axis=0) + 0.5 * s[-1])
    return float(energy[0]) if z0.ndim == 1 else energy


class ContinuousFlow:
    """Base -> data map given by integrating a :class:`VelocityNet` over [t0, t1]."""

    def __init__(self, velocity: VelocityNet, t0=0.0, t1=1.0, steps=64):
        self.velocity = velocity
        self.t0, self.t1, self.steps = t0, t1, steps
        self.d = velocity.d

    @classmethod
    def init(cls, d=2, hidden=16, seed=0, steps=64):
        return cls(VelocityNet.init(d, hidden, seed), steps=steps)

    def parameters(self):
        return self.velocity.parameters()

    def __call__(self, z0):
        return integrate(self.velocity, z0, self.t0, self.t1, self.steps, logq0=0.0).z

    def inverse(self, w):
        return integrate(self.velocity, w, self.t1, self.t0, self.steps, logq0=0.0).z

    def log_prob(self, w):
        back = integrate(self.velocity, w, self.t1, self.t0, self.steps, logq0=0.0)
        return base_log_prob(back.z) - back.logq

    def log_prob_pairs(self, coords):
        re = ad.concat([c[0] for c in coords], axis=1)
        im = ad.concat([c[1] for c in coords], axis=1)
        n = re.shape[0]
        re, im, acc = rk4_pairs(self.velocity.pairs, re, im, np.zeros(n), self.t1, self.t0, self.steps)
        sq = ad.tsum(re * re + im * im, axis=1)
        return -self.d * LOG_PI - sq - acc

    def sample(self, n, seed=0) -> Dataset:
        base = sample_complex_gaussian(n, self.d, seed)
        return Dataset(self(base.points), "flow_sample", seed)

    def to_dict(self):
        return {"kind": "continuous", "d": self.d, "base": "complex_unit_gaussian",
                "t0": self.t0, "t1": self.t1, "steps": self.steps,
                "velocity": self.velocity.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(VelocityNet.from_dict(d["velocity"]), d.get("t0", 0.0), d.get("t1", 1.0), d.get("steps", 64))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


__all__ = ["VelocityNet", "ContinuousFlow", "AugmentedState", "divergence_exact",
           "integrate", "kinetic_energy", "trajectory"]
