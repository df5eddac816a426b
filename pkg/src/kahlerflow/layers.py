"""Complex linear layers, the modulus-gated GELU and the affine coupling layer.

All layer math runs on (re, im) pairs of real arrays so the same code serves
numpy evaluation and taped training (see :mod:`kahlerflow.autodiff`).
Coordinates are kept as separate ``(n, 1)`` columns.
"""

from __future__ import annotations

import numpy as np

from kahlerflow import autodiff as ad
from kahlerflow.wirtinger import NonFinite

S_CLAMP = 10.0


def cgelu(re, im):
    """GELU(|z|)·z/|z|, written as z·Φ(|z|) so z = 0 maps to 0 without a branch."""
    r = ad.sqrt(re * re + im * im)
    gate = ad.ncdf(r)
    return re * gate, im * gate


def cgelu_complex(z):
    z = np.asarray(z, dtype=complex)
    re, im = cgelu(z.real, z.imag)
    return re + 1j * im


class ComplexLinear:
    """(A + iB)(z_r + i z_i) + bias with real weight matrices of shape (out, in)."""

    def __init__(self, A, B, bias_re, bias_im):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.bias_re = np.asarray(bias_re, dtype=float)
        self.bias_im = np.asarray(bias_im, dtype=float)
        if self.A.shape != self.B.shape:
            raise ValueError("A and B must share a shape")
        if self.bias_re.shape != (self.A.shape[0],) or self.bias_im.shape != self.bias_re.shape:
            raise ValueError("bias shape must be (out,)")

    @classmethod
    def init(cls, n_in, n_out, rng, scale=1.0):
        std = scale / np.sqrt(2.0 * n_in)
        return cls(std * rng.standard_normal((n_out, n_in)),
                   std * rng.standard_normal((n_out, n_in)),
                   np.zeros(n_out), np.zeros(n_out))

    @classmethod
    def zeros(cls, n_in, n_out):
        return cls(np.zeros((n_out, n_in)), np.zeros((n_out, n_in)), np.zeros(n_out), np.zeros(n_out))

    @property
    def shape(self):
        return self.A.shape

    def __call__(self, re, im):
        A, B = self.A, self.B
        out_re = re @ A.T - im @ B.T + self.bias_re
        out_im = im @ A.T + re @ B.T + self.bias_im
        return out_re, out_im

    def parameters(self):
        return [(self, "A"), (self, "B"), (self, "bias_re"), (self, "bias_im")]

    def to_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("A", "B", "bias_re", "bias_im")}

    @classmethod
    def from_dict(cls, d):
        return cls(d["A"], d["B"], d["bias_re"], d["bias_im"])


class MLP:
    """ComplexLinear layers with cgelu between them (or nothing, for holomorphic nets)."""

    def __init__(self, linears, activation="cgelu"):
        if activation not in ("cgelu", None):
            raise ValueError(f"unknown activation {activation!r}")
        self.linears = list(linears)
        self.activation = activation

    @classmethod
    def init(cls, sizes, rng, activation="cgelu", out_scale=1.0):
        linears = [ComplexLinear.init(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        linears[-1].A *= out_scale
        linears[-1].B *= out_scale
        return cls(linears, activation)

    def __call__(self, re, im):
        for k, lin in enumerate(self.linears):
            re, im = lin(re, im)
            if self.activation == "cgelu" and k < len(self.linears) - 1:
                re, im = cgelu(re, im)
        return re, im

    def parameters(self):
        return [p for lin in self.linears for p in lin.parameters()]

    def to_dict(self):
        return {"activation": self.activation, "layers": [lin.to_dict() for lin in self.linears]}

    @classmethod
    def from_dict(cls, d):
        return cls([ComplexLinear.from_dict(x) for x in d["layers"]], d.get("activation", "cgelu"))


def _cexp(re, im):
    mag = ad.exp(re)
    return mag * ad.cos(im), mag * ad.sin(im)


class CouplingLayer:
    """Affine coupling on C²: the free coordinate becomes z_free·exp(s(z_cond)) + t(z_cond).

    ``parity`` is the index of the conditioning coordinate. ``clamp`` bounds
    Re s before exponentiation; ``None`` disables it.
    """

    def __init__(self, s_net: MLP, t_net: MLP, parity: int, clamp: float | None = S_CLAMP):
        if parity not in (0, 1):
            raise ValueError("parity must be 0 or 1")
        self.s_net = s_net
        self.t_net = t_net
        self.parity = parity
        self.clamp = clamp

    @classmethod
    def init(cls, parity, rng, hidden=8, activation="cgelu", out_scale=0.01, clamp=S_CLAMP):
        sizes = [1, hidden, 1]
        return cls(MLP.init(sizes, rng, activation, out_scale),
                   MLP.init(sizes, rng, activation, out_scale), parity, clamp)

    @classmethod
    def constant(cls, s=0.0, t=0.0, parity=0, hidden=8, clamp=S_CLAMP):
        """Layer whose s and t nets output constants (handy for closed-form checks)."""
        def net(c):
            first = ComplexLinear.zeros(1, hidden)
            last = ComplexLinear.zeros(hidden, 1)
            last.bias_re[:] = np.real(c)
            last.bias_im[:] = np.imag(c)
            return MLP([first, last])
        return cls(net(s), net(t), parity, clamp)

    def parameters(self):
        return self.s_net.parameters() + self.t_net.parameters()

    def _st(self, cre, cim):
        s_re, s_im = self.s_net(cre, cim)
        if self.clamp is not None:
            s_re = ad.clip(s_re, -self.clamp, self.clamp)
        t_re, t_im = self.t_net(cre, cim)
        return s_re, s_im, t_re, t_im

    def forward_pairs(self, coords):
        """``coords`` is a list of two (re, im) column pairs; returns (coords', logdet)."""
        cond, free = coords[self.parity], coords[1 - self.parity]
        s_re, s_im, t_re, t_im = self._st(*cond)
        e_re, e_im = _cexp(s_re, s_im)
        f_re, f_im = free
        new_free = (f_re * e_re - f_im * e_im + t_re, f_re * e_im + f_im * e_re + t_im)
        out = [None, None]
        out[self.parity] = cond
        out[1 - self.parity] = new_free
        return out, 2.0 * s_re

    def inverse_pairs(self, coords):
        cond, free = coords[self.parity], coords[1 - self.parity]
        s_re, s_im, t_re, t_im = self._st(*cond)
        e_re, e_im = _cexp(-s_re, -s_im)
        d_re, d_im = free[0] - t_re, free[1] - t_im
        new_free = (d_re * e_re - d_im * e_im, d_re * e_im + d_im * e_re)
        out = [None, None]
        out[self.parity] = cond
        out[1 - self.parity] = new_free
        return out, -2.0 * s_re

    def forward(self, z):
        """z: complex (n, 2) or (2,). Returns (z', logdet) with logdet = log|det_C J|²."""
        zo, ld = _apply(self.forward_pairs, z)
        if not (np.all(np.isfinite(zo)) and np.all(np.isfinite(ld))):
            raise NonFinite("coupling forward overflowed")
        return zo, ld

    def inverse(self, w):
        zo, ld = _apply(self.inverse_pairs, w)
        if not (np.all(np.isfinite(zo)) and np.all(np.isfinite(ld))):
            raise NonFinite("coupling inverse overflowed")
        return zo, ld

    def __call__(self, z):
        return self.forward(z)[0]

    def to_dict(self):
        return {"parity": self.parity, "clamp": self.clamp,
                "s_net": self.s_net.to_dict(), "t_net": self.t_net.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(MLP.from_dict(d["s_net"]), MLP.from_dict(d["t_net"]), d["parity"], d.get("clamp", S_CLAMP))


def to_pairs(z):
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    return [(z[:, k:k + 1].real.copy(), z[:, k:k + 1].imag.copy()) for k in range(z.shape[1])]


def from_pairs(coords):
    return np.concatenate([re + 1j * im for re, im in coords], axis=1)


def _apply(fn, z):
    z = np.asarray(z, dtype=complex)
    single = z.ndim == 1
    with np.errstate(over="ignore", invalid="ignore"):
        coords, ld = fn(to_pairs(z))
    zo, ld = from_pairs(coords), np.asarray(ld)[:, 0]
    if single:
        return zo[0], float(ld[0])
    return zo, ld
