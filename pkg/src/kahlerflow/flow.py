"""Discrete complex normalizing flow: a stack of coupling layers over C²."""

from __future__ import annotations

import json

import numpy as np

from kahlerflow import autodiff as ad
from kahlerflow.datasets import Dataset, sample_complex_gaussian
from kahlerflow.layers import CouplingLayer, from_pairs, to_pairs
from kahlerflow.wirtinger import NonFinite, Singular

LOG_PI = float(np.log(np.pi))
BASE = "complex_unit_gaussian"


def base_log_prob(z) -> np.ndarray:
    """log π^{-d} exp(-z†z)."""
    z = np.asarray(z, dtype=complex)
    return -z.shape[-1] * LOG_PI - np.sum(np.abs(z) ** 2, axis=-1)


def base_log_prob_pairs(coords):
    total = 0.0
    for re, im in coords:
        total = total + re * re + im * im
    return -len(coords) * LOG_PI - total


class FlowStack:
    """Ordered coupling layers; ``forward`` maps base -> data."""

    def __init__(self, layers, d=2):
        if not layers:
            raise ValueError("a flow needs at least one layer")
        self.layers = list(layers)
        self.d = d

    @classmethod
    def init(cls, n_layers=8, hidden=8, activation="cgelu", seed=0, out_scale=0.01, clamp=10.0):
        rng = np.random.default_rng(seed)
        layers = [CouplingLayer.init(k % 2, rng, hidden, activation, out_scale, clamp)
                  for k in range(n_layers)]
        return cls(layers)

    def __len__(self):
        return len(self.layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def push_forward(self, z0):
        """Returns (z_K, Σ_k log|det_C ∇Ψ_k|²)."""
        z = np.asarray(z0, dtype=complex)
        total = np.zeros(z.shape[:-1]) if z.ndim > 1 else 0.0
        for layer in self.layers:
            z, ld = layer.forward(z)
            total = total + ld
        return z, total

    def push_to(self, z0, k):
        """Input of layer ``k`` (0-based) for base points ``z0``."""
        z = np.asarray(z0, dtype=complex)
        for layer in self.layers[:k]:
            z, _ = layer.forward(z)
        return z

    def pull_back(self, w):
        """Returns (z_0, Σ inverse logdets) for data points ``w``."""
        z = np.asarray(w, dtype=complex)
        total = np.zeros(z.shape[:-1]) if z.ndim > 1 else 0.0
        for layer in reversed(self.layers):
            try:
                z, ld = layer.inverse(z)
            except NonFinite as exc:
                raise Singular(str(exc)) from exc
            total = total + ld
        return z, total

    def __call__(self, z0):
        return self.push_forward(z0)[0]

    def inverse(self, w):
        return self.pull_back(w)[0]

    def log_prob(self, w):
        z, inv_logdet = self.pull_back(w)
        return base_log_prob(z) + inv_logdet

    def log_prob_pairs(self, coords):
        """Taped-friendly log-density of data columns (used for training)."""
        total = 0.0
        for layer in reversed(self.layers):
            coords, ld = layer.inverse_pairs(coords)
            total = total + ld
        return base_log_prob_pairs(coords) + total

    def sample(self, n, seed=0) -> Dataset:
        base = sample_complex_gaussian(n, self.d, seed)
        return Dataset(self(base.points), "flow_sample", seed)

    def to_dict(self):
        return {"kind": "discrete", "K": len(self.layers), "d": self.d, "base": BASE,
                "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d):
        if d.get("base", BASE) != BASE:
            raise ValueError(f"unsupported base {d['base']!r}")
        layers = [CouplingLayer.from_dict(x) for x in d["layers"]]
        if "K" in d and d["K"] != len(layers):
            raise ValueError("checkpoint K does not match its layer list")
        return cls(layers, d.get("d", 2))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def nll_pairs(model, x):
    """Mean negative log-likelihood of complex points ``x`` (n, d), tape-aware."""
    lp = model.log_prob_pairs(to_pairs(x))
    return -ad.tsum(lp) * (1.0 / len(x))


__all__ = ["FlowStack", "base_log_prob", "nll_pairs", "from_pairs", "to_pairs"]
