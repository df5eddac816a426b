"""Maximum-likelihood training of complex flows with Adam on realified parameters."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from kahlerflow import autodiff as ad
from kahlerflow.datasets import Dataset
from kahlerflow.flow import nll_pairs

log = logging.getLogger(__name__)


class Diverged(ArithmeticError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 2000
    batch: int = 256
    seed: int = 7
    clip_norm: float = 10.0

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out


def _points(data):
    return data.points if isinstance(data, Dataset) else np.asarray(data, dtype=complex)


def nll_loss(model, batch) -> float:
    """Mean -log q(w) over the batch."""
    x = _points(batch)
    if len(x) == 0:
        raise ValueError("empty batch")
    return float(-np.mean(model.log_prob(x)))


def loss_and_grad(model, x):
    return ad.value_and_grad(lambda: nll_pairs(model, x), model.parameters())


def grad_check(loss_fn, params, index, step=1e-5):
    """Reverse-mode vs central-difference derivative for one scalar parameter.

    ``params`` is a list of ``(owner, attr)`` arrays; ``index`` is
    ``(param_number, flat_index)``. ``loss_fn()`` must build its value from
    the current attributes.
    """
    k, flat = index
    _, grads = ad.value_and_grad(loss_fn, params)
    owner, attr = params[k]
    arr = getattr(owner, attr)
    orig = arr.flat[flat]
    try:
        arr.flat[flat] = orig + step
        up = float(ad._value(loss_fn()))
        arr.flat[flat] = orig - step
        down = float(ad._value(loss_fn()))
    finally:
        arr.flat[flat] = orig
    return float(grads[k].flat[flat]), (up - down) / (2 * step)


def nll_grad_check(model, point, index, step=1e-5):
    x = np.atleast_2d(_points(point))
    return grad_check(lambda: nll_pairs(model, x), model.parameters(), index, step)


class Adam:
    def __init__(self, shapes, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        b1, b2 = self.betas
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            a -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


def train(model, data, cfg: TrainConfig | None = None, callback=None):
    """Fit ``model`` in place; returns the per-epoch minibatch NLL curve.

    One epoch is one Adam step on a minibatch of ``cfg.batch`` points drawn
    without replacement from a reshuffled pass over ``data``.
    """
    cfg = cfg or TrainConfig()
    x = _points(data)
    n = len(x)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    arrays = [getattr(o, a) for o, a in params]
    opt = Adam([a.shape for a in arrays], cfg.lr, cfg.betas, cfg.eps)
    bs = min(cfg.batch, n)
    order, cursor = rng.permutation(n), 0
    curve = []
    for epoch in range(cfg.epochs):
        if cursor + bs > n:
            order, cursor = rng.permutation(n), 0
        idx = order[cursor:cursor + bs]
        cursor += bs
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_grad(model, x[idx])
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise Diverged(f"non-finite loss at epoch {epoch}")
        grads, _ = clip_global_norm(grads, cfg.clip_norm)
        if cfg.lr > 0:
            opt.step(arrays, grads)
        curve.append(loss)
        if callback is not None:
            callback(epoch, loss)
        if epoch % 500 == 0:
            log.debug("epoch %d nll %.4f", epoch, loss)
    return np.array(curve)
