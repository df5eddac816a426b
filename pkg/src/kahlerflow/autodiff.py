"""Minimal vectorized reverse-mode automatic differentiation.

Every operation records a node on the active :class:`Tape`; the tape is an
append-only list so reversing it gives a valid topological order for the
backward sweep. Only real arrays are recorded: complex arithmetic is lowered
to (re, im) pairs by the callers.

The elementwise helpers (:func:`exp`, :func:`log`, ...) accept plain numpy
arrays too, which lets the flow layers share one code path between fast
numpy evaluation and taped evaluation for training.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_ACTIVE: list["Tape"] = []


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self):
        self.nodes: list[tuple[str, "Tensor", tuple, object]] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def record(self, op, out, parents, vjp):
        out.index = len(self.nodes)
        self.nodes.append((op, out, parents, vjp))

    def backward(self, root: "Tensor"):
        """Accumulate d(root)/d(node) into ``.grad`` of every recorded node."""
        if np.size(root.value) != 1:
            raise ValueError("backward() needs a scalar root")
        for _, node, _, _ in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.value)
        for _, node, parents, vjp in reversed(self.nodes[: root.index + 1]):
            if node.grad is None or vjp is None:
                continue
            for parent, g in zip(parents, vjp(node.grad)):
                if g is None or not isinstance(parent, Tensor):
                    continue
                g = _unbroadcast(g, parent.value.shape)
                parent.grad = g if parent.grad is None else parent.grad + g


def _tape() -> Tape:
    if not _ACTIVE:
        raise RuntimeError("no active Tape; wrap the computation in `with Tape():`")
    return _ACTIVE[-1]


def _unbroadcast(g, shape):
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _value(x):
    return x.value if isinstance(x, Tensor) else x


class Tensor:
    """A real array tracked on the active tape."""

    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, value, *, _op="leaf", _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.index = -1
        _tape().record(_op, self, _parents, _vjp)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return Tensor(self.value.T, _op="transpose", _parents=(self,),
                      _vjp=lambda g: (g.T,))

    def __add__(self, other):
        return _binary("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __neg__(self):
        return Tensor(-self.value, _op="neg", _parents=(self,), _vjp=lambda g: (-g,))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        shape = self.value.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, key, g)
            return (out,)

        return Tensor(self.value[key], _op="getitem", _parents=(self,), _vjp=vjp)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)


def _binary(op, a, b):
    av, bv = _value(a), _value(b)
    if op == "add":
        out, vjp = av + bv, lambda g: (g, g)
    elif op == "sub":
        out, vjp = av - bv, lambda g: (g, -g)
    elif op == "mul":
        out, vjp = av * bv, lambda g: (g * bv, g * av)
    elif op == "div":
        out = av / bv
        vjp = lambda g: (g / bv, -g * av / (bv * bv))  # noqa: E731
    else:  # pragma: no cover
        raise ValueError(op)
    return Tensor(out, _op=op, _parents=(a, b), _vjp=vjp)


def matmul(a, b):
    av, bv = _value(a), _value(b)
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return av @ bv
    return Tensor(av @ bv, _op="matmul", _parents=(a, b),
                  _vjp=lambda g: (g @ bv.T, av.T @ g))


def tsum(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor(np.sum(x.value, axis=axis, keepdims=keepdims), _op="sum",
                  _parents=(x,), _vjp=vjp)


def concat(parts, axis=0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=axis)
    values = [np.asarray(_value(p), dtype=float) for p in parts]
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
    return Tensor(np.concatenate(values, axis=axis), _op="concat", _parents=tuple(parts),
                  _vjp=lambda g: tuple(np.split(g, bounds, axis=axis)))


def _unary(name, fn, dfn):
    """Build an elementwise primitive; ``dfn(x, y)`` is dy/dx."""

    def apply(x):
        if not isinstance(x, Tensor):
            return fn(x)
        y = fn(x.value)
        return Tensor(y, _op=name, _parents=(x,), _vjp=lambda g: (g * dfn(x.value, y),))

    apply.__name__ = name
    return apply


def _ncdf(x):
    return 0.5 * (1.0 + erf(x * _SQRT1_2))


def _npdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


exp = _unary("exp", np.exp, lambda x, y: y)
log = _unary("log", np.log, lambda x, y: 1.0 / x)
sin = _unary("sin", np.sin, lambda x, y: np.cos(x))
cos = _unary("cos", np.cos, lambda x, y: -np.sin(x))
square = _unary("square", np.square, lambda x, y: 2.0 * x)
# d sqrt at 0 is unbounded; the cap keeps |z| -> 0 paths finite
sqrt = _unary("sqrt", np.sqrt, lambda x, y: 0.5 / np.maximum(y, 1e-150))
ncdf = _unary("ncdf", _ncdf, lambda x, y: _npdf(x))
gelu = _unary("gelu", lambda x: x * _ncdf(x), lambda x, y: _ncdf(x) + x * _npdf(x))


def clip(x, lo, hi):
    if not isinstance(x, Tensor):
        return np.clip(x, lo, hi)
    inside = (x.value >= lo) & (x.value <= hi)
    return Tensor(np.clip(x.value, lo, hi), _op="clip", _parents=(x,),
                  _vjp=lambda g: (g * inside,))


@contextmanager
def traced(params):
    """Swap ``(owner, attr)`` parameter arrays for tape leaves.

    Yields ``(tape, leaves)``; the original arrays are restored on exit.
    """
    saved = [getattr(o, a) for o, a in params]
    with Tape() as tape:
        leaves = [Tensor(v) for v in saved]
        for (o, a), leaf in zip(params, leaves):
            setattr(o, a, leaf)
        try:
            yield tape, leaves
        finally:
            for (o, a), v in zip(params, saved):
                setattr(o, a, v)


def value_and_grad(fn, params):
    """Evaluate scalar ``fn()`` and its gradient w.r.t. each ``(owner, attr)``."""
    with traced(params) as (tape, leaves):
        out = fn()
        if not isinstance(out, Tensor):
            return float(out), [np.zeros_like(_value(l)) for l in leaves]
        tape.backward(out)
        grads = [np.zeros_like(l.value) if l.grad is None else np.array(l.grad)
                 for l in leaves]
        return float(out.value), grads
