"""Planar toy datasets lifted to C², and the complex unit Gaussian sampler."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

RING_CENTERS = np.array([(-2.2, 0.5), (0.0, 0.5), (2.2, 0.5), (-1.1, -0.5), (1.1, -0.5)])
TREE_ANGLE = np.pi / 5
TREE_DECAY = 0.7


@dataclass
class Dataset:
    """Complex points of shape ``(n, d)`` plus provenance."""

    points: np.ndarray
    name: str
    seed: int
    labels: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.points)

    def realified(self) -> np.ndarray:
        return realify(self.points)


def realify(z) -> np.ndarray:
    """(n, d) complex -> (n, 2d) real with columns re1, im1, re2, im2, ..."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def complexify(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[..., 0::2] + 1j * x[..., 1::2]


def embed_planar(xy) -> np.ndarray:
    """Lift planar points to C² as z1 = x + iy, z2 = y + ix."""
    x, y = xy[:, 0], xy[:, 1]
    return np.stack([x + 1j * y, y + 1j * x], axis=1)


def sample_two_moons(n: int, noise: float = 0.05, seed: int = 0) -> Dataset:
    if n <= 0 or noise < 0:
        raise ValueError("need n > 0 and noise >= 0")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    theta = rng.uniform(0.0, np.pi, size=n)
    upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
    xy = np.where(labels[:, None] == 0, upper, lower)
    xy = xy + noise * rng.standard_normal((n, 2))
    return Dataset(embed_planar(xy), "two_moons", seed, labels)


def sample_olympic_rings(n: int, noise: float = 0.05, seed: int = 0) -> Dataset:
    if n <= 0 or noise < 0:
        raise ValueError("need n > 0 and noise >= 0")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, len(RING_CENTERS), size=n)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    xy = RING_CENTERS[labels] + np.stack([np.cos(theta), np.sin(theta)], axis=1)
    xy = xy + noise * rng.standard_normal((n, 2))
    return Dataset(embed_planar(xy), "rings", seed, labels)


def tree_segments(depth: int) -> np.ndarray:
    """Segments ``(2**(depth+1) - 1, 2, 2)`` of the branching tree, root first."""
    if not 1 <= depth <= 12:
        raise ValueError("depth must lie in [1, 12]")
    segments = []
    frontier = [(np.zeros(2), np.pi / 2, 1.0)]
    for _ in range(depth + 1):
        nxt = []
        for start, angle, length in frontier:
            end = start + length * np.array([np.cos(angle), np.sin(angle)])
            segments.append((start, end))
            for turn in (TREE_ANGLE, -TREE_ANGLE):
                nxt.append((end, angle + turn, length * TREE_DECAY))
        frontier = nxt
    return np.array(segments)


def sample_fractal_tree(n: int, depth: int = 6, noise: float = 0.02, seed: int = 0) -> Dataset:
    """Uniform-by-length samples on the branching tree.

    ``depth=1`` is the bare root segment; segment count is ``2**(depth+1) - 1``
    in the underlying :func:`tree_segments` table, of which levels ``< depth``
    are sampled.
    """
    if n <= 0 or noise < 0:
        raise ValueError("need n > 0 and noise >= 0")
    segs = tree_segments(depth)[: 2**depth - 1]
    rng = np.random.default_rng(seed)
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    labels = rng.choice(len(segs), size=n, p=lengths / lengths.sum())
    u = rng.uniform(0.0, 1.0, size=(n, 1))
    xy = segs[labels, 0] + u * (segs[labels, 1] - segs[labels, 0])
    xy = xy + noise * rng.standard_normal((n, 2))
    return Dataset(embed_planar(xy), "fractal_tree", seed, labels)


def sample_complex_gaussian(n: int, d: int = 2, seed: int = 0) -> Dataset:
    """Draws from π^{-d} exp(-z†z), i.e. E[z z̄] = 1 per coordinate."""
    if n <= 0:
        raise ValueError("need n > 0")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d, 2))
    return Dataset((g[..., 0] + 1j * g[..., 1]) / np.sqrt(2.0), "complex_gaussian", seed)


GENERATORS = {
    "two_moons": sample_two_moons,
    "rings": sample_olympic_rings,
    "fractal_tree": sample_fractal_tree,
    "complex_gaussian": sample_complex_gaussian,
}


def make_dataset(name: str, n: int, seed: int = 0, **kwargs) -> Dataset:
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(GENERATORS)}") from None
    return gen(n, seed=seed, **kwargs)


def standardization(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per real component mean and std of a dataset."""
    x = ds.realified()
    return x.mean(axis=0), x.std(axis=0)


def standardize(ds: Dataset, mean=None, scale=None) -> Dataset:
    """Zero-mean, unit-variance real components (statistics from ``ds`` unless given)."""
    if mean is None or scale is None:
        mean, scale = standardization(ds)
    x = (ds.realified() - mean) / scale
    return Dataset(complexify(x), ds.name, ds.seed, ds.labels)


def write_csv(ds: Dataset, path) -> None:
    x = ds.realified()
    if x.shape[1] != 4:
        raise ValueError("CSV dump expects d = 2")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re1", "im1", "re2", "im2"])
        for row in x:
            w.writerow([repr(float(v)) for v in row])
