"""Subtree lengths of sampled leaves, depth sequences and segregating sites."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .mmspace import FiniteUmmSpace, SpaceError, is_ultrametric_matrix

BRUTE_LIMIT = 10


@dataclass(frozen=True)
class LengthVector:
    lengths: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        if self.lengths.shape != self.depths.shape or self.lengths.ndim != 1:
            raise ValueError("lengths and depths must be 1-D and equally long")


@lru_cache(maxsize=None)
def _cycles(m: int) -> np.ndarray:
    """Hamiltonian cycles on ``m`` points as vertex orders starting at 0.

    Rotations are removed by pinning point 0 and reversals by requiring the
    second vertex to be smaller than the last one.
    """
    rows = [(0,) + p for p in itertools.permutations(range(1, m)) if m < 3 or p[0] < p[-1]]
    return np.array(rows, dtype=np.int64)


def _brute(d: np.ndarray) -> float:
    m = d.shape[0]
    if m < 2:
        return 0.0
    cyc = _cycles(m)
    nxt = np.roll(cyc, -1, axis=1)
    best = np.inf
    for a in range(0, len(cyc), 50_000):
        tours = d[cyc[a:a + 50_000], nxt[a:a + 50_000]].sum(axis=1)
        best = min(best, float(tours.min()))
    return 0.5 * best


def _fast_prefix(d: np.ndarray) -> np.ndarray:
    out = np.zeros((1, d.shape[0]))
    kernels.subtree_lengths(np.ascontiguousarray(d[None, :, :], dtype=float), out)
    return out[0]


def subtree_length(dmat, algo: str = "fast") -> float:
    """Total branch length of the tree spanned by the points of ``dmat``.

    ``brute`` takes half the shortest closed tour through all points, which
    walks every edge twice; ``fast`` inserts points one by one into the
    ultra-metric tree.
    """
    d = np.asarray(dmat, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise SpaceError(f"distance matrix must be square, got {d.shape}")
    if algo == "brute":
        if d.shape[0] > BRUTE_LIMIT:
            raise ValueError(f"brute force is limited to m <= {BRUTE_LIMIT}")
        return _brute(d)
    if algo == "fast":
        if not is_ultrametric_matrix(d):
            raise SpaceError("fast subtree length needs an ultra-metric matrix")
        return float(_fast_prefix(d)[-1]) if d.shape[0] else 0.0
    raise ValueError(f"unknown algorithm {algo!r}")


def prefix_lengths(dmat) -> np.ndarray:
    """``(l_1, ..., l_m)`` for the prefixes of an ultra-metric sample."""
    d = np.asarray(dmat, dtype=float)
    if not is_ultrametric_matrix(d):
        raise SpaceError("prefix lengths need an ultra-metric matrix")
    return _fast_prefix(d)


def depths_from_lengths(lengths) -> np.ndarray:
    """Depth sequence from increments: ``d_n = (d_{n-1} + max(dl_n, d_{n-1})) / 2``."""
    lengths = np.asarray(lengths, dtype=float)
    d = np.zeros_like(lengths)
    for i in range(1, len(lengths)):
        d[i] = 0.5 * (d[i - 1] + max(lengths[i] - lengths[i - 1], d[i - 1]))
    return d


def depths_from_matrix(dmat) -> np.ndarray:
    """``d_k = max_{i,j <= k} r_ij / 2``."""
    d = np.asarray(dmat, dtype=float)
    m = d.shape[0]
    return np.array([0.5 * d[:k + 1, :k + 1].max() for k in range(m)]) if m else np.zeros(0)


def sample_length_vectors(space: FiniteUmmSpace, m: int, replicas: int,
                          rng: np.random.Generator) -> np.ndarray:
    """``replicas x m`` array of prefix lengths for i.i.d. samples from ``space``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    idx = rng.choice(space.n, size=(replicas, m), p=space.weights)
    mats = np.ascontiguousarray(space.dist[idx[:, :, None], idx[:, None, :]])
    out = np.zeros((replicas, m))
    kernels.subtree_lengths(mats, out)
    return out


def sample_length_vector(space: FiniteUmmSpace, m: int, rng: np.random.Generator) -> LengthVector:
    lengths = sample_length_vectors(space, m, 1, rng)[0]
    return LengthVector(lengths, depths_from_lengths(lengths))


def segregating_sites(length, theta: float, gamma: float, rng: np.random.Generator):
    """Infinite-sites mutation count on a subtree: Poisson with mean ``theta gamma l / 2``."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    lam = 0.5 * theta * gamma * np.asarray(length, dtype=float)
    draw = rng.poisson(lam)
    return int(draw) if np.ndim(draw) == 0 else draw
