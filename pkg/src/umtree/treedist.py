"""Distances between finite ultra-metric measure spaces.

``eurandom_distance`` restricts the coupling infimum to permutations (exact
for N <= 8, local search above); ``prohorov_1d`` and ``truncated_w1`` compare
distance distributions and give certified lower-bound companions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix

from .mmspace import FiniteUmmSpace, SpaceError, distance_distribution

EXACT_LIMIT = 8
LOCAL_STARTS = 16
MASS_TOL = 1e-12


@dataclass(frozen=True)
class CouplingPlan:
    mode: str
    assignment: np.ndarray  # permutation (N,) or coupling matrix (N, N)


@dataclass(frozen=True)
class DistanceResult:
    value: float
    plan: CouplingPlan
    is_exact: bool


def _perm_cost(d1: np.ndarray, d2: np.ndarray, perm: np.ndarray) -> float:
    n = d1.shape[0]
    return float(np.minimum(np.abs(d1 - d2[np.ix_(perm, perm)]), 1.0).sum()) / (n * n)


def _check_pair(s1: FiniteUmmSpace, s2: FiniteUmmSpace):
    if s1.n != s2.n:
        raise SpaceError(f"spaces differ in size ({s1.n} vs {s2.n})")
    if not (s1.is_uniform() and s2.is_uniform()):
        raise SpaceError("permutation couplings need uniform weights on both sides")


def _exhaustive(d1, d2):
    n = d1.shape[0]
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    best_val, best = np.inf, None
    for a in range(0, len(perms), 20_000):
        p = perms[a:a + 20_000]
        moved = d2[p[:, :, None], p[:, None, :]]
        vals = np.minimum(np.abs(d1[None] - moved), 1.0).sum(axis=(1, 2))
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best = float(vals[i]), p[i].copy()
    return best_val / (n * n), best


def _swap_descent(d1, d2, perm):
    n = d1.shape[0]
    cur = _perm_cost(d1, d2, perm)
    improved = True
    while improved:
        improved = False
        for i in range(n):
            for j in range(i + 1, n):
                perm[i], perm[j] = perm[j], perm[i]
                val = _perm_cost(d1, d2, perm)
                if val < cur - 1e-15:
                    cur = val
                    improved = True
                else:
                    perm[i], perm[j] = perm[j], perm[i]
    return cur, perm


def _local_search(d1, d2, rng, starts):
    n = d1.shape[0]
    best_val, best = np.inf, None
    for s in range(starts):
        perm = np.arange(n) if s == 0 else rng.permutation(n)
        val, perm = _swap_descent(d1, d2, perm)
        if val < best_val:
            best_val, best = val, perm.copy()
    return best_val, best


def _frank_wolfe(d1, d2, start, iters=200):
    # quadratic objective sum_{ijkl} pi_ik pi_jl c(i,j,k,l) over doubly stochastic N*pi
    n = d1.shape[0]
    c = np.minimum(np.abs(d1[:, :, None, None] - d2[None, None, :, :]), 1.0)  # [i,j,k,l]
    c = c.transpose(0, 2, 1, 3).reshape(n * n, n * n)  # [(i,k),(j,l)]
    pi = np.zeros((n, n))
    pi[np.arange(n), start] = 1.0 / n
    pi = pi.ravel()
    for _ in range(iters):
        grad = 2.0 * c @ pi
        rows, cols = linear_sum_assignment(grad.reshape(n, n))
        s = np.zeros((n, n))
        s[rows, cols] = 1.0 / n
        s = s.ravel()
        dvec = s - pi
        a = float(dvec @ c @ dvec)
        b = float(grad @ dvec)
        if b >= -1e-14:
            break
        step = 1.0 if a <= 0 else min(1.0, -b / (2 * a))
        pi = pi + step * dvec
    return float(pi @ c @ pi), pi.reshape(n, n)


def eurandom_distance(s1: FiniteUmmSpace, s2: FiniteUmmSpace, mode: str = "permutation",
                      rng: Optional[np.random.Generator] = None, starts: int = LOCAL_STARTS) -> DistanceResult:
    """Truncated mean distortion ``(1/N^2) sum_{i,j} |r1(i,j) - r2(s(i),s(j))| ^ 1``.

    ``permutation`` minimises over relabelings ``s``; ``doubly_stochastic_heuristic``
    continues from the best permutation with Frank-Wolfe over all couplings
    with uniform marginals and returns an upper bound.
    """
    _check_pair(s1, s2)
    d1, d2 = s1.dist, s2.dist
    if mode not in ("permutation", "doubly_stochastic_heuristic"):
        raise ValueError(f"unknown coupling mode {mode!r}")
    if s1.n <= EXACT_LIMIT:
        val, perm = _exhaustive(d1, d2)
        exact = True
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        val, perm = _local_search(d1, d2, rng, starts)
        exact = False
    if mode == "permutation":
        return DistanceResult(val, CouplingPlan(mode, perm), exact)
    # start from the best permutation so the heuristic never does worse
    fw_val, pi = _frank_wolfe(d1, d2, perm)
    return DistanceResult(min(val, fw_val), CouplingPlan(mode, pi), False)


# --------------------------------------------------------------------------
# one-dimensional comparisons of distance distributions

Dist1D = Union[Sequence[tuple[float, float]], FiniteUmmSpace]


def _as_atoms(w) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(w, FiniteUmmSpace):
        w = distance_distribution(w)
    acc: dict[float, float] = {}
    for x, p in w:
        if p < 0:
            raise ValueError("probabilities must be nonnegative")
        if p > 0:
            acc[float(x)] = acc.get(float(x), 0.0) + float(p)
    xs = np.array(sorted(acc))
    ps = np.array([acc[x] for x in xs])
    if not math.isclose(ps.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"probabilities sum to {ps.sum()}, expected 1")
    return xs, ps


def _excess(xp, pp, xq, pq, rad) -> float:
    """``max_A P(A) - Q(A^rad)`` with ``A^rad`` the closed ``rad``-neighbourhood."""
    rad = rad * (1 + 1e-12) + 1e-15  # breakpoints are float differences
    lo = np.searchsorted(xq, xp - rad, side="left")
    hi = np.searchsorted(xq, xp + rad, side="right")  # Q atoms lo..hi-1 lie within rad
    cq = np.concatenate([[0.0], np.cumsum(pq)])
    m = len(xp)
    best = np.full(m, -np.inf)
    for i in range(m):
        val = pp[i] - (cq[hi[i]] - cq[lo[i]])
        for j in range(i):
            start = max(lo[i], hi[j])
            val = max(val, best[j] + pp[i] - (cq[hi[i]] - cq[min(start, hi[i])]))
        best[i] = val
    worst = float(best.max()) if m else 0.0
    return worst if worst > MASS_TOL else 0.0  # cumsum rounding


def prohorov_1d(w1: Dist1D, w2: Dist1D) -> float:
    """Exact Prohorov distance between two finitely supported laws on the line.

    The worst-case excess ``max_A P(A) - Q(A^eps)`` is a step function of
    ``eps`` that only changes at pairwise gaps between the supports; each
    piece is checked exactly and the smallest feasible ``eps`` is returned.
    """
    xp, pp = _as_atoms(w1)
    xq, pq = _as_atoms(w2)
    gaps = np.unique(np.abs(xp[:, None] - xq[None, :]).ravel())
    cuts = np.concatenate([[0.0], gaps[gaps > 0]])
    best = 1.0
    for i, c in enumerate(cuts):
        upper = cuts[i + 1] if i + 1 < len(cuts) else np.inf
        if c >= best:
            break
        # for eps in (c, upper] the open eps-ball equals the closed c-ball
        h = max(_excess(xp, pp, xq, pq, c), _excess(xq, pq, xp, pp, c))
        cand = max(c, h)
        if cand <= upper:
            best = min(best, cand)
    return float(best)


def truncated_w1(w1: Dist1D, w2: Dist1D) -> float:
    """Optimal transport cost for ``c(x, y) = |x - y| ^ 1``.

    ``min(|x-y|, 1)`` is the path metric of the support line augmented by a
    hub joined to every point at cost 1/2, so the transport problem is a
    min-cost flow on a sparse graph.
    """
    xp, pp = _as_atoms(w1)
    xq, pq = _as_atoms(w2)
    xs = np.union1d(xp, xq)
    m = len(xs)
    supply = np.zeros(m + 1)
    supply[np.searchsorted(xs, xp)] += pp
    supply[np.searchsorted(xs, xq)] -= pq
    edges, cost = [], []
    for i in range(m - 1):
        gap = xs[i + 1] - xs[i]
        edges += [(i, i + 1), (i + 1, i)]
        cost += [gap, gap]
    for i in range(m):
        edges += [(i, m), (m, i)]
        cost += [0.5, 0.5]
    e = np.array(edges)
    k = len(e)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([np.arange(k), np.arange(k)])
    vals = np.concatenate([np.ones(k), -np.ones(k)])
    a_eq = coo_matrix((vals, (rows, cols)), shape=(m + 1, k)).tocsr()
    res = linprog(cost, A_eq=a_eq, b_eq=supply, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


# --------------------------------------------------------------------------
# coupled Moran runs


def ancestry_coupling_distance(coupled) -> float:
    """Identity-labelled truncated distortion between two coupled populations."""
    if hasattr(coupled, "first"):
        a, b = coupled.first, coupled.second
    else:
        a, b = coupled
    same = (a.N == b.N and a.t == b.t and np.array_equal(a.times, b.times)
            and np.array_equal(a.donors, b.donors) and np.array_equal(a.recipients, b.recipients))
    if not same:
        raise ValueError("states were not driven by one shared event stream")
    n = a.N
    return float(np.minimum(np.abs(a.dist - b.dist), 1.0).sum()) / (n * n)
