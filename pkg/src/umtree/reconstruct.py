"""Recover a finite ultra-metric measure space from its subtree-length law.

The law ``lambda`` of the sequence ``(l_1, l_2, ...)`` of subtree lengths
under i.i.d. sampling pins down the space up to measure-preserving isometry:

1. the lexicographically smallest strictly increasing prefix ``l*`` of its
   support gives the metric,
2. the masses of padded vectors ``l*_k`` (repeats inserted after each new
   point) give the weights up to isometries of the metric.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .mmspace import FiniteUmmSpace, SpaceError, collapse, is_ultrametric_matrix, isometries, shrink_epsilon
from .subtree import depths_from_lengths, subtree_length

LEN_TOL = 1e-9
EXACT_ATOM_LIMIT = 12


class ReconstructionError(ValueError):
    pass


def _close(a: float, b: float, scale: float) -> bool:
    return abs(a - b) <= LEN_TOL * max(1.0, scale)


# --------------------------------------------------------------------------
# subset lengths and minimal sampling orders


@dataclass
class _Lattice:
    """Subtree lengths of every atom subset plus the minimal-order DAG."""

    space: FiniteUmmSpace
    lengths: np.ndarray          # indexed by bitmask
    lstar: np.ndarray            # (N,)
    levels: list[set[int]]       # masks whose prefix vectors equal l* so far
    scale: float = field(default=1.0)


def _subset_lengths(d: np.ndarray) -> np.ndarray:
    n = d.shape[0]
    out = np.zeros(1 << n)
    for mask in range(1, 1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        out[mask] = subtree_length(d[np.ix_(idx, idx)]) if len(idx) > 1 else 0.0
    return out


def _lattice(space: FiniteUmmSpace) -> _Lattice:
    n = space.n
    if n > EXACT_ATOM_LIMIT:
        raise ReconstructionError(f"exact lambda atoms are limited to N <= {EXACT_ATOM_LIMIT}")
    if np.any(space.weights <= 0):
        raise ReconstructionError("collapse zero-weight atoms first")
    lengths = _subset_lengths(space.dist)
    scale = float(lengths[-1]) if n else 1.0
    levels = [{1 << i for i in range(n)}]
    lstar = [0.0]
    for _ in range(1, n):
        cand: dict[int, float] = {}
        for mask in levels[-1]:
            for a in range(n):
                if not mask >> a & 1:
                    cand[mask | 1 << a] = lengths[mask | 1 << a]
        best = min(cand.values())
        if _close(best, lstar[-1], scale):
            raise ReconstructionError("distinct atoms at distance 0; collapse the space first")
        levels.append({m for m, v in cand.items() if _close(v, best, scale)})
        lstar.append(best)
    return _Lattice(space, lengths, np.array(lstar), levels, scale)


def minimal_length_vector(space: FiniteUmmSpace) -> np.ndarray:
    """``l*``: lexicographic minimum over orders of sampling all atoms once."""
    return _lattice(collapse(space)).lstar


def _optimal_paths(lat: _Lattice) -> list[tuple[int, ...]]:
    """All atom orders whose prefix lengths equal ``l*``."""
    n = lat.space.n
    paths = [((a,), 1 << a) for a in range(n)]
    for lvl in range(1, n):
        nxt = []
        for order, mask in paths:
            for a in range(n):
                m2 = mask | 1 << a
                if m2 != mask and m2 in lat.levels[lvl]:
                    nxt.append((order + (a,), m2))
        paths = nxt
    return [p for p, _ in paths]


# --------------------------------------------------------------------------
# lambda atoms


def _check_pattern(k: Sequence[int], n: int) -> tuple[int, ...]:
    k = tuple(int(x) for x in k)
    if len(k) != max(n - 1, 0) or any(x < 0 for x in k):
        raise ValueError(f"pattern must hold {max(n - 1, 0)} nonnegative integers")
    return k


def padded_vector(lstar: Sequence[float], k: Sequence[int]) -> np.ndarray:
    """``l*_k``: ``l*_i`` followed by ``k_i`` repeats, for ``i < N``, then ``l*_N``."""
    out = [lstar[0]]
    for i, rep in enumerate(k):
        out += [lstar[i]] * rep + [lstar[i + 1]]
    return np.array(out)


def lambda_atom_prob(space: FiniteUmmSpace, k_pattern: Sequence[int]) -> float:
    """Probability that sequential sampling reproduces ``l*_k`` exactly.

    Dynamic programming over the set of atoms seen so far: a draw either
    repeats a seen atom (length unchanged) or adds the atom that moves the
    length to the next target value.
    """
    space = collapse(space)
    n = space.n
    k = _check_pattern(k_pattern, n)
    lat = _lattice(space)
    target = padded_vector(lat.lstar, k)
    p = space.weights
    mass = np.array([p[[i for i in range(n) if m >> i & 1]].sum() for m in range(1 << n)])
    probs = {1 << a: float(p[a]) for a in range(n)}
    for step in range(1, len(target)):
        nxt: dict[int, float] = {}
        for mask, pr in probs.items():
            if _close(target[step], target[step - 1], lat.scale):
                nxt[mask] = nxt.get(mask, 0.0) + pr * mass[mask]
                continue
            for a in range(n):
                if mask >> a & 1:
                    continue
                m2 = mask | 1 << a
                if _close(lat.lengths[m2], target[step], lat.scale):
                    nxt[m2] = nxt.get(m2, 0.0) + pr * p[a]
        probs = nxt
    full = (1 << n) - 1
    return float(probs.get(full, 0.0))


@dataclass(frozen=True)
class LambdaAtoms:
    N: int
    lstar: np.ndarray
    atom_probs: dict

    def ratio(self, k) -> float:
        base = self.atom_probs[(0,) * (self.N - 1)]
        return self.atom_probs[tuple(k)] / base


def default_patterns(n: int, max_power: Optional[int] = None, max_degree: int = 3) -> list[tuple[int, ...]]:
    """Zero, unit, pure-power and all low-degree patterns."""
    if n < 2:
        return [()]
    dim = n - 1
    max_power = n if max_power is None else max_power
    pats = {(0,) * dim}
    for deg in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), deg):
            k = [0] * dim
            for i in combo:
                k[i] += 1
            pats.add(tuple(k))
    for i in range(dim):
        for m in range(1, max_power + 1):
            k = [0] * dim
            k[i] = m
            pats.add(tuple(k))
    return sorted(pats, key=lambda k: (sum(k), k))


def lambda_atoms(space: FiniteUmmSpace, patterns: Optional[Iterable[Sequence[int]]] = None) -> LambdaAtoms:
    """Exact masses of ``l*_k`` for many patterns at once.

    Every path that reaches ``l*_k`` first visits the atoms in some order
    from the minimal-order DAG, so the masses are sums over those orders.
    """
    space = collapse(space)
    n = space.n
    lat = _lattice(space)
    paths = _optimal_paths(lat)
    p = space.weights
    prod = math.prod(p)
    cum = np.array([np.cumsum(p[list(path)])[:-1] for path in paths]).reshape(len(paths), max(n - 1, 0))
    pats = default_patterns(n) if patterns is None else [_check_pattern(k, n) for k in patterns]
    probs = {}
    for k in pats:
        probs[tuple(k)] = float(prod * np.prod(cum ** np.array(k, dtype=float), axis=1).sum())
    return LambdaAtoms(n, lat.lstar, probs)


# --------------------------------------------------------------------------
# Step 1: the metric


def recover_metric(lstar: Sequence[float], n: Optional[int] = None) -> np.ndarray:
    """Distance matrix of the atoms in ``l*``-order.

    ``r_{k,n} = max(r_{k,n-1}, 2 (dl_n - dd_n))`` with depths from the
    half-sum recursion; the base case ``r_12 = l*_2`` is what this gives at
    ``n = 2``.
    """
    ls = np.asarray(lstar, dtype=float)
    if n is not None and len(ls) != n:
        raise ReconstructionError(f"l* has {len(ls)} entries, expected {n}")
    if len(ls) == 0 or ls[0] != 0.0:
        raise ReconstructionError("l* must start at 0")
    if np.any(np.diff(ls) <= 0):
        raise ReconstructionError("l* must be strictly increasing")
    d = depths_from_lengths(ls)
    N = len(ls)
    r = np.zeros((N, N))
    for m in range(1, N):
        jump = 2.0 * ((ls[m] - ls[m - 1]) - (d[m] - d[m - 1]))
        for k in range(m):
            r[k, m] = r[m, k] = max(r[k, m - 1] if k != m - 1 else 0.0, jump)
    if not is_ultrametric_matrix(r):
        raise ReconstructionError("l* is not the minimal vector of an ultra-metric space")
    return r


# --------------------------------------------------------------------------
# Step 2: the weights


@dataclass(frozen=True)
class WeightFit:
    weights: np.ndarray
    residual: float
    orbit: list


def _model(p: np.ndarray, perms: np.ndarray, pats: np.ndarray) -> np.ndarray:
    # mean over isometries of prod_i (sum_{j<=i} p_{s(j)})^{k_i}
    cum = np.cumsum(p[perms], axis=1)[:, :-1]  # (G, N-1)
    cum = np.clip(cum, 0.0, 1.0)
    return np.mean(np.prod(cum[:, None, :] ** pats[None, :, :], axis=2), axis=0)


def _orbit_key(p, perms):
    return min(tuple(np.round(p[s], 12)) for s in perms)


def _cyclic_mean(p: np.ndarray, s: np.ndarray) -> np.ndarray:
    acc, cur, k = p.copy(), s.copy(), 1
    while not np.array_equal(cur, np.arange(len(s))):
        acc += p[cur]
        cur, k = cur[s], k + 1
    return acc / k


def _symmetrize_fit(p, val, perms, cost, near: float = 1e-3):
    # at weights fixed by an isometry the model is flat in the antisymmetric
    # direction, so least squares stops ~sqrt(eps) short; snap onto the fixed set
    improved = True
    while improved:
        improved = False
        for s in perms:
            if np.array_equal(s, np.arange(len(s))) or np.array_equal(p[s], p):
                continue
            if np.max(np.abs(p[s] - p)) < near:
                q = _cyclic_mean(p, s)
                c = cost(q)
                if c <= max(val, 1e-28) * 10:
                    p, val, improved = q, c, True
    return p, val


def recover_weights(metric: np.ndarray, atoms: LambdaAtoms, starts: int = 24,
                    rng: Optional[np.random.Generator] = None, tol: float = 1e-20) -> WeightFit:
    """Weights on the ``l*``-ordered atoms, determined up to isometries.

    With a trivial isometry group the unit-pattern ratios are the partial
    sums ``q_i`` and the weights follow by differencing. Otherwise the ratios
    are orbit averages and the weights are fitted by multi-start least
    squares on the simplex; any member of the optimal orbit is returned.
    """
    metric = np.asarray(metric, dtype=float)
    n = metric.shape[0]
    if n == 1:
        return WeightFit(np.ones(1), 0.0, [np.zeros(1, dtype=int)])
    perms = np.array(isometries(metric))
    base = atoms.atom_probs.get((0,) * (n - 1))
    if not base or base <= 0:
        raise ReconstructionError("lambda(l*) is missing or zero")
    pats = [k for k in atoms.atom_probs if sum(k) > 0]
    if len(perms) == 1:
        units = [tuple(np.eye(n - 1, dtype=int)[i]) for i in range(n - 1)]
        missing = [k for k in units if k not in atoms.atom_probs]
        if missing:
            raise ReconstructionError(f"unit patterns {missing} were never observed")
        q = np.array([atoms.atom_probs[k] / base for k in units])
        full = np.concatenate([[0.0], q, [1.0]])
        p = np.diff(full)
        if np.any(p <= 0):
            raise ReconstructionError(f"unit-pattern ratios are not increasing: {q}")
        return WeightFit(p, 0.0, [perms[0]])
    if len(pats) < n - 1:
        raise ReconstructionError(f"{len(pats)} patterns beyond l* cannot fix {n - 1} free weights")
    pat_arr = np.array(pats, dtype=float)
    target = np.array([atoms.atom_probs[k] / base for k in pats])
    # scale residuals so high-power patterns carry weight comparable to units
    wts = 1.0 / np.maximum(target, 1e-12) ** 0.5

    def resid(z):
        p = z / z.sum()
        return wts * (_model(p, perms, pat_arr) - target)

    rng = np.random.default_rng(0) if rng is None else rng
    best = None
    for _ in range(starts):
        z0 = rng.dirichlet(np.ones(n))
        sol = least_squares(resid, z0, bounds=(1e-12, 1.0), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        val = float(np.sum(sol.fun ** 2))
        if best is None or val < best[1]:
            best = (sol.x / sol.x.sum(), val)
        if val < tol:
            break
    p, val = best
    p, val = _symmetrize_fit(p, val, perms, lambda q: float(np.sum(resid(q) ** 2)))
    orbit = [s for s in perms]
    return WeightFit(p, val, orbit)


def weights_identifiable(metric: np.ndarray, patterns: Sequence[Sequence[int]]) -> bool:
    """Whether the given patterns pin the weights down modulo isometries.

    Checks the rank of the orbit-averaged model at a generic interior point;
    at points fixed by an isometry the rank drops even when identifiable.
    """
    n = np.asarray(metric).shape[0]
    if n <= 1:
        return True
    perms = np.array(isometries(np.asarray(metric, dtype=float)))
    pats = np.array([k for k in patterns if sum(k) > 0], dtype=float).reshape(-1, n - 1)
    if len(pats) < n - 1:
        return False
    p = np.random.default_rng(12345).dirichlet(np.ones(n))
    basis = np.eye(n)[:, :-1] - np.eye(n)[:, -1:]  # tangent directions of the simplex
    h = 1e-6
    jac = np.column_stack([(_model(p + h * b, perms, pats) - _model(p - h * b, perms, pats)) / (2 * h)
                           for b in basis.T])
    sv = np.linalg.svd(jac, compute_uv=False)
    return bool(sv[-1] > 1e-7 * sv[0])


# --------------------------------------------------------------------------
# the full pipeline


@dataclass(frozen=True)
class Reconstruction:
    space: FiniteUmmSpace
    lstar: np.ndarray
    residual: float
    report: dict = field(default_factory=dict)


def reconstruct_exact(space: FiniteUmmSpace, eps_shrink: float = 0.0,
                      rng: Optional[np.random.Generator] = None) -> Reconstruction:
    """Rebuild ``space`` (or its ``eps``-shrunken version) from exact lambda atoms."""
    src = collapse(shrink_epsilon(space, eps_shrink) if eps_shrink > 0 else space)
    if src.n == 1:
        return Reconstruction(FiniteUmmSpace(np.zeros((1, 1)), np.ones(1)), np.zeros(1), 0.0)
    atoms = lambda_atoms(src)
    metric = recover_metric(atoms.lstar, src.n)
    fit = recover_weights(metric, atoms, rng=rng)
    return Reconstruction(FiniteUmmSpace(metric, fit.weights), atoms.lstar, fit.residual,
                          {"isometry_group_order": len(fit.orbit), "patterns": len(atoms.atom_probs)})


# --------------------------------------------------------------------------
# empirical mode


def shrink_lengths(lengths: np.ndarray, eps: float, rule: str = "exact") -> np.ndarray:
    """Apply the ``eps``-shrink to length vectors (rows).

    ``exact`` recovers each new point's distance ``m`` to the earlier sample
    from the increment and current depth, shrinks it to ``(m - eps)^+`` and
    re-inserts. ``recursive`` is the simpler rule
    ``l_n <- l_{n-1} + (dl_n - eps/2)^+`` with ``l_2 <- (l_2 - eps)^+``, which
    agrees with ``exact`` while every depth is at least ``eps/2``.
    """
    L = np.atleast_2d(np.asarray(lengths, dtype=float))
    out = np.zeros_like(L)
    if rule == "recursive":
        if L.shape[1] > 1:
            out[:, 1] = np.maximum(L[:, 1] - eps, 0.0)
        for i in range(2, L.shape[1]):
            out[:, i] = out[:, i - 1] + np.maximum(L[:, i] - L[:, i - 1] - 0.5 * eps, 0.0)
        return out
    if rule != "exact":
        raise ValueError(f"unknown shrink rule {rule!r}")
    depth = np.zeros(len(L))
    new_depth = np.zeros(len(L))
    for i in range(1, L.shape[1]):
        inc = L[:, i] - L[:, i - 1]
        m = np.where(inc > depth, inc + depth, 2.0 * inc)
        depth = np.where(inc > depth, 0.5 * m, depth)
        ms = np.maximum(m - eps, 0.0)
        grow = 0.5 * ms > new_depth
        out[:, i] = out[:, i - 1] + np.where(grow, ms - new_depth, 0.5 * ms)
        new_depth = np.where(grow, 0.5 * ms, new_depth)
    return out


def _condense(row: np.ndarray, tol: float):
    values = [row[0]]
    reps = [0]
    for x in row[1:]:
        if x > values[-1] + tol:
            values.append(x)
            reps.append(0)
        else:
            reps[-1] += 1
    return np.array(values), reps


def reconstruct_empirical(lengths: np.ndarray, eps: float, shrink_rule: str = "exact",
                          min_complete: float = 0.05, rng: Optional[np.random.Generator] = None) -> Reconstruction:
    """Approximate reconstruction from sampled length vectors.

    Vectors are shrunk by ``eps``, condensed to their strictly increasing
    values, and the atom count is the largest number of distinct values.
    ``l*`` is the lexicographically smallest complete vector; weights are
    fitted to the empirical frequencies of the padded patterns.
    """
    if eps <= 0:
        raise ValueError("empirical reconstruction needs eps > 0")
    L = np.atleast_2d(np.asarray(lengths, dtype=float))
    if L.shape[0] < 2:
        raise ReconstructionError("need at least two sampled vectors")
    S = shrink_lengths(L, eps, shrink_rule)
    tol = 1e-9 * max(1.0, float(S.max()))
    condensed = [_condense(row, tol) for row in S]
    counts = np.array([len(v) for v, _ in condensed])
    n = int(counts.max())
    complete = counts == n
    frac = complete.mean()
    # Wilson lower bound of the share of vectors that saw every atom
    z = 2.576
    tot = len(counts)
    centre = (frac + z * z / (2 * tot)) / (1 + z * z / tot)
    half = z * math.sqrt(frac * (1 - frac) / tot + z * z / (4 * tot * tot)) / (1 + z * z / tot)
    if centre - half < min_complete:
        raise ReconstructionError(
            f"only {complete.sum()} of {tot} vectors reach {n} distinct lengths; "
            "sample longer vectors or more replicas"
        )
    if n == 1:
        return Reconstruction(FiniteUmmSpace(np.zeros((1, 1)), np.ones(1)), np.zeros(1), 0.0,
                              {"atoms": 1, "complete_fraction": float(frac)})
    full = np.array([v for (v, _), c in zip(condensed, complete) if c])
    order = np.lexsort(full.T[::-1])
    lstar = full[order[0]]
    grid_tol = 1e-6 * max(1.0, float(lstar[-1]))
    metric = recover_metric(lstar, n)
    # frequencies of l*_k among complete vectors, k read off the repeat counts
    freq: dict[tuple, int] = {}
    for (v, reps), c in zip(condensed, complete):
        if c and np.all(np.abs(v - lstar) <= grid_tol):
            k = tuple(reps[:-1])
            freq[k] = freq.get(k, 0) + 1
    zero = (0,) * (n - 1)
    if zero not in freq:
        raise ReconstructionError("the minimal vector l* was never sampled without repeats")
    atoms = LambdaAtoms(n, lstar, {k: c / tot for k, c in freq.items()})
    fit = recover_weights(metric, atoms, rng=rng, tol=0.0, starts=8)
    return Reconstruction(FiniteUmmSpace(metric, fit.weights), lstar, fit.residual,
                          {"atoms": n, "complete_fraction": float(frac), "patterns_seen": len(freq),
                           "samples": tot, "eps": eps, "shrink_rule": shrink_rule,
                           "weights_identifiable": weights_identifiable(metric, list(freq))})


def reconstruct_space(source, eps_shrink: float = 0.0, shrink_rule: str = "exact",
                      rng: Optional[np.random.Generator] = None) -> Reconstruction:
    """Exact mode for a ``FiniteUmmSpace``; empirical mode for an array of length vectors."""
    if isinstance(source, FiniteUmmSpace):
        return reconstruct_exact(source, eps_shrink, rng)
    return reconstruct_empirical(np.asarray(source), eps_shrink, shrink_rule, rng=rng)
