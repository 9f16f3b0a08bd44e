"""Finite ultra-metric measure spaces.

A space is a symmetric distance matrix with zero diagonal together with a
probability vector of atom weights. Distances are genealogical: twice the
time back to the most recent common ancestor.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

WEIGHT_TOL = 1e-12
ULTRA_TOL = 1e-9
EXACT_TUPLE_LIMIT = 10**7


class SpaceError(ValueError):
    """Malformed space input (shape, sign, or weight normalisation)."""


@dataclass(frozen=True)
class ValidationReport:
    is_pseudo_metric: bool
    is_ultrametric: bool
    is_four_point: bool


@dataclass(frozen=True, eq=False)
class FiniteUmmSpace:
    """Distance matrix plus sampling weights. Immutable after construction."""

    dist: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        d = np.array(self.dist, dtype=float)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise SpaceError(f"dist must be square, got shape {d.shape}")
        if d.shape[0] != w.shape[0]:
            raise SpaceError(f"weights has {w.shape[0]} entries for {d.shape[0]} atoms")
        if d.shape[0] < 1:
            raise SpaceError("a space needs at least one atom")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise SpaceError("dist entries must be finite and nonnegative")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL * max(1, len(w)):
            raise SpaceError(f"weights must be nonnegative and sum to 1 (sum={w.sum()!r})")
        if not np.allclose(d, d.T, rtol=0, atol=ULTRA_TOL) or np.any(np.abs(np.diag(d)) > 0):
            raise SpaceError("dist must be symmetric with zero diagonal")
        d = 0.5 * (d + d.T)
        d.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "dist", d)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, dist) -> "FiniteUmmSpace":
        d = np.asarray(dist, dtype=float)
        return cls(d, np.full(d.shape[0], 1.0 / d.shape[0]))

    @classmethod
    def from_upper(cls, n: int, upper, weights=None) -> "FiniteUmmSpace":
        d = np.zeros((n, n))
        iu = np.triu_indices(n, 1)
        upper = np.asarray(upper, dtype=float)
        if upper.shape != (len(iu[0]),):
            raise SpaceError(f"dist_upper must have length {len(iu[0])} for n={n}")
        d[iu] = upper
        d = d + d.T
        w = np.full(n, 1.0 / n) if weights is None else weights
        return cls(d, w)

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def is_uniform(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.n) <= WEIGHT_TOL))

    def upper(self) -> np.ndarray:
        return self.dist[np.triu_indices(self.n, 1)]

    def restrict(self, idx) -> "FiniteUmmSpace":
        idx = np.asarray(idx)
        w = self.weights[idx]
        return FiniteUmmSpace(self.dist[np.ix_(idx, idx)], w / w.sum())

    def relabel(self, perm) -> "FiniteUmmSpace":
        """Atom ``i`` of the result is atom ``perm[i]`` of ``self``."""
        perm = np.asarray(perm)
        return FiniteUmmSpace(self.dist[np.ix_(perm, perm)], self.weights[perm])

    def diameter(self) -> float:
        s = self.support
        return float(self.dist[np.ix_(s, s)].max()) if len(s) else 0.0

    def __repr__(self):
        return f"FiniteUmmSpace(n={self.n}, diameter={self.diameter():.6g})"


# --------------------------------------------------------------------------
# validation


def _triple_violations(d: np.ndarray, tol: float) -> bool:
    # d[i,k] <= max(d[i,j], d[j,k]) for all i, j, k
    m = np.maximum(d[:, :, None], d[None, :, :])  # [i, j, k]
    return bool(np.any(d[:, None, :] > m + tol))


def _four_point_ok(d: np.ndarray, tol: float) -> bool:
    n = d.shape[0]
    for i, j, k, l in itertools.combinations(range(n), 4):
        s = sorted([d[i, j] + d[k, l], d[i, k] + d[j, l], d[i, l] + d[j, k]])
        if s[2] > s[1] + tol:
            return False
    return True


def validate_space(space: FiniteUmmSpace, tol: float = ULTRA_TOL) -> ValidationReport:
    """Check pseudo-metric, ultra-metric and four-point conditions on the support."""
    s = space.support
    d = space.dist[np.ix_(s, s)]
    m = d[:, :, None] + d[None, :, :]
    pseudo = not bool(np.any(d[:, None, :] > m + tol))
    ultra = pseudo and not _triple_violations(d, tol)
    four = pseudo and (ultra or _four_point_ok(d, tol))
    return ValidationReport(pseudo, ultra, four)


def is_ultrametric_matrix(d: np.ndarray, tol: float = ULTRA_TOL) -> bool:
    d = np.asarray(d, dtype=float)
    return not _triple_violations(d, tol)


# --------------------------------------------------------------------------
# sampling


def sample_indices(space: FiniteUmmSpace, m: int, mode: str, rng: np.random.Generator) -> np.ndarray:
    if m < 1:
        raise ValueError("sample size must be at least 1")
    if mode == "with_replacement":
        return rng.choice(space.n, size=m, p=space.weights)
    if mode == "without_replacement":
        if not space.is_uniform():
            raise ValueError("sampling without replacement requires uniform weights")
        if m > space.n:
            raise ValueError(f"cannot draw {m} atoms without replacement from {space.n}")
        return rng.permutation(space.n)[:m]
    raise ValueError(f"unknown sampling mode {mode!r}")


def sample_distance_matrix(space: FiniteUmmSpace, m: int, mode: str = "with_replacement",
                           rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Distance matrix of ``m`` sampled atoms (a draw from the distance matrix distribution)."""
    rng = np.random.default_rng() if rng is None else rng
    idx = sample_indices(space, m, mode, rng)
    return space.dist[np.ix_(idx, idx)]


def distance_distribution(space: FiniteUmmSpace) -> list[tuple[float, float]]:
    """Exact law of ``r(X, Y)`` for ``X, Y`` i.i.d. from the weights."""
    pw = np.outer(space.weights, space.weights)
    out: dict[float, float] = {}
    for v, p in zip(space.dist.ravel(), pw.ravel()):
        if p > 0:
            out[float(v)] = out.get(float(v), 0.0) + float(p)
    return sorted(out.items())


# --------------------------------------------------------------------------
# polynomials


@dataclass(frozen=True)
class Polynomial:
    """Test function of the first ``degree`` sampled points' distance matrix.

    ``phi`` maps a ``degree x degree`` matrix (or a stack of them when
    ``vectorized``) to a real. ``grad`` returns the symmetric matrix of partial
    derivatives ``d phi / d r_ij`` (upper triangle is used).
    """

    degree: int
    phi: Callable
    grad: Optional[Callable] = None
    vectorized: bool = False
    name: str = field(default="", compare=False)
    kind: tuple = field(default=(), compare=False)  # e.g. ("exp_pair", sigma)

    def evaluate(self, mats: np.ndarray) -> np.ndarray:
        mats = np.asarray(mats, dtype=float)
        if self.vectorized:
            return np.asarray(self.phi(mats), dtype=float)
        return np.array([float(self.phi(m)) for m in mats])

    def gradient(self, mats: np.ndarray) -> np.ndarray:
        mats = np.asarray(mats, dtype=float)
        if self.vectorized:
            return np.asarray(self.grad(mats), dtype=float)
        return np.array([np.asarray(self.grad(m), dtype=float) for m in mats])


def exp_pair_polynomial(sigma: float) -> Polynomial:
    """``phi(r) = exp(-sigma r_12)`` with its analytic gradient."""

    def phi(r):
        return np.exp(-sigma * r[..., 0, 1])

    def grad(r):
        g = np.zeros_like(r)
        v = -sigma * np.exp(-sigma * r[..., 0, 1])
        g[..., 0, 1] = v
        g[..., 1, 0] = v
        return g

    return Polynomial(2, phi, grad, vectorized=True, name=f"exp_pair[{sigma}]", kind=("exp_pair", float(sigma)))


def constant_polynomial(c: float, degree: int = 2) -> Polynomial:
    return Polynomial(degree, lambda r: np.full(r.shape[:-2], float(c)),
                      lambda r: np.zeros_like(r), vectorized=True, name=f"const[{c}]", kind=("const", float(c)))


def exp_length_polynomial(sigma: float, degree: int) -> Polynomial:
    """``phi(r) = exp(-sigma l(r))`` with ``l`` the subtree length of the sample."""
    from . import kernels

    def phi(r):
        r = np.ascontiguousarray(np.asarray(r, dtype=float).reshape(-1, degree, degree))
        out = np.zeros((len(r), degree))
        kernels.subtree_lengths(r, out)
        return np.exp(-sigma * out[:, -1])

    return Polynomial(degree, phi, None, vectorized=True, name=f"exp_length[{sigma},{degree}]",
                      kind=("exp_length", float(sigma)))


def symmetrize(poly: Polynomial) -> Polynomial:
    n = poly.degree
    perms = [np.array(p) for p in itertools.permutations(range(n))]

    def phi(r):
        r = np.asarray(r, dtype=float)
        acc = 0.0
        for p in perms:
            acc = acc + poly.evaluate(r[..., p, :][..., :, p].reshape(-1, n, n)).reshape(r.shape[:-2])
        return acc / len(perms)

    return Polynomial(n, phi, vectorized=True, name=f"sym[{poly.name}]")


def _all_tuples(space: FiniteUmmSpace, degree: int):
    s = space.support
    count = len(s) ** degree
    if count > EXACT_TUPLE_LIMIT:
        raise ValueError(
            f"exact evaluation needs {count} tuples (> {EXACT_TUPLE_LIMIT}); use mode='mc'"
        )
    grids = np.array(list(itertools.product(range(len(s)), repeat=degree)), dtype=np.int64)
    idx = s[grids] if degree else grids
    w = np.prod(space.weights[idx], axis=1)
    return idx, w


def _mats_for(space: FiniteUmmSpace, idx: np.ndarray) -> np.ndarray:
    return space.dist[idx[:, :, None], idx[:, None, :]]


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float = 0.0

    def __float__(self):
        return self.value


def _chunks(total: int, size: int = 200_000):
    for start in range(0, total, size):
        yield start, min(total, start + size)


def _exact_average(space, degree, fn) -> float:
    idx, w = _all_tuples(space, degree)
    acc = math.fsum(
        float(np.dot(w[a:b], fn(_mats_for(space, idx[a:b])))) for a, b in _chunks(len(w))
    )
    return acc


def _mc_average(space, degree, fn, replicas, rng) -> Estimate:
    idx = rng.choice(space.n, size=(replicas, degree), p=space.weights)
    vals = np.concatenate([fn(_mats_for(space, idx[a:b])) for a, b in _chunks(replicas)])
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0)


def evaluate_polynomial(space: FiniteUmmSpace, poly: Polynomial, mode: str = "exact",
                        mc_replicas: int = 10_000, rng: Optional[np.random.Generator] = None) -> Estimate:
    """``<nu, phi>`` by exact tuple enumeration or Monte Carlo."""
    if mode == "exact":
        return Estimate(_exact_average(space, poly.degree, poly.evaluate))
    if mode == "mc":
        rng = np.random.default_rng() if rng is None else rng
        return _mc_average(space, poly.degree, poly.evaluate, mc_replicas, rng)
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# generator of the tree-valued Fleming-Viot dynamics


def theta(r: np.ndarray, k: int, l: int) -> np.ndarray:
    """Replace sample ``l`` by a copy of sample ``k`` (0-based indices)."""
    n = r.shape[-1]
    idx = np.arange(n)
    idx[l] = k
    return r[..., idx, :][..., :, idx]


def _fd_gradient(poly: Polynomial, mats: np.ndarray) -> np.ndarray:
    n = poly.degree
    out = np.zeros_like(mats)
    for i, j in itertools.combinations(range(n), 2):
        h = 1e-5 * np.maximum(1.0, np.abs(mats[:, i, j]))
        up = mats.copy()
        dn = mats.copy()
        up[:, i, j] += h
        up[:, j, i] += h
        dn[:, i, j] -= h
        dn[:, j, i] -= h
        g = (poly.evaluate(up) - poly.evaluate(dn)) / (2 * h)
        out[:, i, j] = g
        out[:, j, i] = g
    return out


def _generator_integrand(poly: Polynomial, gamma: float, finite_differences: bool, growth: str):
    n = poly.degree
    if poly.grad is None and not finite_differences:
        raise ValueError("polynomial has no gradient and finite differences are disabled")
    if growth not in ("all", "distinct"):
        raise ValueError(f"unknown growth rule {growth!r}")
    pairs = [(k, l) for k in range(n) for l in range(n) if k != l]
    iu = np.triu_indices(n, 1)

    def fn(mats, idx):
        if poly.grad is not None:
            g = poly.gradient(mats)
        else:
            g = _fd_gradient(poly, mats)
        g = g[:, iu[0], iu[1]]
        if growth == "distinct":
            # an atom's distance to itself never grows
            g = g * (idx[:, iu[0]] != idx[:, iu[1]])
        div = 2.0 * g.sum(axis=1)
        base = poly.evaluate(mats)
        res = np.zeros(len(mats))
        for k, l in pairs:
            res += poly.evaluate(theta(mats, k, l)) - base
        return div + 0.5 * gamma * res

    return fn


def apply_generator_up(space: FiniteUmmSpace, poly: Polynomial, gamma: float, mode: str = "exact",
                       mc_replicas: int = 10_000, rng: Optional[np.random.Generator] = None,
                       finite_differences: bool = True, growth: str = "all") -> Estimate:
    """Growth plus resampling generator applied to ``Phi = <nu, phi>`` at ``space``.

    Growth contributes ``<nu, div phi>`` with ``div = 2 sum_{i<j} d/dr_ij``;
    resampling contributes ``gamma/2 * sum_{k,l} <nu, phi o theta_kl - phi>``
    (diagonal terms vanish). ``growth="all"`` is the Fleming-Viot operator.
    ``growth="distinct"`` differentiates only pairs of samples that hit
    different atoms, which is the exact generator of the ``N``-individual
    Moran dynamics at a uniform snapshot; the two differ by ``O(1/N)``.
    """
    fn = _generator_integrand(poly, gamma, finite_differences, growth)
    if mode == "exact":
        idx, w = _all_tuples(space, poly.degree)
        return Estimate(math.fsum(float(np.dot(w[a:b], fn(_mats_for(space, idx[a:b]), idx[a:b])))
                                  for a, b in _chunks(len(w))))
    if mode == "mc":
        rng = np.random.default_rng() if rng is None else rng
        idx = rng.choice(space.n, size=(mc_replicas, poly.degree), p=space.weights)
        vals = np.concatenate([fn(_mats_for(space, idx[a:b]), idx[a:b]) for a, b in _chunks(mc_replicas)])
        se = float(vals.std(ddof=1) / math.sqrt(mc_replicas)) if mc_replicas > 1 else 0.0
        return Estimate(float(vals.mean()), se)
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# covering numbers and separated sets


def _open_ball_classes(d: np.ndarray, eps: float) -> np.ndarray:
    n = d.shape[0]
    labels = -np.ones(n, dtype=int)
    c = 0
    for i in range(n):
        if labels[i] < 0:
            labels[(d[i] < eps) & (labels < 0)] = c
            c += 1
    return labels


def max_separated_cardinality(d: np.ndarray, eps: float, closed: bool = False) -> int:
    """Largest subset with pairwise distances ``>= eps`` (``> eps`` if ``closed``).

    Exact maximum clique on the "far enough" graph (branch and bound). For an
    ultra-metric this equals the number of open ``eps``-balls.
    """
    n = d.shape[0]
    far = d > eps if closed else d >= eps
    nbrs = [set(np.flatnonzero(far[i])) - {i} for i in range(n)]
    best = 0

    def expand(size, cand):
        nonlocal best
        if not cand:
            best = max(best, size)
            return
        for v in sorted(cand):
            if size + len(cand) <= best:
                return
            expand(size + 1, cand & nbrs[v])
            cand = cand - {v}

    expand(0, set(range(n)))
    return best


def covering_and_separation(space: FiniteUmmSpace, eps: float) -> dict:
    """Open-ball covering number and largest ``eps``-separated subset of the support.

    In an ultra-metric the relation ``r < eps`` is an equivalence; its classes
    are exactly the open ``eps``-balls, so the covering number is the class count.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    s = space.support
    d = space.dist[np.ix_(s, s)]
    labels = _open_ball_classes(d, eps)
    return {
        "covering_number": int(labels.max() + 1),
        "max_separated_cardinality": max_separated_cardinality(d, eps),
    }


def single_linkage_clusters(d: np.ndarray, eps: float) -> int:
    """Number of single-linkage clusters joined strictly below ``eps``."""
    from scipy.cluster.hierarchy import fcluster, linkage
    from scipy.spatial.distance import squareform

    n = d.shape[0]
    if n == 1:
        return 1
    z = linkage(squareform(d, checks=False), method="single")
    # fcluster merges at heights <= t; nudge below eps for the strict relation
    return int(fcluster(z, t=np.nextafter(eps, -np.inf), criterion="distance").max())


def shrink_epsilon(space: FiniteUmmSpace, eps: float) -> FiniteUmmSpace:
    """Entrywise ``max(0, r - eps)`` off the diagonal."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    d = np.maximum(space.dist - eps, 0.0)
    np.fill_diagonal(d, 0.0)
    return FiniteUmmSpace(d, space.weights)


def collapse(space: FiniteUmmSpace, tol: float = 0.0) -> FiniteUmmSpace:
    """Merge atoms at distance ``<= tol`` and drop zero-weight atoms."""
    s = space.support
    d = space.dist[np.ix_(s, s)]
    w = space.weights[s]
    reps: list[int] = []
    mass: list[float] = []
    for i in range(len(s)):
        for a, r in enumerate(reps):
            if d[i, r] <= tol:
                mass[a] += w[i]
                break
        else:
            reps.append(i)
            mass.append(w[i])
    reps_a = np.array(reps)
    m = np.array(mass)
    return FiniteUmmSpace(d[np.ix_(reps_a, reps_a)], m / m.sum())


# --------------------------------------------------------------------------
# isometry


def isometries(d: np.ndarray, tol: float = ULTRA_TOL, limit: int = 8) -> list[np.ndarray]:
    """All permutations ``p`` with ``d[p][:, p] == d`` (exhaustive, ``n <= limit``)."""
    n = d.shape[0]
    if n > limit:
        raise ValueError(f"isometry enumeration capped at n={limit}")
    out = []
    for p in itertools.permutations(range(n)):
        p = np.array(p)
        if np.all(np.abs(d[np.ix_(p, p)] - d) <= tol):
            out.append(p)
    return out


def find_measure_isometry(a: FiniteUmmSpace, b: FiniteUmmSpace, dist_tol: float = 1e-9,
                          weight_tol: float = 1e-9, limit: int = 8) -> Optional[np.ndarray]:
    """Permutation ``p`` with ``b.relabel(p)`` matching ``a``, or ``None``.

    Distances and weights are compared within the given tolerances; search is
    exhaustive with pruning (``n <= limit``).
    """
    if a.n != b.n:
        return None
    n = a.n
    if n > limit:
        raise ValueError(f"isometry search capped at n={limit}")
    p = [-1] * n
    used = [False] * n

    def rec(i):
        if i == n:
            return True
        for c in range(n):
            if used[c] or abs(a.weights[i] - b.weights[c]) > weight_tol:
                continue
            if all(abs(a.dist[i, j] - b.dist[c, p[j]]) <= dist_tol for j in range(i)):
                used[c] = True
                p[i] = c
                if rec(i + 1):
                    return True
                used[c] = False
        return False

    return np.array(p) if rec(0) else None


# --------------------------------------------------------------------------
# JSON file format


def space_to_dict(space: FiniteUmmSpace) -> dict:
    return {
        "n": space.n,
        "dist_upper": [float(x) for x in space.upper()],
        "weights": [float(x) for x in space.weights],
    }


def space_from_dict(obj: dict) -> FiniteUmmSpace:
    for key in ("n", "dist_upper", "weights"):
        if key not in obj:
            raise SpaceError(f"space JSON is missing field {key!r}")
    n = int(obj["n"])
    w = np.asarray(obj["weights"], dtype=float)
    if w.shape != (n,):
        raise SpaceError(f"field 'weights' must have {n} entries")
    return FiniteUmmSpace.from_upper(n, obj["dist_upper"], w)


def write_space(space: FiniteUmmSpace, path) -> None:
    # repr of a float is the shortest round-tripping decimal (<= 17 digits)
    Path(path).write_text(json.dumps(space_to_dict(space), indent=1) + "\n")


def read_space(path) -> FiniteUmmSpace:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpaceError(f"{path}: malformed JSON ({exc})") from exc
    return space_from_dict(obj)


# --------------------------------------------------------------------------
# random spaces (test and demo fixtures)


def random_ultrametric(n: int, rng: np.random.Generator, scale: float = 1.0,
                       weights: str = "uniform") -> FiniteUmmSpace:
    """Random ultra-metric from a random binary merge history with distinct heights."""
    clusters = [[i] for i in range(n)]
    d = np.zeros((n, n))
    heights = np.sort(rng.uniform(0.05, 1.0, size=max(n - 1, 0))) * scale
    for h in heights:
        a, b = sorted(rng.choice(len(clusters), size=2, replace=False))
        for i in clusters[a]:
            for j in clusters[b]:
                d[i, j] = d[j, i] = 2.0 * h
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    if weights == "uniform":
        w = np.full(n, 1.0 / n)
    elif weights == "dirichlet":
        w = rng.dirichlet(np.ones(n))
    else:
        raise ValueError(f"unknown weights scheme {weights!r}")
    return FiniteUmmSpace(d, w)
