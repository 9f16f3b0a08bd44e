"""Mean sample Laplace transforms ``g^n(t, sigma) = E[exp(-sigma l_n)]``.

In the rescaled time ``tau = gamma t / 2`` the vector ``h = (g^2, g^3, ...)``
solves ``h' = A h + b`` with lower-bidiagonal ``A``. Its eigenvector matrix
``B`` and inverse are known in closed form, giving an explicit solution.
All matrices are indexed by ``k, l = 2, ..., n_max`` (stored 0-based).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln

from .mmspace import FiniteUmmSpace

DEFAULT_NMAX = 12
SOFT_NMAX = 12
HARD_NMAX = 30
ODE_DT = 1e-3


def _lbinom(n: int, k: int) -> float:
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


@dataclass(frozen=True)
class LaplaceModel:
    gamma: float
    sigma: float
    sigma_tilde: float
    n_max: int
    A: np.ndarray
    Ainv: np.ndarray
    B: np.ndarray
    Binv: np.ndarray
    D: np.ndarray  # eigenvalues, diagonal of the spectral matrix
    b: np.ndarray

    @property
    def index(self) -> range:
        return range(2, self.n_max + 1)


def build_model(gamma: float, sigma: float, n_max: int = DEFAULT_NMAX) -> LaplaceModel:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    if n_max > HARD_NMAX:
        raise ValueError(f"n_max={n_max} exceeds {HARD_NMAX}; double precision cannot resolve "
                         "the alternating sums, use extended precision")
    if n_max > SOFT_NMAX:
        warnings.warn(f"n_max={n_max} > {SOFT_NMAX}: closed-form entries lose accuracy", RuntimeWarning)
    st = 2.0 * sigma / gamma
    m = n_max - 1
    A = np.zeros((m, m))
    Ainv = np.zeros((m, m))
    B = np.zeros((m, m))
    Binv = np.zeros((m, m))
    for i, k in enumerate(range(2, n_max + 1)):
        A[i, i] = -k * (st + k - 1)
        if i:
            A[i, i - 1] = k * (k - 1)
        for j, l in enumerate(range(2, k + 1)):
            lf = gammaln(k + 1) - gammaln(l + 1) + _lbinom(k - 1, l - 1)
            B[i, j] = math.exp(lf + gammaln(st + 2 * l) - gammaln(st + k + l))
            Binv[i, j] = (-1) ** (k + l) * math.exp(lf + gammaln(st + k + l - 1) - gammaln(st + 2 * k - 1))
            Ainv[i, j] = -math.exp(gammaln(k) + gammaln(st + l - 1) - gammaln(l + 1) - gammaln(st + k))
    D = np.array([-k * (st + k - 1) for k in range(2, n_max + 1)], dtype=float)
    b = np.zeros(m)
    b[0] = 2.0
    return LaplaceModel(gamma, sigma, st, n_max, A, Ainv, B, Binv, D, b)


def _matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    # row-wise compensated sums; the products alternate in sign
    return np.array([math.fsum(M[i, : i + 1] * v[: i + 1]) for i in range(len(v))])


G0Spec = Union[str, float, Sequence[float], FiniteUmmSpace]


def equilibrium_laplace(gamma: float, sigma: float, n: int) -> float:
    """``prod_{k=2}^n 1 / (1 + 2 sigma / (gamma (k-1)))``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return math.prod(1.0 / (1.0 + 2.0 * sigma / (gamma * (k - 1))) for k in range(2, n + 1))


def equilibrium_gamma_ratio(gamma: float, sigma: float, n: int) -> float:
    """``Gamma(n) Gamma(st + 1) / Gamma(st + n)`` with ``st = 2 sigma / gamma``."""
    st = 2.0 * sigma / gamma
    return math.exp(gammaln(n) + gammaln(st + 1) - gammaln(st + n))


def initial_values(g0: G0Spec, gamma: float, sigma: float, n: int,
                   rng: Optional[np.random.Generator] = None, mc_replicas: int = 200_000) -> np.ndarray:
    """``(g^2(0), ..., g^n(0))`` from a spec.

    ``"ones"`` (a single-point start), ``"equilibrium"``, an explicit vector,
    or a space whose sampled subtree lengths are averaged (exactly when the
    number of ordered tuples is at most ``10^6``, else by Monte Carlo).
    """
    if isinstance(g0, str):
        if g0 == "ones":
            return np.ones(n - 1)
        if g0 == "equilibrium":
            return np.array([equilibrium_laplace(gamma, sigma, m) for m in range(2, n + 1)])
        raise ValueError(f"unknown initial condition {g0!r}")
    if isinstance(g0, FiniteUmmSpace):
        return space_laplace(g0, sigma, n, rng=rng, mc_replicas=mc_replicas)
    arr = np.atleast_1d(np.asarray(g0, dtype=float))
    if arr.shape != (n - 1,):
        raise ValueError(f"g0 must list g^2(0)..g^{n}(0) ({n - 1} values), got {arr.shape}")
    if np.any(arr <= 0) or np.any(arr > 1 + 1e-12):
        raise ValueError("initial Laplace values must lie in (0, 1]")
    return arr


def space_laplace(space: FiniteUmmSpace, sigma: float, n: int, rng: Optional[np.random.Generator] = None,
                  mc_replicas: int = 200_000) -> np.ndarray:
    """``E[exp(-sigma l_m)]`` for ``m = 2..n`` under i.i.d. sampling from ``space``."""
    from .subtree import sample_length_vectors
    from . import kernels
    import itertools

    s = space.support
    if len(s) ** n <= 10**6:
        tuples = np.array(list(itertools.product(s, repeat=n)), dtype=np.int64)
        w = np.prod(space.weights[tuples], axis=1)
        mats = np.ascontiguousarray(space.dist[tuples[:, :, None], tuples[:, None, :]])
        L = np.zeros((len(tuples), n))
        kernels.subtree_lengths(mats, L)
        return np.array([math.fsum(w * np.exp(-sigma * L[:, m - 1])) for m in range(2, n + 1)])
    rng = np.random.default_rng(0) if rng is None else rng
    L = sample_length_vectors(space, n, mc_replicas, rng)
    return np.exp(-sigma * L[:, 1:]).mean(axis=0)


def closed_form_vector(model: LaplaceModel, h0: np.ndarray, t: float) -> np.ndarray:
    """``h(tau) = -A^{-1} b + B e^{D tau} (B^{-1} h0 + D^{-1} B^{-1} b)`` at ``tau = gamma t / 2``."""
    m = len(h0)
    tau = 0.5 * model.gamma * t
    B, Binv, D = model.B[:m, :m], model.Binv[:m, :m], model.D[:m]
    c = _matvec(Binv, h0) + _matvec(Binv, model.b[:m]) / D
    stat = -_matvec(model.Ainv[:m, :m], model.b[:m])
    return stat + _matvec(B, np.exp(D * tau) * c)


def laplace_closed_form(model: LaplaceModel, g0: G0Spec, n: int, t: float) -> float:
    """``g^n(t, sigma)`` from the eigen-decomposition."""
    if not 2 <= n <= model.n_max:
        raise ValueError(f"n must lie in 2..{model.n_max}")
    if t < 0:
        raise ValueError("t must be nonnegative")
    h0 = initial_values(g0, model.gamma, model.sigma, n)
    if t == 0:
        return float(h0[-1])
    return float(closed_form_vector(model, h0, t)[-1])


def laplace_series(gamma: float, sigma: float, g0: G0Spec, n: int, t: float) -> float:
    """The displayed explicit series for ``g^n(t, sigma)``, term by term."""
    st = 2.0 * sigma / gamma
    h0 = initial_values(g0, gamma, sigma, n)
    g = {m: h0[m - 2] for m in range(2, n + 1)}
    terms = [math.exp(gammaln(n) + gammaln(st + 1) - gammaln(st + n))]
    for k in range(2, n + 1):
        inner = math.fsum(
            (-1) ** m * math.exp(_lbinom(k - 1, m - 1) + gammaln(st + k + m - 1) - gammaln(m + 1)) * g[m]
            for m in range(2, k + 1)
        )
        inner -= (k - 1) / (k * (st + k - 1)) * math.exp(gammaln(st + k + 1))
        pref = (-1) ** k * (st + 2 * k - 1) * math.exp(gammaln(n + 1) + _lbinom(n - 1, k - 1) - gammaln(st + n + k))
        terms.append(pref * math.exp(-k * (sigma + 0.5 * gamma * (k - 1)) * t) * inner)
    return math.fsum(terms)


# --------------------------------------------------------------------------
# ODE cross-check, including the merging-operator system on sigma vectors


def _canon(sig: Sequence[float]) -> tuple:
    # l_1 = 0, so the first coordinate never matters; trailing zeros are dropped
    s = [0.0] + [float(x) for x in sig[1:]]
    while len(s) > 1 and s[-1] == 0.0:
        s.pop()
    return tuple(s)


def merge_op(sig: Sequence[float], k: int) -> tuple:
    """``tau_k``: add coordinate ``k+1`` into coordinate ``k`` (1-based) and shift the rest."""
    s = list(sig)
    if k < 1:
        raise ValueError("k is 1-based")
    if k >= len(s):
        return tuple(s)
    s[k - 1] = s[k - 1] + s[k]
    del s[k]
    return tuple(s)


@dataclass(frozen=True)
class MergeSystem:
    nodes: list          # canonical sigma vectors, nodes[0] is the zero vector
    matrix: np.ndarray   # d/dt g = matrix @ g


def merge_system(sigma_vec: Sequence[float], gamma: float) -> MergeSystem:
    """Linear system over every sigma vector reachable by merging."""
    root = _canon(sigma_vec)
    nodes = [_canon([0.0])]
    index = {nodes[0]: 0}
    stack = [root]
    edges = []
    while stack:
        s = stack.pop()
        if s in index and s != nodes[0]:
            continue
        if s not in index:
            index[s] = len(nodes)
            nodes.append(s)
        if s == nodes[0]:
            continue
        kill = sum(k * s[k - 1] for k in range(2, len(s) + 1))
        outs = []
        for k in range(1, len(s)):
            child = _canon(merge_op(s, k))
            outs.append((k, child))
            if child not in index:
                stack.append(child)
        edges.append((s, kill, outs))
    M = np.zeros((len(nodes), len(nodes)))
    for s, kill, outs in edges:
        i = index[s]
        M[i, i] -= kill
        for k, child in outs:
            M[i, index[child]] += gamma * k
            M[i, i] -= gamma * k
    return MergeSystem(nodes, M)


def _rk4(M: np.ndarray, y0: np.ndarray, t: float, dt: float, record: Optional[np.ndarray] = None):
    steps = max(1, int(round(t / dt)))
    h = t / steps
    # one RK4 step of a linear system is multiplication by a fixed matrix
    I = np.eye(len(y0))
    hM = h * M
    P = I + hM @ (I + hM / 2 @ (I + hM / 3 @ (I + hM / 4)))
    y = y0.copy()
    out = []
    rec_steps = None if record is None else np.rint(np.asarray(record) / h).astype(int)
    ri = 0
    if rec_steps is not None:
        while ri < len(rec_steps) and rec_steps[ri] == 0:
            out.append(y.copy())
            ri += 1
    for s in range(1, steps + 1):
        y = P @ y
        if not np.all((y >= -1e-12) & (y <= 1 + 1e-6)):
            raise FloatingPointError(f"ODE solution left [0, 1] at t={s * h:.6g}; reduce dt")
        if rec_steps is not None:
            while ri < len(rec_steps) and rec_steps[ri] == s:
                out.append(y.copy())
                ri += 1
    return y, out


@dataclass(frozen=True)
class OdeResult:
    values: np.ndarray
    richardson_error: Optional[float] = None


def laplace_ode(gamma: float, sigma, g0: Union[G0Spec, Callable], t: float, n: Optional[int] = None,
                dt: float = ODE_DT, richardson: bool = False, times: Optional[Sequence[float]] = None) -> OdeResult:
    """Numerical solution of the Laplace-transform ODEs by classical RK4.

    Scalar ``sigma`` with ``n``: the chain ``g^1 = 1, g^2, ..., g^n``; returns
    ``(g^2, ..., g^n)`` at ``t`` (or at each of ``times``). Vector ``sigma``:
    the merging-operator system; ``g0`` is then a callable from canonical
    sigma vectors to initial values, a space, or ``"ones"``; returns the value
    at ``sigma``.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if np.ndim(sigma) == 0:
        if n is None or n < 2:
            raise ValueError("scalar sigma needs n >= 2")
        s = float(sigma)
        h0 = initial_values(g0, gamma, s, n)
        m = n - 1
        M = np.zeros((m + 1, m + 1))  # slot 0 is g^1 == 1
        for i, k in enumerate(range(2, n + 1), start=1):
            M[i, i] = -k * s - gamma * k * (k - 1) / 2
            M[i, i - 1] = gamma * k * (k - 1) / 2
        y0 = np.concatenate([[1.0], h0])
        pick = slice(1, None)
    else:
        sys = merge_system(sigma, gamma)
        if callable(g0):
            y0 = np.array([float(g0(v)) for v in sys.nodes])
        elif isinstance(g0, str) and g0 == "ones":
            y0 = np.ones(len(sys.nodes))
        elif isinstance(g0, FiniteUmmSpace):
            y0 = np.array([_space_vector_laplace(g0, v) for v in sys.nodes])
        else:
            raise ValueError("vector sigma needs g0 as a callable, a space or 'ones'")
        y0[0] = 1.0
        M = sys.matrix
        pick = sys.nodes.index(_canon(sigma))
    if times is not None:
        _, rec = _rk4(M, y0, float(max(times)), dt, record=np.asarray(times))
        vals = np.array([r[pick] for r in rec])
    else:
        y, _ = _rk4(M, y0, t, dt)
        vals = np.atleast_1d(y[pick])
    err = None
    if richardson:
        tt = float(max(times)) if times is not None else t
        y1, _ = _rk4(M, y0, tt, dt)
        y2, _ = _rk4(M, y0, tt, dt / 2)
        err = float(np.max(np.abs(y1 - y2)) / 15.0)
    return OdeResult(vals, err)


def _space_vector_laplace(space: FiniteUmmSpace, sig: tuple) -> float:
    import itertools
    from . import kernels

    m = len(sig)
    if m == 1:
        return 1.0
    s = space.support
    tuples = np.array(list(itertools.product(s, repeat=m)), dtype=np.int64)
    w = np.prod(space.weights[tuples], axis=1)
    mats = np.ascontiguousarray(space.dist[tuples[:, :, None], tuples[:, None, :]])
    L = np.zeros((len(tuples), m))
    kernels.subtree_lengths(mats, L)
    return math.fsum(w * np.exp(-(L @ np.asarray(sig))))


# --------------------------------------------------------------------------
# tree length and segregating sites


def harmonic(n: int) -> float:
    return math.fsum(1.0 / k for k in range(1, n + 1))


def expected_tree_length(gamma: float, n: int) -> float:
    """``E[L_n] = (2 / gamma) H_{n-1}`` for the Kingman coalescent."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return 2.0 / gamma * harmonic(n - 1)


def segsites_sigma(gamma: float, theta: float, sigma: float) -> float:
    return 0.5 * theta * gamma * (1.0 - math.exp(-sigma))


def segsites_transform(gamma: float, theta: float, n: int, t: float, sigma: float,
                       g0: G0Spec = "equilibrium", n_max: Optional[int] = None) -> float:
    """``E[exp(-sigma S_n)]``: the length transform at ``theta gamma (1 - e^{-sigma}) / 2``.

    ``g0`` describes the initial state at the transformed argument (see
    :func:`initial_values`).
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    eff = segsites_sigma(gamma, theta, sigma)
    model = build_model(gamma, eff, max(n, n_max or n))
    return laplace_closed_form(model, g0, n, t)
