"""Kingman coalescent, its tree-valued version and dual expectations.

Each pair of blocks merges at rate ``gamma``. The tree-valued dual carries,
next to the partition, external distances ``r'`` that grow at speed 2 for
pairs in different blocks and freeze once the pair is joined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mmspace import Estimate, FiniteUmmSpace, Polynomial


@dataclass(frozen=True)
class Partition:
    blocks: tuple[frozenset, ...]

    def __post_init__(self):
        seen: set = set()
        for blk in self.blocks:
            if not blk or seen & blk:
                raise ValueError("blocks must be nonempty and pairwise disjoint")
            seen |= blk
        if seen != set(range(len(seen))):
            raise ValueError("blocks must cover 0..n-1")
        object.__setattr__(self, "blocks", tuple(sorted(self.blocks, key=min)))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(tuple(frozenset([i]) for i in range(n)))

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    def block_of(self) -> np.ndarray:
        out = np.empty(self.n, dtype=int)
        for a, blk in enumerate(self.blocks):
            out[list(blk)] = a
        return out

    def merge(self, a: int, b: int) -> "Partition":
        """The coalescence of blocks ``a`` and ``b`` (canonical indices)."""
        if a == b:
            raise ValueError("cannot merge a block with itself")
        rest = [blk for i, blk in enumerate(self.blocks) if i not in (a, b)]
        return Partition(tuple(rest) + (self.blocks[a] | self.blocks[b],))

    def __len__(self):
        return len(self.blocks)


@dataclass(frozen=True)
class CoalescentState:
    """Partition at time ``t`` plus external distances.

    ``rprime0`` holds the external distances at ``t0``; ``merge_times[i, j]``
    is when ``i`` and ``j`` joined (``-inf`` if already joined at ``t0``,
    ``inf`` if not yet joined).
    """

    t: float
    t0: float
    partition: Partition
    rprime0: np.ndarray
    merge_times: np.ndarray
    holding_times: tuple[float, ...] = ()

    @classmethod
    def initial(cls, n: int) -> "CoalescentState":
        m = np.full((n, n), np.inf)
        np.fill_diagonal(m, -np.inf)
        return cls(0.0, 0.0, Partition.singletons(n), np.zeros((n, n)), m)

    @property
    def rprime(self) -> np.ndarray:
        grow = np.clip(np.minimum(self.merge_times, self.t) - self.t0, 0.0, None)
        return self.rprime0 + 2.0 * grow


def sample_coalescent(n: int, gamma: float, rng: np.random.Generator, t_end: Optional[float] = None,
                      until_mrca: bool = False, initial: Optional[CoalescentState] = None) -> CoalescentState:
    """Run the coalescent to ``t_end`` or to a single block."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if (t_end is None) == (not until_mrca):
        raise ValueError("give exactly one of t_end or until_mrca=True")
    state = CoalescentState.initial(n) if initial is None else initial
    if state.partition.n != n:
        raise ValueError("initial state has the wrong size")
    part = state.partition
    merge = state.merge_times.copy()
    horizon = math.inf if until_mrca else float(t_end)
    if horizon < state.t:
        raise ValueError("t_end precedes the initial state's time")
    t = state.t
    holds = list(state.holding_times)
    while len(part) > 1:
        b = len(part)
        wait = rng.exponential(1.0 / (gamma * b * (b - 1) / 2))
        if t + wait > horizon:
            break
        t += wait
        holds.append(wait)
        x, y = sorted(rng.choice(b, size=2, replace=False))
        ia, ib = list(part.blocks[x]), list(part.blocks[y])
        merge[np.ix_(ia, ib)] = t
        merge[np.ix_(ib, ia)] = t
        part = part.merge(x, y)
    t_final = t if until_mrca else horizon
    return CoalescentState(t_final, state.t0, part, state.rprime0, merge, tuple(holds))


def coalescent_tree_space(n: int, gamma: float, rng: np.random.Generator) -> FiniteUmmSpace:
    """Leaves of a Kingman tree with ``r_ij = 2 x (time i and j merged)``."""
    st = sample_coalescent(n, gamma, rng, until_mrca=True)
    d = 2.0 * st.merge_times
    np.fill_diagonal(d, 0.0)
    return FiniteUmmSpace.uniform(d)


# --------------------------------------------------------------------------
# vectorised engine: all replicas share the block count at every stage


@dataclass
class CoalescentBatch:
    labels: np.ndarray        # (R, n) block label of each leaf at the horizon
    merge_times: np.ndarray   # (R, n, n) merge times, inf if not merged
    event_times: np.ndarray   # (R, n-1) time the count drops to n-1, ..., 1 (inf if not reached)
    blocks: np.ndarray        # (R,) block count at the horizon


def coalesce_batch(n: int, gamma: float, replicas: int, rng: np.random.Generator,
                   t_end: float = math.inf) -> CoalescentBatch:
    if n < 1 or replicas < 1:
        raise ValueError("n and replicas must be positive")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    R = replicas
    labels = np.tile(np.arange(n), (R, 1))
    merge = np.full((R, n, n), np.inf)
    merge[:, np.arange(n), np.arange(n)] = 0.0
    events = np.full((R, max(n - 1, 0)), np.inf)
    clock = np.zeros(R)
    alive = np.ones(R, dtype=bool)
    for b in range(n, 1, -1):
        clock = clock + rng.exponential(1.0 / (gamma * b * (b - 1) / 2), size=R)
        alive &= clock <= t_end
        x = rng.integers(0, b, size=R)
        y = rng.integers(0, b - 1, size=R)
        y = y + (y >= x)
        x, y = np.minimum(x, y), np.maximum(x, y)
        if not alive.any():
            break
        in_x = labels == x[:, None]
        in_y = labels == y[:, None]
        cross = (in_x[:, :, None] & in_y[:, None, :]) | (in_y[:, :, None] & in_x[:, None, :])
        cross &= alive[:, None, None]
        merge = np.where(cross, clock[:, None, None], merge)
        events[alive, n - b] = clock[alive]
        # fold y into x, then move the last label into y's slot
        upd = alive[:, None]
        labels = np.where(upd & in_y, x[:, None], labels)
        labels = np.where(upd & (labels == b - 1), y[:, None], labels)
    blocks = n - np.isfinite(events).sum(axis=1) if n > 1 else np.ones(R, dtype=int)
    return CoalescentBatch(labels, merge, events, blocks)


def tree_distance_batch(n: int, gamma: float, replicas: int, rng: np.random.Generator) -> np.ndarray:
    """``(R, n, n)`` distance matrices of independent Kingman trees."""
    return 2.0 * coalesce_batch(n, gamma, replicas, rng).merge_times


def tree_lengths(n: int, gamma: float, replicas: int, rng: np.random.Generator) -> np.ndarray:
    """Total branch length of independent Kingman trees on ``n`` leaves."""
    from . import kernels

    d = np.ascontiguousarray(tree_distance_batch(n, gamma, replicas, rng))
    out = np.zeros((replicas, n))
    kernels.subtree_lengths(d, out)
    return out[:, -1]


def dual_matrices(space: FiniteUmmSpace, n: int, gamma: float, t: float, replicas: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Samples of ``(r)^p + r'`` with ``(P, r')`` the coalescent at time ``t``.

    Every block at time ``t`` picks one founder atom from the space's weights;
    leaves inherit the atom of their block.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0 or n == 1:
        labels = np.tile(np.arange(n), (replicas, 1))
        merge = np.full((replicas, n, n), np.inf)
    else:
        batch = coalesce_batch(n, gamma, replicas, rng, t_end=t)
        labels, merge = batch.labels, batch.merge_times
    atoms_by_block = rng.choice(space.n, size=(replicas, n), p=space.weights)
    atoms = np.take_along_axis(atoms_by_block, labels, axis=1)
    founder = space.dist[atoms[:, :, None], atoms[:, None, :]]
    rprime = 2.0 * np.minimum(merge, t)
    out = founder + rprime
    out[:, np.arange(n), np.arange(n)] = 0.0
    return out


def dual_expectation(space: FiniteUmmSpace, n: int, phi: Polynomial, gamma: float, t: float,
                     replicas: int, rng: np.random.Generator) -> Estimate:
    """Monte Carlo estimate of ``E[phi((r)^{P_t} + r'_t)]`` started from singletons."""
    if phi.degree != n:
        raise ValueError(f"polynomial degree {phi.degree} does not match n={n}")
    vals = phi.evaluate(dual_matrices(space, n, gamma, t, replicas, rng))
    se = float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return Estimate(float(vals.mean()), se)


def dual_exp_pair_closed_form(g0: float, gamma: float, sigma: float, t: float) -> float:
    """``E[exp(-sigma r'_12)]`` for two lineages from a space with ``<nu_2, e^{-sigma r}> = g0``."""
    rate = gamma + 2.0 * sigma
    decay = math.exp(-rate * t)
    return gamma / rate * (1.0 - decay) + decay * g0
