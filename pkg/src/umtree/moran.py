"""Tree-valued Moran dynamics via the graphical representation.

Every ordered pair ``(k, l)`` of individuals carries a Poisson clock of rate
``gamma / 2``. When it rings, ``l`` dies and is replaced by an offspring of
``k``: the distances from ``l`` become those from ``k`` and ``r(k, l)`` drops
to 0. Between events every distance between distinct lineages grows at
speed 2.

Internally a state keeps ``b[i, j]``, the time at which ``i`` and ``j`` last
shared an ancestor, so ``r_ij(t) = 2 (t - b_ij)``. Founder distances map to
negative times ``-r0 / 2``. This makes growth free and each event O(N).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .mmspace import FiniteUmmSpace, SpaceError


@dataclass(frozen=True)
class EventStream:
    times: np.ndarray
    donors: np.ndarray
    recipients: np.ndarray

    def __len__(self):
        return len(self.times)


def draw_events(n: int, gamma: float, t0: float, t1: float, rng: np.random.Generator) -> EventStream:
    """Superposition of the ``n^2`` pair clocks on ``(t0, t1]``.

    One clock of rate ``gamma n^2 / 2`` with a uniform ordered pair per ring;
    self-pairs ``k == l`` are kept in the log and act as no-ops.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    count = rng.poisson(0.5 * gamma * n * n * (t1 - t0)) if gamma > 0 and t1 > t0 else 0
    times = np.sort(rng.uniform(t0, t1, size=count))
    donors = rng.integers(0, n, size=count, dtype=np.int64)
    recipients = rng.integers(0, n, size=count, dtype=np.int64)
    return EventStream(times, donors, recipients)


def _long(a) -> np.ndarray:
    # Cython signatures take C ``long``; on every supported platform that is int64
    return np.ascontiguousarray(a, dtype=np.int_)


def _check_founder(founder: FiniteUmmSpace):
    if not founder.is_uniform():
        raise SpaceError("Moran founders must carry uniform weights")


@dataclass
class MoranState:
    """Population of size ``N`` at time ``t`` with its full event history."""

    N: int
    gamma: float
    t: float
    founder_dist: np.ndarray
    b: np.ndarray
    ancestry: np.ndarray
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    donors: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int_))
    recipients: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int_))
    jumps: Optional[np.ndarray] = None

    @classmethod
    def start(cls, founder: FiniteUmmSpace, gamma: float) -> "MoranState":
        _check_founder(founder)
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        b = -0.5 * np.array(founder.dist, dtype=float)
        return cls(founder.n, float(gamma), 0.0, np.array(founder.dist), np.ascontiguousarray(b),
                   np.arange(founder.n, dtype=np.int_))

    @property
    def dist(self) -> np.ndarray:
        d = 2.0 * (self.t - self.b)
        np.fill_diagonal(d, 0.0)
        return d

    @property
    def event_log(self) -> list[tuple[float, int, int]]:
        return list(zip(self.times.tolist(), self.donors.tolist(), self.recipients.tolist()))

    def apply(self, events: EventStream, t_end: float, record_jumps: bool = False) -> None:
        if t_end < self.t:
            raise ValueError(f"cannot move state at t={self.t} back to {t_end}")
        if len(events) and (events.times[0] < self.t or events.times[-1] > t_end):
            raise ValueError("events lie outside the advance window")
        donors, recipients = _long(events.donors), _long(events.recipients)
        times = np.ascontiguousarray(events.times, dtype=float)
        jumps = np.zeros(len(times) if record_jumps else 0)
        kernels.apply_events(self.b, self.ancestry, times, donors, recipients, jumps)
        self.times = np.concatenate([self.times, times])
        self.donors = np.concatenate([self.donors, donors])
        self.recipients = np.concatenate([self.recipients, recipients])
        if record_jumps:
            self.jumps = jumps if self.jumps is None else np.concatenate([self.jumps, jumps])
        self.t = float(t_end)

    def advance(self, t_end: float, rng: np.random.Generator, record_jumps: bool = False) -> "MoranState":
        self.apply(draw_events(self.N, self.gamma, self.t, t_end, rng), t_end, record_jumps)
        return self


def simulate(founder: FiniteUmmSpace, gamma: float, t_end: float, rng: np.random.Generator,
             record_jumps: bool = False) -> MoranState:
    """Run the dynamics from ``founder`` up to ``t_end``."""
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    return MoranState.start(founder, gamma).advance(t_end, rng, record_jumps)


def snapshot(state: MoranState) -> FiniteUmmSpace:
    return FiniteUmmSpace.uniform(state.dist)


def snapshots(founder: FiniteUmmSpace, gamma: float, times, rng: np.random.Generator) -> list[FiniteUmmSpace]:
    """Snapshots of one trajectory at each of the sorted ``times``."""
    state = MoranState.start(founder, gamma)
    out = []
    for t in times:
        state.advance(float(t), rng)
        out.append(snapshot(state))
    return out


@dataclass
class CoupledRun:
    first: MoranState
    second: MoranState
    distances: np.ndarray  # identity-coupling distance after each event
    initial_distance: float


def identity_coupling_distance(d1: np.ndarray, d2: np.ndarray) -> float:
    n = d1.shape[0]
    return float(np.minimum(np.abs(d1 - d2), 1.0).sum()) / (n * n)


def simulate_coupled(founder1: FiniteUmmSpace, founder2: FiniteUmmSpace, gamma: float,
                     t_end: float, rng: np.random.Generator) -> CoupledRun:
    """Drive two populations with one shared event stream."""
    if founder1.n != founder2.n:
        raise SpaceError(f"coupled founders differ in size ({founder1.n} vs {founder2.n})")
    s1 = MoranState.start(founder1, gamma)
    s2 = MoranState.start(founder2, gamma)
    ev = draw_events(s1.N, gamma, 0.0, t_end, rng)
    donors, recipients = _long(ev.donors), _long(ev.recipients)
    dists = np.zeros(len(ev))
    kernels.apply_events_coupled(s1.b, s2.b, s1.ancestry, ev.times, donors, recipients, dists)
    for s in (s1, s2):
        s.times, s.donors, s.recipients = ev.times.copy(), donors.copy(), recipients.copy()
        s.t = float(t_end)
    s2.ancestry = s1.ancestry.copy()
    return CoupledRun(s1, s2, dists, identity_coupling_distance(founder1.dist, founder2.dist))


def ancestor_drop_times(state: MoranState, n: Optional[int] = None) -> np.ndarray:
    """Look-back times at which the ancestor count of the population first
    reaches ``N-1, N-2, ..., 1`` (``inf`` where the history is too short)."""
    out = np.full(max(state.N - 1, 0), np.inf)
    kernels.lineage_drop_times(state.N, state.times, _long(state.donors), _long(state.recipients),
                               state.t, out)
    return out


def ancestor_count(state: MoranState, eps: float) -> int:
    """Number of distinct ancestors, at time ``t - eps``, of the population alive at ``t``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if eps > state.t:
        raise ValueError(f"eps={eps} reaches back before time 0 (t={state.t})")
    drops = ancestor_drop_times(state)
    return int(state.N - np.count_nonzero(drops <= eps))


def write_trajectory_csv(state: MoranState, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["time", "event_donor", "event_recipient"])
        for t, k, l in zip(state.times, state.donors, state.recipients):
            w.writerow([f"{t:.17g}", int(k), int(l)])


def read_trajectory_csv(path) -> EventStream:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return EventStream(np.array([float(r["time"]) for r in rows]),
                       np.array([int(r["event_donor"]) for r in rows], dtype=np.int_),
                       np.array([int(r["event_recipient"]) for r in rows], dtype=np.int_))


def exp_functional_path(founder: FiniteUmmSpace, gamma: float, sigma: float, grid,
                        rng: np.random.Generator, squared: bool = False):
    """``Phi(t) = <nu_t, exp(-sigma r_12)>`` on ``grid`` along one trajectory.

    Returns ``(phi, var_rho, qv)``: the functional, the variance over
    individuals of ``rho_i = (1/N) sum_j exp(-sigma r_ij)``, and the running
    sum of squared jumps of ``Phi``. With ``squared`` the same trajectory is
    also evaluated at ``2 sigma`` and appended as a fourth array.
    """
    _check_founder(founder)
    grid = np.ascontiguousarray(grid, dtype=float)
    if len(grid) and (grid[0] < 0 or np.any(np.diff(grid) < 0)):
        raise ValueError("grid must be sorted and nonnegative")
    t_end = float(grid[-1]) if len(grid) else 0.0
    ev = draw_events(founder.n, gamma, 0.0, t_end, rng)
    phi, var_rho, qv = (np.zeros(len(grid)) for _ in range(3))
    kernels.exp_functional_path(np.ascontiguousarray(founder.dist), ev.times, _long(ev.donors),
                                _long(ev.recipients), float(sigma), grid, phi, var_rho, qv)
    if not squared:
        return phi, var_rho, qv
    phi2, scratch, scratch2 = (np.zeros(len(grid)) for _ in range(3))
    kernels.exp_functional_path(np.ascontiguousarray(founder.dist), ev.times, _long(ev.donors),
                                _long(ev.recipients), 2.0 * float(sigma), grid, phi2, scratch, scratch2)
    return phi, var_rho, qv, phi2
