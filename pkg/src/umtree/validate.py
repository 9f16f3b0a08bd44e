"""Monte Carlo checks tying the simulators to the analytic results.

Every check is reproducible from ``(name, parameters, seed)``. Replicas run
in fixed-size chunks; chunk ``c`` draws from ``seeds.stream(seed, tag, c)``,
so the outcome does not depend on how many workers execute the chunks.
Tolerances are always ``4 SE`` plus an explicitly reported bias allowance.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kingman, laplace, moran, seeds
from .mmspace import (FiniteUmmSpace, Polynomial, apply_generator_up, evaluate_polynomial, exp_length_polynomial,
                      exp_pair_polynomial)

CHUNK = 250
Z = 4.0


# --------------------------------------------------------------------------
# accumulation


@dataclass
class Welford:
    """Streaming mean and variance; ``merge`` is associative."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def extend(self, xs) -> None:
        xs = np.asarray(xs, dtype=float).ravel()
        if len(xs):
            self.merge(Welford(len(xs), float(xs.mean()), float(((xs - xs.mean()) ** 2).sum())))

    def merge(self, other: "Welford") -> "Welford":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        self.mean += d * other.n / n
        self.m2 += other.m2 + d * d * self.n * other.n / n
        self.n = n
        return self

    @property
    def var(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def se(self) -> float:
        return math.sqrt(self.var / self.n) if self.n > 1 else 0.0


@dataclass
class Check:
    name: str
    passed: bool
    gap: float
    tolerance: float
    detail: dict = field(default_factory=dict)


@dataclass
class ValidationRun:
    name: str
    parameters: dict
    statistics: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    per_replica: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, gap: float, tolerance: float, **detail) -> Check:
        c = Check(name, bool(gap <= tolerance), float(gap), float(tolerance), detail)
        self.checks.append(c)
        return c

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "parameters": self.parameters,
            "statistics": self.statistics,
            "checks": [asdict(c) for c in self.checks],
            "passed": self.passed,
        }

    def write(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(_jsonable(self.to_dict()), indent=1) + "\n")
        if csv_path and self.per_replica:
            cols = list(self.per_replica)
            rows = zip(*(self.per_replica[c] for c in cols))
            with Path(csv_path).open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\r\n")
                w.writerow(cols)
                for r in rows:
                    w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in r])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def run_chunks(fn: Callable, seed: int, tag: str, replicas: int, *args, chunk: int = CHUNK):
    """Call ``fn(rng, count, *args)`` per chunk; results are returned in chunk order."""
    jobs = [(c, min(chunk, replicas - c * chunk)) for c in range(math.ceil(replicas / chunk))]
    workers = min(seeds.max_workers(), len(jobs))
    if workers <= 1:
        return [fn(seeds.stream(seed, tag, c), k, *args) for c, k in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(_chunk_call, fn, seed, tag, c, k, args) for c, k in jobs]
        return [f.result() for f in futs]


def _chunk_call(fn, seed, tag, c, k, args):
    return fn(seeds.stream(seed, tag, c), k, *args)


# --------------------------------------------------------------------------
# Moran-side estimators


def _moran_phi_chunk(rng, count, founder, gamma, sigma, grid):
    out = np.zeros((count, len(grid)))
    for r in range(count):
        phi, _, _ = moran.exp_functional_path(founder, gamma, sigma, grid, rng)
        out[r] = phi
    return out


def _moran_length_chunk(rng, count, founder, gamma, sigma, grid, n, inner):
    # general degree: sample `inner` n-tuples from each snapshot
    poly = exp_length_polynomial(sigma, n)
    out = np.zeros((count, len(grid)))
    for r in range(count):
        snaps = moran.snapshots(founder, gamma, grid, rng)
        for j, s in enumerate(snaps):
            idx = rng.integers(0, s.n, size=(inner, n))
            out[r, j] = poly.evaluate(s.dist[idx[:, :, None], idx[:, None, :]]).mean()
    return out


def moran_laplace(founder: FiniteUmmSpace, gamma: float, sigma: float, times: Sequence[float],
                  replicas: int, seed: int, n: int = 2, inner: int = 64, tag: str = "moran-laplace"):
    """Per-replica Moran estimates of ``<nu_t, exp(-sigma l_n)>`` at each time."""
    grid = np.asarray(sorted(times), dtype=float)
    if n == 2:
        parts = run_chunks(_moran_phi_chunk, seed, tag, replicas, founder, gamma, sigma, grid)
    else:
        parts = run_chunks(_moran_length_chunk, seed, tag, replicas, founder, gamma, sigma, grid, n, inner)
    return grid, np.vstack(parts)


def _dual_chunk(rng, count, space, n, poly, gamma, t):
    return poly.evaluate(kingman.dual_matrices(space, n, gamma, t, count, rng))


def dual_samples(space: FiniteUmmSpace, n: int, poly: Polynomial, gamma: float, t: float,
                 replicas: int, seed: int, tag: str = "dual") -> np.ndarray:
    return np.concatenate(run_chunks(_dual_chunk, seed, tag, replicas, space, n, poly, gamma, t, chunk=5000))


def _resample_founder(space: FiniteUmmSpace, N: int, rng) -> FiniteUmmSpace:
    idx = rng.choice(space.n, size=N, p=space.weights)
    return FiniteUmmSpace.uniform(space.dist[np.ix_(idx, idx)])


# --------------------------------------------------------------------------
# duality


def calibrate_bias(space: FiniteUmmSpace, n: int, sigma: float, gamma: float, t: float,
                   Ns: Sequence[int], replicas: int, seed: int) -> dict:
    """Fit ``moran - dual = c / N`` over several population sizes.

    Founders of size ``N`` are i.i.d. resamples of ``space``, so each size
    is compared with the dual started from its own founder.
    """
    poly = exp_length_polynomial(sigma, n) if n != 2 else exp_pair_polynomial(sigma)
    xs, ys, ws = [], [], []
    rows = []
    for N in Ns:
        founder = _resample_founder(space, N, seeds.stream(seed, f"calib-founder-{N}"))
        _, m = moran_laplace(founder, gamma, sigma, [t], replicas, seed, n, tag=f"calib-moran-{N}")
        d = dual_samples(founder, n, poly, gamma, t, max(replicas, 20_000), seed, tag=f"calib-dual-{N}")
        diff = m[:, 0].mean() - d.mean()
        se = math.sqrt(m[:, 0].var(ddof=1) / len(m) + d.var(ddof=1) / len(d))
        xs.append(1.0 / N)
        ys.append(diff)
        ws.append(1.0 / max(se, 1e-12) ** 2)
        rows.append({"N": N, "diff": diff, "se": se})
    x, y, w = map(np.asarray, (xs, ys, ws))
    c = float((w * x * y).sum() / (w * x * x).sum())
    c_se = float(1.0 / math.sqrt((w * x * x).sum()))
    return {"c": c, "c_se": c_se, "points": rows, "t": t}


def check_duality(space: FiniteUmmSpace, n: int = 2, sigma: float = 1.0, gamma: float = 1.0,
                  t: Sequence[float] | float = 1.0, replicas: int = 10_000, seed: int = 0,
                  dual_replicas: Optional[int] = None, calibrate: bool = True,
                  calib_Ns: Sequence[int] = (50, 100, 200, 400), calib_replicas: int = 200) -> ValidationRun:
    """Moran ``E[<nu_t, phi>]`` against the coalescent dual, per time point."""
    if not space.is_uniform():
        raise ValueError("duality check needs a uniform-weight founder")
    if space.n < n:
        raise ValueError(f"founder has {space.n} atoms, fewer than n={n}")
    times = sorted(np.atleast_1d(np.asarray(t, dtype=float)).tolist())
    dual_replicas = replicas if dual_replicas is None else dual_replicas
    N = space.n
    run = ValidationRun("duality", {"n": n, "sigma": sigma, "gamma": gamma, "t": times, "N": N,
                                    "replicas": replicas, "dual_replicas": dual_replicas, "seed": seed})
    poly = exp_length_polynomial(sigma, n) if n != 2 else exp_pair_polynomial(sigma)
    cal = {"c": 0.0, "c_se": 0.0, "points": []}
    if calibrate and max(times) > 0:
        cal = calibrate_bias(space, n, sigma, gamma, max(times), calib_Ns, calib_replicas, seed)
    run.statistics["calibration"] = cal
    allowance = abs(cal["c"]) / N
    grid, m = moran_laplace(space, gamma, sigma, times, replicas, seed, n)
    run.per_replica = {f"moran_t{tt:g}": m[:, j].tolist() for j, tt in enumerate(grid)}
    for j, tt in enumerate(grid):
        a = Welford()
        a.extend(m[:, j])
        d = dual_samples(space, n, poly, gamma, float(tt), dual_replicas, seed, tag=f"dual-{tt:g}")
        b = Welford()
        b.extend(d)
        stat = {"moran": a.mean, "moran_se": a.se, "dual": b.mean, "dual_se": b.se}
        if n == 2:
            g0 = evaluate_polynomial(space, poly).value
            stat["closed_form"] = kingman.dual_exp_pair_closed_form(g0, gamma, sigma, float(tt))
        run.statistics[f"t={tt:g}"] = stat
        run.add(f"t={tt:g}", abs(a.mean - b.mean), Z * (a.se + b.se) + allowance,
                bias_allowance=allowance)
    return run


# --------------------------------------------------------------------------
# martingale problem


def _martingale_chunk(rng, count, founder, gamma, sigma, grid):
    inv_n = 1.0 / founder.n
    out = np.zeros((count, 5))
    for r in range(count):
        phi, var_rho, qv, phi2 = moran.exp_functional_path(founder, gamma, sigma, grid, rng, squared=True)
        fv = -2.0 * sigma * phi + gamma * (1.0 - phi)
        exact = fv + 2.0 * sigma * inv_n
        out[r, 0] = phi[-1] - phi[0] - np.trapezoid(exact, grid)
        out[r, 1] = qv[-1]
        # a k -> l jump is (2/N)(rho_k - rho_l) + 2(1 - g_kl)/N^2; the cross term cancels
        pair = 2.0 * gamma * inv_n * inv_n * (1.0 - 2.0 * phi + phi2)
        out[r, 2] = np.trapezoid(4.0 * gamma * var_rho + pair, grid)
        out[r, 3] = phi[-1]
        out[r, 4] = phi[-1] - phi[0] - np.trapezoid(fv, grid)
    return out


def _generic_martingale_chunk(rng, count, founder, gamma, poly, grid):
    out = np.full((count, 5), np.nan)
    for r in range(count):
        snaps = moran.snapshots(founder, gamma, grid, rng)
        vals = np.array([evaluate_polynomial(s, poly).value for s in snaps])
        exact = np.array([apply_generator_up(s, poly, gamma, growth="distinct").value for s in snaps])
        fv = np.array([apply_generator_up(s, poly, gamma).value for s in snaps])
        out[r, 0] = vals[-1] - vals[0] - np.trapezoid(exact, grid)
        out[r, 3] = vals[-1]
        out[r, 4] = vals[-1] - vals[0] - np.trapezoid(fv, grid)
    return out


def check_martingale(space: FiniteUmmSpace, poly: Optional[Polynomial] = None, gamma: float = 1.0,
                     t_end: float = 1.0, replicas: int = 2000, seed: int = 0,
                     points_per_unit: int = 100, qv_tolerance: float = 0.15) -> ValidationRun:
    """Drift of ``M_t = Phi(U_t) - Phi(U_0) - int_0^t Omega Phi(U_s) ds`` along Moran paths.

    ``Omega`` is the generator of the ``N``-individual dynamics on
    snapshots: growth acts only between distinct individuals. The
    Fleming-Viot compensator (growth on every sampled pair) is reported too;
    its drift is ``O(1/N)`` and is not part of the verdict.

    For ``phi = exp(-sigma r_12)`` both generators are linear in ``Phi``, so
    a compiled path kernel is used, and the quadratic variation
    ``sum (dPhi)^2`` is compared with ``int 4 gamma Var_i(rho_i) ds`` where
    ``rho_i`` is the row mean of ``exp(-sigma r_ij)``. Other polynomials go
    through exact generator evaluation on snapshots (small ``N`` only).
    """
    poly = exp_pair_polynomial(1.0) if poly is None else poly
    grid = np.linspace(0.0, t_end, max(2, int(round(points_per_unit * t_end)) + 1))
    N = space.n
    run = ValidationRun("martingale", {"poly": poly.name, "gamma": gamma, "t_end": t_end, "N": N,
                                       "replicas": replicas, "seed": seed, "grid_points": len(grid)})
    if poly.kind and poly.kind[0] == "const":
        run.statistics["drift"] = 0.0
        run.add("drift", 0.0, 0.0)
        return run
    pair = bool(poly.kind) and poly.kind[0] == "exp_pair"
    if pair:
        res = np.vstack(run_chunks(_martingale_chunk, seed, "martingale", replicas, space, gamma,
                                   poly.kind[1], grid))
    else:
        res = np.vstack(run_chunks(_generic_martingale_chunk, seed, "martingale", replicas, space, gamma,
                                   poly, grid))
    drift, fv = Welford(), Welford()
    drift.extend(res[:, 0])
    fv.extend(res[:, 4])
    run.per_replica = {"M_t": res[:, 0].tolist(), "M_t_fleming_viot": res[:, 4].tolist()}
    run.statistics.update({"drift": drift.mean, "drift_se": drift.se,
                           "drift_fleming_viot": fv.mean, "drift_fleming_viot_se": fv.se})
    if pair:
        run.statistics["drift_fleming_viot_expected"] = 2.0 * poly.kind[1] * t_end / N
    run.add("drift", abs(drift.mean), Z * drift.se)
    if pair:
        qe, qf = Welford(), Welford()
        qe.extend(res[:, 1])
        qf.extend(res[:, 2])
        rel = abs(qe.mean - qf.mean) / abs(qf.mean) if qf.mean else math.inf
        run.per_replica.update({"qv_empirical": res[:, 1].tolist(), "qv_formula": res[:, 2].tolist()})
        run.statistics.update({"qv_empirical": qe.mean, "qv_empirical_se": qe.se,
                               "qv_formula": qf.mean, "qv_formula_se": qf.se, "qv_relative_gap": rel})
        run.add("quadratic_variation", rel, qv_tolerance)
    return run


# --------------------------------------------------------------------------
# equilibrium


def _drop_chunk(rng, count, N, gamma, t_end):
    out = np.zeros((count, N - 1))
    founder = FiniteUmmSpace.uniform(np.zeros((N, N)))
    for r in range(count):
        st = moran.simulate(founder, gamma, t_end, rng)
        out[r] = moran.ancestor_drop_times(st)
    return out


def death_chain_chi2(drops: np.ndarray, N: int, gamma: float, levels: Sequence[int], bins: int = 10) -> dict:
    """Chi-square of scaled holding times ``gamma C(k,2) T_k`` against Exp(1)."""
    from scipy.stats import chi2

    out = {}
    edges = -np.log(1.0 - np.arange(1, bins) / bins)
    for k in levels:
        # count drops from k to k-1 at index N-k; holding at level k is the gap from the previous drop
        start = drops[:, N - k - 1] if k < N else np.zeros(len(drops))
        stop = drops[:, N - k]
        ok = np.isfinite(stop)
        hold = (stop[ok] - start[ok]) * gamma * k * (k - 1) / 2
        counts = np.bincount(np.searchsorted(edges, hold), minlength=bins)
        expected = len(hold) / bins
        stat = float(((counts - expected) ** 2 / expected).sum())
        out[k] = {"n": int(len(hold)), "chi2": stat, "p": float(chi2.sf(stat, bins - 1))}
    return out


def check_equilibrium(gamma: float = 1.0, n: int = 2, sigma: float = 1.0,
                      t_list: Sequence[float] = (1, 2, 4, 8), replicas: int = 2000, seed: int = 0,
                      N: int = 200, big_sigma: float = 1e3, chain_N: int = 30,
                      chain_replicas: int = 10_000, chain_levels: Sequence[int] = (2, 3, 4, 5)) -> ValidationRun:
    """Convergence of Moran Laplace transforms to the coalescent equilibrium.

    Starts from a single-type population (all distances 0), so the residual
    is largest at ``t = 0``.
    """
    times = sorted(float(x) for x in t_list)
    run = ValidationRun("equilibrium", {"gamma": gamma, "n": n, "sigma": sigma, "t_list": times,
                                        "replicas": replicas, "seed": seed, "N": N,
                                        "big_sigma": big_sigma, "chain_N": chain_N})
    founder = FiniteUmmSpace.uniform(np.zeros((N, N)))
    target = laplace.equilibrium_laplace(gamma, sigma, n)
    grid, m = moran_laplace(founder, gamma, sigma, times, replicas, seed, n, tag="equilibrium")
    resid, ses = [], []
    for j, tt in enumerate(grid):
        w = Welford()
        w.extend(m[:, j])
        resid.append(abs(w.mean - target))
        ses.append(w.se)
        run.statistics[f"t={tt:g}"] = {"estimate": w.mean, "se": w.se, "equilibrium": target}
    # residual decay, allowing for noise once the residual is below it
    worst = max((resid[i + 1] - resid[i] - Z * (ses[i] + ses[i + 1]) for i in range(len(resid) - 1)), default=0.0)
    run.add("residual_decay", max(worst, 0.0), 0.0)
    run.add("limit", resid[-1], Z * ses[-1] + 1.0 / N)
    # non-atomicity proxy
    _, big = moran_laplace(founder, gamma, big_sigma, [t for t in times if t > 0], max(replicas // 10, 20),
                           seed, 2, tag="equilibrium-big-sigma")
    run.statistics["big_sigma_moran"] = big.mean(axis=0).tolist()
    run.add("non_atomic", float(big.mean(axis=0).max()), 0.05)
    # ancestor counts follow the Kingman death chain
    drops = np.vstack(run_chunks(_drop_chunk, seed, "death-chain", chain_replicas, chain_N, gamma,
                                 12.0 / gamma, chunk=1000))
    chi = death_chain_chi2(drops, chain_N, gamma, chain_levels)
    run.statistics["death_chain"] = chi
    worst_p = min(v["p"] for v in chi.values())
    run.add("death_chain", 0.001 - worst_p if worst_p < 0.001 else 0.0, 0.0, min_p=worst_p)
    return run


# --------------------------------------------------------------------------
# pathwise checks on the Moran simulator


def _random_founder(N, rng, scale):
    from .mmspace import random_ultrametric

    return random_ultrametric(N, rng, scale=scale)


def check_jump_bound(runs: int = 1000, N_max: int = 50, gamma: float = 1.0, t_end: float = 0.5,
                     seed: int = 0) -> ValidationRun:
    """Every event moves the identity-labelled snapshot distance by at most ``2/N``."""
    run = ValidationRun("jump_bound", {"runs": runs, "N_max": N_max, "gamma": gamma, "t_end": t_end, "seed": seed})
    violations, events, worst = 0, 0, 0.0
    for r in range(runs):
        rng = seeds.stream(seed, "jump-bound", r)
        N = int(rng.integers(2, N_max + 1))
        st = moran.simulate(_random_founder(N, rng, 0.5), gamma, t_end, rng, record_jumps=True)
        j = st.jumps if st.jumps is not None else np.zeros(0)
        violations += int(np.count_nonzero(j > 2.0 / N))
        events += len(j)
        if len(j):
            worst = max(worst, float((j * N / 2).max()))
    run.statistics.update({"events": events, "violations": violations, "max_jump_times_N_over_2": worst})
    run.add("violations", violations, 0)
    return run


def check_coupling(runs: int = 1000, N_max: int = 50, gamma: float = 1.0, t_end: float = 0.5,
                   seed: int = 0, scale: float = 0.4) -> ValidationRun:
    """Identity-coupling distance of coupled runs never increases at an event (zero tolerance).

    Also reports the mean distance at ``t_end`` against its initial value,
    which is where the inequality holds on average.
    """
    run = ValidationRun("coupling", {"runs": runs, "N_max": N_max, "gamma": gamma, "t_end": t_end,
                                     "seed": seed, "scale": scale})
    violations, events, runs_bad, worst = 0, 0, 0, 0.0
    start, end = Welford(), Welford()
    for r in range(runs):
        rng = seeds.stream(seed, "coupling", r)
        N = int(rng.integers(2, N_max + 1))
        f1, f2 = _random_founder(N, rng, scale), _random_founder(N, rng, scale)
        cr = moran.simulate_coupled(f1, f2, gamma, t_end, rng)
        seq = np.concatenate([[cr.initial_distance], cr.distances])
        inc = np.diff(seq)
        bad = int(np.count_nonzero(inc > 0))
        violations += bad
        runs_bad += bad > 0
        events += len(inc)
        if len(inc):
            worst = max(worst, float(inc.max()))
        start.add(cr.initial_distance)
        end.add(seq[-1])
    run.statistics.update({"events": events, "violations": violations, "runs_with_violation": runs_bad,
                           "largest_increase": worst, "mean_initial": start.mean, "mean_final": end.mean,
                           "mean_final_se": end.se})
    run.add("pathwise_monotone", violations, 0)
    return run
