"""End-to-end acceptance criteria 1-11.

Each test prints one ``criterion N: PASS|FAIL`` line (visible under ``pytest -v``)
and then asserts the same verdict. Runtime budgets are part of each verdict.
"""

import itertools
import math
import time

import numpy as np
import pytest

from oracles import (KINGMAN_LAPLACE_L5, KINGMAN_MEAN_L5, SEGSITES_MEAN_5, THREE_POINT_LENGTH,
                     THREE_POINT_LSTAR, THREE_POINT_UPPER)
from umtree import kingman, laplace, reconstruct, subtree, validate
from umtree.mmspace import FiniteUmmSpace, exp_pair_polynomial, find_measure_isometry, random_ultrametric


@pytest.fixture
def verdict(capsys):
    t0 = time.perf_counter()

    def report(number, ok, detail="", budget=None):
        elapsed = time.perf_counter() - t0
        if budget is not None and elapsed > budget:
            ok = False
            detail += f" [over budget {elapsed:.1f}s > {budget}s]"
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s) {detail}")
        assert ok, f"criterion {number}: {detail}"

    return report


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return x.mean(), x.std(ddof=1) / math.sqrt(len(x))


class TestAcceptance:
    def test_01_matrix_identities(self, verdict):
        worst = 0.0
        for st in (0.5, 1.0, 3.0):
            m = laplace.build_model(1.0, st / 2, n_max=12)
            eye = np.eye(m.n_max - 1)
            worst = max(worst,
                        np.abs(m.B @ m.Binv - eye).max(),
                        np.abs(m.A @ m.Ainv - eye).max(),
                        np.abs(m.A @ m.B - m.B * m.D[None, :]).max())
        verdict(1, worst <= 1e-9, f"max entry error {worst:.2e}", budget=1.0)

    def test_02_closed_form_vs_ode(self, verdict):
        grid = np.linspace(0.0, 10.0, 41)
        worst = 0.0
        for sigma in (0.5, 1.0, 5.0):
            model = laplace.build_model(1.0, sigma, n_max=10)
            for g0 in ("equilibrium", "ones"):
                ode = laplace.laplace_ode(1.0, sigma, g0, 10.0, n=10, times=grid).values
                for i, t in enumerate(grid):
                    h0 = laplace.initial_values(g0, 1.0, sigma, 10)
                    closed = laplace.closed_form_vector(model, h0, t) if t > 0 else h0
                    worst = max(worst, float(np.abs(closed - ode[i]).max()))
        verdict(2, worst <= 1e-6, f"max |closed - ode| = {worst:.2e}", budget=10.0)

    def test_03_kingman_equilibrium(self, verdict):
        L = kingman.tree_lengths(5, 1.0, 100_000, np.random.default_rng(2024))
        m_exp, se_exp = mean_se(np.exp(-L))
        m_len, se_len = mean_se(L)
        ok = abs(m_exp - KINGMAN_LAPLACE_L5) <= 4 * se_exp and abs(m_len - KINGMAN_MEAN_L5) <= 4 * se_len
        verdict(3, ok, f"E[exp(-L5)] = {m_exp:.5f} +- {se_exp:.5f} (1/15), "
                       f"E[L5] = {m_len:.4f} +- {se_len:.4f} (25/6)", budget=30.0)

    def test_04_duality(self, verdict):
        founder = kingman.coalescent_tree_space(200, 1.0, np.random.default_rng(4))
        run = validate.check_duality(founder, n=2, sigma=1.0, gamma=1.0, t=[0.5, 1.0, 2.0],
                                     replicas=10_000, seed=4)
        gaps = ", ".join(f"{c.name} gap {c.gap:.4f} <= {c.tolerance:.4f}" for c in run.checks)
        verdict(4, run.passed, gaps, budget=300.0)

    def test_05_martingale(self, verdict):
        founder = kingman.coalescent_tree_space(200, 1.0, np.random.default_rng(5))
        run = validate.check_martingale(founder, exp_pair_polynomial(1.0), gamma=1.0, t_end=1.0,
                                        replicas=10_000, seed=5)
        s = run.statistics
        verdict(5, run.passed, f"drift {s['drift']:.5f} +- {s['drift_se']:.5f}, "
                               f"QV relative gap {s['qv_relative_gap']:.4f}", budget=300.0)

    def test_06_coupling_monotone(self, verdict):
        run = validate.check_coupling(runs=1000, N_max=50, seed=6)
        s = run.statistics
        verdict(6, run.passed, f"{s['violations']} increases in {s['runs_with_violation']} runs; "
                               f"mean distance {s['mean_initial']:.4f} -> {s['mean_final']:.4f}")

    def test_07_jump_bound(self, verdict):
        run = validate.check_jump_bound(runs=1000, N_max=50, seed=7)
        s = run.statistics
        verdict(7, run.passed, f"{s['violations']} jumps above 2/N over {s['events']} events, "
                               f"max jump as a fraction of 2/N = {s['max_jump_times_N_over_2']:.4f}")

    def test_08_subtree_length(self, verdict):
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(1000):
            m = int(rng.integers(2, 9))
            d = random_ultrametric(m, rng, scale=float(rng.uniform(0.5, 5.0))).dist
            worst = max(worst, abs(subtree.subtree_length(d, "fast") - subtree.subtree_length(d, "brute")))
        three = FiniteUmmSpace.from_upper(3, THREE_POINT_UPPER).dist
        ok = worst <= 1e-9 and subtree.subtree_length(three) == THREE_POINT_LENGTH
        verdict(8, ok, f"max |fast - brute| = {worst:.2e}, three-point length "
                       f"{subtree.subtree_length(three)}", budget=10.0)

    def test_09_reconstruction(self, verdict):
        rng = np.random.default_rng(9)
        failures = 0
        for _ in range(1000):
            n = int(rng.integers(1, 7))
            src = random_ultrametric(n, rng, scale=float(rng.uniform(0.5, 3.0)), weights="dirichlet")
            rec = reconstruct.reconstruct_exact(src).space
            if find_measure_isometry(src, rec, dist_tol=1e-9, weight_tol=1e-9) is None:
                failures += 1
        example = reconstruct.recover_metric(THREE_POINT_LSTAR, 3)
        upper = sorted(example[np.triu_indices(3, 1)].tolist())
        ok = failures == 0 and np.allclose(upper, sorted(THREE_POINT_UPPER), rtol=0, atol=1e-12)
        verdict(9, ok, f"{failures} of 1000 round trips failed; l* = (0, 2, 7) gives {upper}", budget=60.0)

    def test_10_segregating_sites(self, verdict):
        rng = np.random.default_rng(10)
        L = kingman.tree_lengths(5, 1.0, 100_000, rng)
        S = subtree.segregating_sites(L, 1.0, 1.0, rng)
        m, se = mean_se(S)
        verdict(10, abs(m - SEGSITES_MEAN_5) <= 4 * se, f"E[S5] = {m:.4f} +- {se:.4f} (25/12)", budget=60.0)

    def test_11_non_atomic(self, verdict):
        model = laplace.build_model(1.0, 1000.0, n_max=2)
        closed = max(laplace.laplace_closed_form(model, "ones", 2, t) for t in (1.0, 2.0, 5.0, 10.0))
        founder = FiniteUmmSpace.uniform(np.zeros((400, 400)))
        _, m = validate.moran_laplace(founder, 1.0, 1000.0, [1.0, 2.0], 100, seed=11)
        moran = float(m.mean(axis=0).max())
        verdict(11, closed <= 0.01 and moran < 0.05, f"closed form max {closed:.2e}, Moran N=400 {moran:.4f}")


def test_criteria_are_numbered():
    names = sorted(n for n in dir(TestAcceptance) if n.startswith("test_"))
    assert [int(n.split("_")[1]) for n in names] == list(range(1, 12))
    assert all(itertools.starmap(lambda a, b: a < b, zip(names, names[1:])))
