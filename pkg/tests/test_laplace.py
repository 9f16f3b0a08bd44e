import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import PAIR_EQUILIBRIUM_UNIT, TRIPLE_EQUILIBRIUM_UNIT, pair_laplace
from umtree import kingman, laplace
from umtree.mmspace import FiniteUmmSpace


@pytest.mark.parametrize("sigma_tilde", [0.5, 1.0, 3.0])
def test_matrix_identities(sigma_tilde):
    m = laplace.build_model(1.0, sigma_tilde / 2, 12)
    I = np.eye(11)
    assert np.abs(m.B @ m.Binv - I).max() <= 1e-9
    assert np.abs(m.A @ m.Ainv - I).max() <= 1e-9
    assert np.abs(m.A @ m.B - m.B @ np.diag(m.D)).max() <= 1e-9


def test_equilibria():
    assert math.isclose(laplace.equilibrium_laplace(1, 1, 2), PAIR_EQUILIBRIUM_UNIT)
    assert math.isclose(laplace.equilibrium_laplace(1, 1, 3), TRIPLE_EQUILIBRIUM_UNIT)
    for n in range(1, 15):
        assert math.isclose(laplace.equilibrium_laplace(1.3, 0.7, n), laplace.equilibrium_gamma_ratio(1.3, 0.7, n))


@pytest.mark.parametrize("t", [0.0, 0.2, 1.0, 4.0])
@pytest.mark.parametrize("gamma, sigma", [(1.0, 1.0), (2.0, 0.3)])
def test_pair_closed_form(t, gamma, sigma):
    m = laplace.build_model(gamma, sigma, 4)
    assert math.isclose(laplace.laplace_closed_form(m, "ones", 2, t), pair_laplace(1.0, gamma, sigma, t),
                        rel_tol=1e-12)


def test_equilibrium_is_stationary():
    m = laplace.build_model(1.0, 1.0)
    for n in range(2, 13):
        assert math.isclose(laplace.laplace_closed_form(m, "equilibrium", n, 3.7),
                            laplace.equilibrium_laplace(1, 1, n), rel_tol=1e-9)


def test_long_time_limit():
    m = laplace.build_model(1.0, 1.0)
    assert math.isclose(laplace.laplace_closed_form(m, "ones", 2, 1e9), 1 / 3, rel_tol=1e-12)


@given(st.integers(2, 10), st.floats(0.0, 10.0), st.sampled_from([0.5, 1.0, 5.0]))
def test_series_matches_matrix_form(n, t, sigma):
    m = laplace.build_model(1.0, sigma)
    a = laplace.laplace_closed_form(m, "ones", n, t)
    b = laplace.laplace_series(1.0, sigma, "ones", n, t)
    assert abs(a - b) <= 1e-9


def test_ode_matches_closed_form():
    times = np.linspace(0, 3, 7)
    res = laplace.laplace_ode(1.0, 1.0, "ones", 3.0, n=6, times=times)
    m = laplace.build_model(1.0, 1.0)
    for t, row in zip(times, res.values):
        for n in range(2, 7):
            assert abs(row[n - 2] - laplace.laplace_closed_form(m, "ones", n, t)) <= 1e-8


def test_richardson_estimate_small():
    res = laplace.laplace_ode(1.0, 0.5, "equilibrium", 1.0, n=4, richardson=True)
    assert res.richardson_error < 1e-10


def test_vector_sigma_reduces_to_scalar():
    # sigma = e_n weights only the last subtree length
    sig = [0, 0, 0, 0, 1.0]
    vec = laplace.laplace_ode(1.0, sig, "ones", 0.8).values[0]
    m = laplace.build_model(1.0, 1.0)
    assert abs(vec - laplace.laplace_closed_form(m, "ones", 5, 0.8)) <= 1e-8


def test_merge_op():
    assert laplace.merge_op((1, 2, 3), 1) == (3, 3)
    assert laplace.merge_op((1, 2, 3), 2) == (1, 5)
    assert laplace.merge_op((1, 2), 2) == (1, 2)
    with pytest.raises(ValueError):
        laplace.merge_op((1, 2), 0)


def test_space_initial_values(rng):
    s = kingman.coalescent_tree_space(5, 1.0, rng)
    h0 = laplace.initial_values(s, 1.0, 1.0, 4)
    assert h0.shape == (3,) and np.all(np.diff(h0) <= 0)
    m = laplace.build_model(1.0, 1.0)
    closed = laplace.laplace_closed_form(m, s, 4, 0.5)
    ode = laplace.laplace_ode(1.0, 1.0, s, 0.5, n=4).values[-1]
    assert abs(closed - ode) < 1e-8


def test_limits_and_errors():
    with pytest.warns(RuntimeWarning):
        laplace.build_model(1.0, 1.0, 13)
    with pytest.raises(ValueError):
        laplace.build_model(1.0, 1.0, 31)
    with pytest.raises(ValueError):
        laplace.build_model(0.0, 1.0)
    with pytest.raises(ValueError):
        laplace.initial_values([0.5, 2.0], 1.0, 1.0, 3)
    with pytest.raises(ValueError):
        laplace.laplace_closed_form(laplace.build_model(1, 1, 4), "ones", 5, 1.0)


def test_segsites_transform_mean():
    # -d/ds E[exp(-s S_n)] at s = 0 is E[S_n] = theta H_{n-1} at gamma = 1
    h = 1e-5
    f = lambda s: laplace.segsites_transform(1.0, 1.0, 5, 0.0, s)
    slope = (-3 * f(0.0) + 4 * f(h) - f(2 * h)) / (2 * h)
    assert abs(-slope - laplace.harmonic(4)) < 1e-5
