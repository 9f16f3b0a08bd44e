import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ultrametric_matrices
from oracles import THREE_POINT_LENGTH, THREE_POINT_UPPER
from umtree import subtree
from umtree.mmspace import FiniteUmmSpace, SpaceError


def test_three_point_length():
    d = FiniteUmmSpace.from_upper(3, THREE_POINT_UPPER).dist
    assert subtree.subtree_length(d, "brute") == THREE_POINT_LENGTH
    assert subtree.subtree_length(d, "fast") == THREE_POINT_LENGTH
    np.testing.assert_allclose(subtree.prefix_lengths(d), [0.0, 2.0, 7.0])


@pytest.mark.parametrize("m", [0, 1])
def test_degenerate(m):
    assert subtree.subtree_length(np.zeros((m, m)), "fast") == 0.0


def test_star_tree():
    # four leaves joined at one root of height h: length 4h, distances 2h
    d = np.full((4, 4), 3.0)
    np.fill_diagonal(d, 0.0)
    assert math.isclose(subtree.subtree_length(d), 6.0)


@given(ultrametric_matrices(max_n=8))
def test_fast_equals_brute(d):
    assert abs(subtree.subtree_length(d, "fast") - subtree.subtree_length(d, "brute")) <= 1e-9


@given(ultrametric_matrices(max_n=8, ties=False), st.permutations(range(8)))
def test_length_is_order_free(d, perm):
    p = [x for x in perm if x < d.shape[0]]
    assert math.isclose(subtree.subtree_length(d), subtree.subtree_length(d[np.ix_(p, p)]), abs_tol=1e-9)


@given(ultrametric_matrices(max_n=8))
def test_depths_recursion(d):
    lengths = subtree.prefix_lengths(d)
    np.testing.assert_allclose(subtree.depths_from_lengths(lengths), subtree.depths_from_matrix(d), atol=1e-9)


def test_brute_works_on_general_metrics():
    # path metric 0-1-2: half the tour 1 + 1 + 2
    d = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    assert subtree.subtree_length(d, "brute") == 2.0
    with pytest.raises(SpaceError):
        subtree.subtree_length(d, "fast")


def test_limits():
    with pytest.raises(ValueError):
        subtree.subtree_length(np.zeros((11, 11)), "brute")
    with pytest.raises(ValueError):
        subtree.subtree_length(np.zeros((2, 2)), "other")


def test_sampling_shapes(rng, three_point):
    L = subtree.sample_length_vectors(three_point, 5, 1000, rng)
    assert L.shape == (1000, 5)
    assert np.all(np.diff(L, axis=1) >= 0)
    assert set(np.unique(L[:, -1])) <= {0.0, 2.0, 6.0, 7.0}
    v = subtree.sample_length_vector(three_point, 4, rng)
    assert v.lengths.shape == v.depths.shape == (4,)


def test_segsites_mean(rng):
    s = subtree.segregating_sites(np.full(200_000, 3.0), 2.0, 1.0, rng)
    assert abs(s.mean() - 3.0) < 4 * math.sqrt(3.0 / 200_000)
    assert isinstance(subtree.segregating_sites(1.0, 1.0, 1.0, rng), int)
    with pytest.raises(ValueError):
        subtree.segregating_sites(1.0, -1.0, 1.0, rng)
