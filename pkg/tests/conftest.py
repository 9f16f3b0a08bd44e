import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from umtree.mmspace import FiniteUmmSpace, random_ultrametric

settings.register_profile("umtree", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("umtree")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def three_point():
    from oracles import THREE_POINT_UPPER

    return FiniteUmmSpace.from_upper(3, THREE_POINT_UPPER)


def ultrametric_from_seed(seed: int, n: int, weights: str = "uniform", scale: float = 1.0):
    return random_ultrametric(n, np.random.default_rng(seed), scale=scale, weights=weights)


def _merge_history(n, heights, picks):
    clusters = [[i] for i in range(n)]
    d = np.zeros((n, n))
    for h, (a, b) in zip(heights, picks):
        a %= len(clusters)
        b %= len(clusters) - 1
        b += b >= a
        a, b = min(a, b), max(a, b)
        for i in clusters[a]:
            for j in clusters[b]:
                d[i, j] = d[j, i] = h
        clusters[a] += clusters[b]
        del clusters[b]
    return d


def ultrametric_matrices(min_n=1, max_n=7, ties=True):
    """Hypothesis strategy: ultra-metric distance matrices built from merge histories."""
    from hypothesis import strategies as st

    @st.composite
    def build(draw):
        n = draw(st.integers(min_n, max_n))
        if ties:
            hs = draw(st.lists(st.integers(1, 4), min_size=n - 1, max_size=n - 1))
            heights = np.sort(np.asarray(hs, dtype=float)) * 2.0
        else:
            hs = draw(st.lists(st.floats(0.05, 3.0), min_size=n - 1, max_size=n - 1, unique=True))
            heights = np.sort(np.asarray(hs)) * 2.0
        picks = draw(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=n - 1, max_size=n - 1))
        return _merge_history(n, heights, picks)

    return build()
