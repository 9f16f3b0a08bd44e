"""Frozen reference values. Each is derived by hand, independently of the package.

Do not regenerate these from the code under test.
"""

from math import exp, factorial

# three-point space {r12, r13, r23} = {2, 6, 6}
THREE_POINT_UPPER = (2.0, 6.0, 6.0)
THREE_POINT_LENGTH = 7.0            # half the shortest tour 2 + 6 + 6
THREE_POINT_LSTAR = (0.0, 2.0, 7.0)

# Kingman tree on 5 leaves, gamma = 1: E[L] = 2 H_4, E[exp(-L)] = 4! 2! / 6!
H4 = 1 + 1 / 2 + 1 / 3 + 1 / 4
KINGMAN_MEAN_L5 = 25.0 / 6.0
KINGMAN_LAPLACE_L5 = factorial(4) * factorial(2) / factorial(6)
assert abs(KINGMAN_MEAN_L5 - 2 * H4) < 1e-15
assert abs(KINGMAN_LAPLACE_L5 - 1 / 15) < 1e-15

# Watterson: E[S_5] = theta * H_4 at gamma = 1, theta = 1
SEGSITES_MEAN_5 = 25.0 / 12.0


def pair_laplace(g0: float, gamma: float, sigma: float, t: float) -> float:
    """n = 2 transform: relaxes to gamma / (gamma + 2 sigma) at rate gamma + 2 sigma."""
    eq = gamma / (gamma + 2 * sigma)
    return eq + (g0 - eq) * exp(-(gamma + 2 * sigma) * t)


PAIR_EQUILIBRIUM_UNIT = 1.0 / 3.0   # gamma = sigma = 1


def moran_pair_mean(g0: float, gamma: float, sigma: float, t: float, n: int) -> float:
    """E Phi_t for N individuals, diagonal pairs included.

    Self-distances never grow, so the drift gains +2 sigma / N over the
    limit: dPhi = -(gamma + 2 sigma) Phi + gamma + 2 sigma / N.
    """
    eq = (gamma + 2 * sigma / n) / (gamma + 2 * sigma)
    return eq + (g0 - eq) * exp(-(gamma + 2 * sigma) * t)

# n = 3 at gamma = sigma = 1: L_3 = 3 T_3 + 2 T_2 with T_k ~ Exp(C(k,2)), so
# E[exp(-L_3)] = (3 / (3 + 3)) * (1 / (1 + 2)) = 1 / 6.
TRIPLE_EQUILIBRIUM_UNIT = (3.0 / 6.0) * (1.0 / 3.0)

# Pathwise counterexample to monotone coupling distance.
# N = 3, shared event "individual 0 replaces individual 2" at time 0+.
COUNTER_FIRST = (2.0, 5.0, 5.0)     # r01, r02, r12
COUNTER_SECOND = (3.0, 5.0, 5.0)
COUNTER_EVENT = (0, 2)              # donor, recipient
COUNTER_BEFORE = 2.0 / 9.0
COUNTER_AFTER = 4.0 / 9.0

# Largest single-event change of the identity-labelled distance: 2 (N - 1) / N^2.
def jump_cap(n: int) -> float:
    return 2.0 * (n - 1) / (n * n)
