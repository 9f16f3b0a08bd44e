"""Pure-Python counterparts of the compiled kernels in ``_kernels.pyx``.

Same signatures, same in-place semantics. Used when the extension is not
built or when ``UMTREE_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np


def apply_events(b, ancestry, times, donors, recipients, jumps):
    n = b.shape[0]
    ne = len(times)
    track = len(jumps) == ne and ne > 0
    inv = 1.0 / (n * n)
    for e in range(ne):
        k = int(donors[e])
        l = int(recipients[e])
        if k == l:
            if track:
                jumps[e] = 0.0
            continue
        s = float(times[e])
        if track:
            d = np.minimum(np.abs(2.0 * (b[k] - b[l])), 1.0)
            d[l] = 0.0
            d[k] = min(2.0 * (s - b[l, k]), 1.0)
            jumps[e] = 2.0 * float(d.sum()) * inv
        diag = b[l, l]
        b[l, :] = b[k, :]
        b[l, l] = diag
        b[l, k] = s
        b[:, l] = b[l, :]
        b[l, l] = diag
        ancestry[l] = ancestry[k]


def apply_events_coupled(b1, b2, ancestry, times, donors, recipients, dists):
    n = b1.shape[0]
    off = ~np.eye(n, dtype=bool)
    inv = 1.0 / (n * n)
    for e in range(len(times)):
        k = int(donors[e])
        l = int(recipients[e])
        if k != l:
            s = float(times[e])
            for b in (b1, b2):
                diag = b[l, l]
                b[l, :] = b[k, :]
                b[l, k] = s
                b[:, l] = b[l, :]
                b[l, l] = diag
            ancestry[l] = ancestry[k]
        d = np.minimum(np.abs(2.0 * (b1 - b2)), 1.0)
        dists[e] = float(d[off].sum()) * inv


def exp_functional_path(r0, times, donors, recipients, sigma, grid, phi, var_rho, qv):
    n = r0.shape[0]
    g = np.exp(-sigma * np.asarray(r0, dtype=float))
    np.fill_diagonal(g, 0.0)
    rs = g.sum(axis=1)
    t_ref = 0.0
    qv_acc = 0.0
    e = 0
    ne = len(times)
    for gi in range(len(grid)):
        while e < ne and times[e] <= grid[gi]:
            k = int(donors[e])
            l = int(recipients[e])
            s = float(times[e])
            e += 1
            if k == l:
                continue
            if 2.0 * sigma * (s - t_ref) > 30.0:
                g *= math.exp(-2.0 * sigma * (s - t_ref))
                rs = g.sum(axis=1)
                t_ref = s
            c = math.exp(-2.0 * sigma * (s - t_ref))
            fresh = math.exp(2.0 * sigma * (s - t_ref))
            jump = 2.0 * ((1.0 + c * (rs[k] - g[k, l])) - c * rs[l]) / (n * n)
            qv_acc += jump * jump
            old = g[:, l].copy()
            g[:, l] = g[:, k]
            g[k, l] = fresh
            g[l, l] = 0.0
            delta = g[:, l] - old
            delta[l] = 0.0
            rs += delta
            rs[l] = rs[k]
            g[l, :] = g[:, l]
        c = math.exp(-2.0 * sigma * (grid[gi] - t_ref))
        rho = (1.0 + c * rs) / n
        tot = float(rho.sum())
        tot2 = float((rho * rho).sum())
        phi[gi] = tot / n
        var_rho[gi] = tot2 / n - (tot / n) * (tot / n)
        qv[gi] = qv_acc


def lineage_drop_times(n, times, donors, recipients, t, out):
    occ = [True] * n
    count = n
    out[:] = np.inf
    e = len(times) - 1
    while e >= 0 and times[e] > t:
        e -= 1
    while e >= 0 and count > 1:
        k = int(donors[e])
        l = int(recipients[e])
        if k != l and occ[l]:
            occ[l] = False
            if occ[k]:
                count -= 1
                out[n - 1 - count] = t - times[e]
            else:
                occ[k] = True
        e -= 1


def subtree_lengths(dist, out):
    reps, m = dist.shape[0], dist.shape[1]
    out[:, 0] = 0.0
    depth = np.zeros(reps)
    for i in range(1, m):
        near = dist[:, i, :i].min(axis=1)
        half = 0.5 * near
        grow = half > depth
        out[:, i] = out[:, i - 1] + np.where(grow, near - depth, half)
        depth = np.where(grow, half, depth)
