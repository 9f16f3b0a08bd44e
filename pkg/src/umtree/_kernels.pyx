# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loops for the tree-valued Moran simulator.

Every routine here has a line-for-line counterpart in ``_fallback.py``;
both consume the same pre-drawn event streams and must agree bit-for-bit
on the integer outputs and to rounding on the float outputs.

Pair state is stored as a matrix ``b`` of coalescence times: for ``i != j``
the genealogical distance at time ``t`` is ``2 * (t - b[i, j])``. Founder
distances enter as ``b = -r0 / 2``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, INFINITY

cnp.import_array()


def apply_events(double[:, ::1] b, long[::1] ancestry, const double[::1] times,
                 const long[::1] donors, const long[::1] recipients, double[::1] jumps):
    """Apply resampling events in place.

    If ``jumps`` has one slot per event, the identity-coupling distance
    between the snapshots just before and just after each event is written
    there (self-events and no-ops record 0).
    """
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t ne = times.shape[0]
    cdef bint track = jumps.shape[0] == ne and ne > 0
    cdef Py_ssize_t e, j, k, l
    cdef double s, acc, d
    cdef double inv = 1.0 / (<double> n * <double> n)
    for e in range(ne):
        k = donors[e]
        l = recipients[e]
        if k == l:
            if track:
                jumps[e] = 0.0
            continue
        s = times[e]
        if track:
            acc = 0.0
            for j in range(n):
                if j == l:
                    continue
                if j == k:
                    d = 2.0 * (s - b[l, k])
                else:
                    d = fabs(2.0 * (b[k, j] - b[l, j]))
                if d > 1.0:
                    d = 1.0
                acc += d
            jumps[e] = 2.0 * acc * inv
        for j in range(n):
            if j != l:
                b[l, j] = b[k, j]
        b[l, k] = s
        for j in range(n):
            if j != l:
                b[j, l] = b[l, j]
        ancestry[l] = ancestry[k]


def apply_events_coupled(double[:, ::1] b1, double[:, ::1] b2, long[::1] ancestry,
                         const double[::1] times, const long[::1] donors,
                         const long[::1] recipients, double[::1] dists):
    """Drive two coupled populations with one event stream.

    ``dists[e]`` receives ``(1/N^2) sum_{i,j} |r1 - r2| ^ 1`` after event ``e``,
    recomputed from scratch so that comparisons between events are exact.
    """
    cdef Py_ssize_t n = b1.shape[0]
    cdef Py_ssize_t ne = times.shape[0]
    cdef Py_ssize_t e, i, j, k, l
    cdef double s, acc, d
    cdef double inv = 1.0 / (<double> n * <double> n)
    for e in range(ne):
        k = donors[e]
        l = recipients[e]
        if k != l:
            s = times[e]
            for j in range(n):
                if j != l:
                    b1[l, j] = b1[k, j]
                    b2[l, j] = b2[k, j]
            b1[l, k] = s
            b2[l, k] = s
            for j in range(n):
                if j != l:
                    b1[j, l] = b1[l, j]
                    b2[j, l] = b2[l, j]
            ancestry[l] = ancestry[k]
        acc = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    d = fabs(2.0 * (b1[i, j] - b2[i, j]))
                    if d > 1.0:
                        d = 1.0
                    acc += d
        dists[e] = acc * inv


def exp_functional_path(const double[:, ::1] r0, const double[::1] times, const long[::1] donors,
                        const long[::1] recipients, double sigma, const double[::1] grid,
                        double[::1] phi, double[::1] var_rho, double[::1] qv):
    """Track ``Phi = <nu, exp(-sigma r_12)>`` along one Moran path.

    Writes, for each grid time, ``Phi``, the variance over individuals of the
    row means ``rho_i = (1/N) sum_j exp(-sigma r_ij)``, and the running sum of
    squared jumps of ``Phi``. Grid times must be sorted and start at or after 0.
    """
    cdef Py_ssize_t n = r0.shape[0]
    cdef Py_ssize_t ne = times.shape[0]
    cdef Py_ssize_t ng = grid.shape[0]
    cdef double[:, ::1] g = np.empty((n, n))
    cdef double[::1] rs = np.zeros(n)
    cdef Py_ssize_t i, j, k, l, e = 0, gi
    cdef double t_ref = 0.0, s, c, fresh, old, jump, qv_acc = 0.0
    cdef double nn = <double> n
    cdef double tot, tot2, rho
    cdef double *gk
    cdef double *gl

    # g[i, j] = exp(-sigma r_ij(t)) * exp(2 sigma (t - t_ref)) for i != j
    for i in range(n):
        for j in range(n):
            if i != j:
                g[i, j] = exp(-sigma * r0[i, j])
                rs[i] += g[i, j]
            else:
                g[i, j] = 0.0

    for gi in range(ng):
        while e < ne and times[e] <= grid[gi]:
            k = donors[e]
            l = recipients[e]
            s = times[e]
            e += 1
            if k == l:
                continue
            if 2.0 * sigma * (s - t_ref) > 30.0:
                c = exp(-2.0 * sigma * (s - t_ref))
                for i in range(n):
                    rs[i] = 0.0
                    for j in range(n):
                        if i != j:
                            g[i, j] *= c
                            rs[i] += g[i, j]
                t_ref = s
            c = exp(-2.0 * sigma * (s - t_ref))
            fresh = exp(2.0 * sigma * (s - t_ref))
            jump = 2.0 * ((1.0 + c * (rs[k] - g[k, l])) - c * rs[l]) / (nn * nn)
            qv_acc += jump * jump
            # g is symmetric: copy row k into row l, then patch the k-l entries
            gk = &g[k, 0]
            gl = &g[l, 0]
            for j in range(n):
                rs[j] += gk[j] - gl[j]
                gl[j] = gk[j]
            rs[k] += fresh
            gl[k] = fresh
            gl[l] = 0.0
            rs[l] = rs[k]
            for j in range(n):
                g[j, l] = gl[j]
        c = exp(-2.0 * sigma * (grid[gi] - t_ref))
        tot = 0.0
        tot2 = 0.0
        for i in range(n):
            rho = (1.0 + c * rs[i]) / nn
            tot += rho
            tot2 += rho * rho
        phi[gi] = tot / nn
        var_rho[gi] = tot2 / nn - (tot / nn) * (tot / nn)
        qv[gi] = qv_acc


def lineage_drop_times(Py_ssize_t n, const double[::1] times, const long[::1] donors,
                       const long[::1] recipients, double t, double[::1] out):
    """Trace the ancestral lineages of the population at time ``t`` backwards.

    ``out[m]`` is the look-back time at which the number of ancestors first
    drops to ``n - 1 - m``; entries that are not reached stay ``inf``.
    """
    cdef char[::1] occ = np.ones(n, dtype=np.int8)
    cdef Py_ssize_t count = n, e, k, l, m
    for m in range(out.shape[0]):
        out[m] = INFINITY
    e = times.shape[0] - 1
    while e >= 0 and times[e] > t:
        e -= 1
    while e >= 0 and count > 1:
        k = donors[e]
        l = recipients[e]
        if k != l and occ[l]:
            occ[l] = 0
            if occ[k]:
                count -= 1
                out[n - 1 - count] = t - times[e]
            else:
                occ[k] = 1
        e -= 1


def subtree_lengths(const double[:, :, ::1] dist, double[:, ::1] out):
    """Prefix subtree lengths of ultra-metric samples by incremental insertion.

    ``dist`` is a stack of ``m x m`` matrices; ``out[r, i]`` is the length of the
    subtree spanned by points ``0..i`` of sample ``r``.
    """
    cdef Py_ssize_t reps = dist.shape[0], m = dist.shape[1]
    cdef Py_ssize_t r, i, j
    cdef double depth, near, half
    for r in range(reps):
        out[r, 0] = 0.0
        depth = 0.0
        for i in range(1, m):
            near = dist[r, i, 0]
            for j in range(1, i):
                if dist[r, i, j] < near:
                    near = dist[r, i, j]
            half = 0.5 * near
            if half > depth:
                out[r, i] = out[r, i - 1] + near - depth
                depth = half
            else:
                out[r, i] = out[r, i - 1] + half
