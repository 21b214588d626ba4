# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the distance-matrix hot loops.

Every function here has a numpy twin in :mod:`hkelab._core_py` with the same
signature and bit-identical results; :mod:`hkelab._backend` picks one at import.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()


def farthest_point_order(const double[:, ::1] dist, Py_ssize_t start,
                         const long long[::1] priority):
    """Greedy farthest-point ordering of all points.

    Parameters
    ----------
    dist : (N, N) float64 array
        Symmetric distance matrix.
    start : int
        Index of the first point.
    priority : (N,) int64 array
        Tie-breaking rank; among equally far candidates the lowest rank wins.

    Returns
    -------
    order : (N,) int64 array
    radii : (N,) float64 array
        ``radii[k]`` is the distance from ``order[k]`` to the earlier points
        (``inf`` for the first point).
    """
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t k, i, best
    cdef double bestd, d
    order = np.empty(n, dtype=np.int64)
    radii = np.empty(n, dtype=np.float64)
    cdef long long[::1] o = order
    cdef double[::1] r = radii
    cdef double[::1] near = np.full(n, INFINITY)
    cdef unsigned char[::1] used = np.zeros(n, dtype=np.uint8)
    o[0] = start
    r[0] = INFINITY
    used[start] = 1
    for i in range(n):
        near[i] = dist[start, i]
    for k in range(1, n):
        best = -1
        bestd = -1.0
        for i in range(n):
            if used[i]:
                continue
            d = near[i]
            if d > bestd or (d == bestd and priority[i] < priority[best]):
                bestd = d
                best = i
        o[k] = best
        r[k] = bestd
        used[best] = 1
        for i in range(n):
            if dist[best, i] < near[i]:
                near[i] = dist[best, i]
    return order, radii


def pair_distortion(const double[:, ::1] da, const double[:, ::1] db,
                    const long long[::1] ia, const long long[::1] ib):
    """Largest ``|db[ib[p], ib[q]] - da[ia[p], ia[q]]|`` over all index pairs.

    Returns ``(value, p, q)`` for the first worst pair in row-major order.
    """
    cdef Py_ssize_t n = ia.shape[0]
    cdef Py_ssize_t p, q, bp = 0, bq = 0
    cdef double best = 0.0, v
    for p in range(n):
        for q in range(n):
            v = fabs(db[ib[p], ib[q]] - da[ia[p], ia[q]])
            if v > best:
                best = v
                bp = p
                bq = q
    return best, bp, bq


def assignment_costs(const double[::1] ds_row, const double[:, ::1] dt,
                     const long long[::1] f, const long long[::1] anchors):
    """Cost of sending one source point to each target candidate.

    ``cost[y] = max_a |dt[y, f[a]] - ds_row[a]|`` over the anchor indices ``a``.
    """
    cdef Py_ssize_t m = dt.shape[0]
    cdef Py_ssize_t na = anchors.shape[0]
    cdef Py_ssize_t y, k, a
    cdef double c, v
    costs = np.zeros(m, dtype=np.float64)
    cdef double[::1] out = costs
    for y in range(m):
        c = 0.0
        for k in range(na):
            a = anchors[k]
            v = fabs(dt[y, f[a]] - ds_row[a])
            if v > c:
                c = v
        out[y] = c
    return costs


cdef double _row_cost(const double[:, ::1] ds, const double[:, ::1] dt,
                      long long[::1] f, Py_ssize_t x, Py_ssize_t y) noexcept nogil:
    cdef Py_ssize_t n = ds.shape[0]
    cdef Py_ssize_t a
    cdef double c = 0.0, v
    for a in range(n):
        if a == x:
            continue
        v = fabs(dt[y, f[a]] - ds[x, a])
        if v > c:
            c = v
    return c


def local_search(const double[:, ::1] ds, const double[:, ::1] dt,
                 long long[::1] f, Py_ssize_t fixed, Py_ssize_t budget):
    """Reduce the distortion of the map ``f`` in place.

    Each round locates the worst pair, then tries to move one of its two
    endpoints (never ``fixed``) to the target minimising that point's row
    distortion, and finally a swap of the two images. Stops when no move
    strictly improves or when ``budget`` rounds are spent.

    Returns the number of rounds used.
    """
    cdef Py_ssize_t n = ds.shape[0]
    cdef Py_ssize_t m = dt.shape[0]
    cdef Py_ssize_t rounds = 0, p, q, i, j, x, y, ybest, side, tmp
    cdef double worst, v, c, cbest, after
    cdef bint improved
    while rounds < budget:
        rounds += 1
        worst = 0.0
        i = 0
        j = 0
        for p in range(n):
            for q in range(n):
                v = fabs(dt[f[p], f[q]] - ds[p, q])
                if v > worst:
                    worst = v
                    i = p
                    j = q
        if worst == 0.0:
            break
        improved = False
        for side in range(2):
            x = i if side == 0 else j
            if x == fixed:
                continue
            ybest = -1
            cbest = INFINITY
            for y in range(m):
                c = _row_cost(ds, dt, f, x, y)
                if c < cbest:
                    cbest = c
                    ybest = y
            if cbest < worst:
                f[x] = ybest
                improved = True
                break
        if not improved and i != fixed and j != fixed:
            tmp = f[i]
            f[i] = f[j]
            f[j] = tmp
            after = _row_cost(ds, dt, f, i, f[i])
            c = _row_cost(ds, dt, f, j, f[j])
            if c > after:
                after = c
            if after < worst:
                improved = True
            else:
                tmp = f[i]
                f[i] = f[j]
                f[j] = tmp
        if not improved:
            break
    return rounds


def triangle_violation(const double[:, ::1] dist):
    """Largest ``d(i, k) - d(i, j) - d(j, k)`` over all triples.

    Returns ``(value, i, j, k)``; ``value <= 0`` means the triangle inequality
    holds everywhere.
    """
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t i, j, k, bi = 0, bj = 0, bk = 0
    cdef double best = -INFINITY, v
    if n == 0:
        return 0.0, 0, 0, 0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                v = dist[i, k] - dist[i, j] - dist[j, k]
                if v > best:
                    best = v
                    bi = i
                    bj = j
                    bk = k
    return best, bi, bj, bk
