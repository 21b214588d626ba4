"""Pure numpy implementations of the kernels in ``_core.pyx``.

Signatures, tie-breaking and floating-point operation order match the compiled
module so both backends return bit-identical results.
"""
import numpy as np


def farthest_point_order(dist, start, priority):
    """Greedy farthest-point ordering of all points.

    See :func:`hkelab._core.farthest_point_order`.
    """
    n = dist.shape[0]
    order = np.empty(n, dtype=np.int64)
    radii = np.empty(n, dtype=np.float64)
    used = np.zeros(n, dtype=bool)
    near = np.array(dist[start], dtype=np.float64)
    order[0] = start
    radii[0] = np.inf
    used[start] = True
    for k in range(1, n):
        free = ~used
        bestd = near[free].max()
        cand = np.flatnonzero(free & (near == bestd))
        best = cand[np.argmin(priority[cand])]
        order[k] = best
        radii[k] = bestd
        used[best] = True
        np.minimum(near, dist[best], out=near)
    return order, radii


def pair_distortion(da, db, ia, ib):
    """Largest ``|db[ib[p], ib[q]] - da[ia[p], ia[q]]|`` and its first location."""
    if len(ia) == 0:
        return 0.0, 0, 0
    m = np.abs(db[np.ix_(ib, ib)] - da[np.ix_(ia, ia)])
    flat = int(np.argmax(m))
    p, q = divmod(flat, m.shape[1])
    best = float(m[p, q])
    if best == 0.0:
        return 0.0, 0, 0
    return best, p, q


def assignment_costs(ds_row, dt, f, anchors):
    """``cost[y] = max_a |dt[y, f[a]] - ds_row[a]|`` over the anchors."""
    if len(anchors) == 0:
        return np.zeros(dt.shape[0])
    return np.abs(dt[:, f[anchors]] - ds_row[anchors]).max(axis=1)


def _row_costs(ds, dt, f, x):
    n = ds.shape[0]
    others = np.concatenate([np.arange(x), np.arange(x + 1, n)])
    if len(others) == 0:
        return np.zeros(dt.shape[0])
    return np.abs(dt[:, f[others]] - ds[x, others]).max(axis=1)


def _row_cost(ds, dt, f, x, y):
    n = ds.shape[0]
    others = np.concatenate([np.arange(x), np.arange(x + 1, n)])
    if len(others) == 0:
        return 0.0
    return float(np.abs(dt[y, f[others]] - ds[x, others]).max())


def local_search(ds, dt, f, fixed, budget):
    """Reduce the distortion of ``f`` in place; returns rounds used.

    See :func:`hkelab._core.local_search`.
    """
    n = ds.shape[0]
    rounds = 0
    while rounds < budget:
        rounds += 1
        m = np.abs(dt[np.ix_(f, f)] - ds)
        flat = int(np.argmax(m))
        i, j = divmod(flat, n)
        worst = float(m[i, j])
        if worst == 0.0:
            break
        improved = False
        for x in (i, j):
            if x == fixed:
                continue
            costs = _row_costs(ds, dt, f, x)
            ybest = int(np.argmin(costs))
            if costs[ybest] < worst:
                f[x] = ybest
                improved = True
                break
        if not improved and i != fixed and j != fixed:
            f[i], f[j] = f[j], f[i]
            after = max(_row_cost(ds, dt, f, i, f[i]), _row_cost(ds, dt, f, j, f[j]))
            if after < worst:
                improved = True
            else:
                f[i], f[j] = f[j], f[i]
        if not improved:
            break
    return rounds


def triangle_violation(dist):
    """Largest ``d(i, k) - d(i, j) - d(j, k)`` and its first location."""
    n = dist.shape[0]
    if n == 0:
        return 0.0, 0, 0, 0
    best, loc = -np.inf, (0, 0, 0)
    for i in range(n):
        m = dist[i][None, :] - dist[i][:, None] - dist
        flat = int(np.argmax(m))
        j, k = divmod(flat, n)
        if m[j, k] > best:
            best, loc = float(m[j, k]), (i, j, k)
    return (best,) + loc
