"""Dyadic-type cube decompositions, approximate isometries and GH bounds.

All maps are tables of point positions. Distortions are computed exactly over
all finitely many pairs by the kernels in :mod:`hkelab._backend`.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from ._backend import as_index, as_matrix, core
from .metric import MetricMeasureSpace, farthest_point_order

#: Correspondence counts up to which gh_upper_bound enumerates exhaustively.
EXHAUSTIVE_RELATIONS = 2 ** 16


class CubeConstructionError(RuntimeError):
    """No admissible cube constants were found within the retry budget."""


@dataclass(frozen=True)
class CubeDecomposition:
    """Cubes per level with their centers and sandwich constants.

    Attributes
    ----------
    delta : float
    scale : float
        Level ``k`` has side ``scale * delta**k``.
    cubes : list of list of ndarray
        ``cubes[k][j]`` holds the point positions of ``Q_{k,j}``.
    centers : list of ndarray
        ``centers[k][j]`` is ``z_{k,j}``.
    a0, a1 : float
        ``B(z, a0 s_k) <= Q <= B(z, a1 s_k)`` for every cube.
    """

    delta: float
    scale: float
    cubes: list
    centers: list
    a0: float
    a1: float

    @property
    def depth(self) -> int:
        return len(self.cubes) - 1

    def side(self, k: int) -> float:
        return self.scale * self.delta ** k


def _voronoi(dist: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # ties go to the center with the lowest point position
    order = np.argsort(centers, kind="stable")
    sub = dist[:, centers[order]]
    return order[np.argmin(sub, axis=1)]


def _cube_constants(dist, cubes, centers, sides):
    a0, a1 = math.inf, 0.0
    n = dist.shape[0]
    for k, (level, zs) in enumerate(zip(cubes, centers)):
        for q, z in zip(level, zs):
            inside = np.zeros(n, dtype=bool)
            inside[q] = True
            if not inside.all():
                a0 = min(a0, float(dist[z, ~inside].min()) / sides[k])
            a1 = max(a1, float(dist[z, q].max()) / sides[k])
    return a0, a1


def christ_cubes(space: MetricMeasureSpace, delta: float, depth: int, scale: float = 1.0,
                 centers=None, max_ratio: float | None = None, retries: int = 3,
                 seed: int = 0) -> CubeDecomposition:
    """Cube decomposition with levels ``k = 0..depth`` of side ``scale * delta**k``.

    Centers at level ``k`` are the prefix of one farthest-point traversal whose
    insertion radius is at least the side, so they form a side-separated net.
    Cubes are the Voronoi cells of the centers, ties going to the lowest point
    position. ``a0`` is the smallest ratio of (distance from a center to the
    nearest point outside its cube) to the side, ``a1`` the largest ratio of
    (cube radius about its center) to the side; both are nudged by a relative
    ``1e-12`` so the strict-ball inclusions survive rounding.

    Parameters
    ----------
    space : MetricMeasureSpace
    delta : float
        Ratio between consecutive sides, in ``(0, 1)``.
    depth : int
        Deepest level (at least 1).
    scale : float
        Side of level 0.
    centers : list of array_like, optional
        Explicit centers per level, bypassing the traversal.
    max_ratio : float, optional
        Reject decompositions with ``a1 / a0`` above this value and retry from
        a different starting point.
    retries : int
        Extra attempts when ``max_ratio`` is violated.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    sides = [scale * delta ** k for k in range(depth + 1)]
    starts = [space.basepoint] + list(np.random.default_rng(seed).permutation(space.size)[:retries])
    last = None
    for attempt, start in enumerate(starts[: retries + 1]):
        if centers is None:
            order, radii = farthest_point_order(space, seed=seed, start=int(start))
            zs = [np.asarray(order[radii >= s]) for s in sides]
        else:
            zs = [np.asarray(c, dtype=np.int64) for c in centers]
        levels = []
        for z in zs:
            owner = _voronoi(space.dist, z)
            levels.append([np.flatnonzero(owner == j) for j in range(len(z))])
        a0, a1 = _cube_constants(space.dist, levels, zs, sides)
        if not math.isfinite(a0):  # one cube per level: any a0 up to a1 works
            a0 = a1 if a1 > 0 else 1.0
        a0 *= 1.0 - 1e-12  # keep both sandwich inclusions strict under rounding of a * side
        a1 = max(a1 * (1.0 + 1e-12), a0)
        last = (a0, a1)
        if max_ratio is None or a1 / a0 <= max_ratio or centers is not None:
            return CubeDecomposition(delta, scale, levels, zs, a0, a1)
    raise CubeConstructionError(
        f"a1/a0 = {last[1] / last[0]:.3g} exceeds {max_ratio} after {retries} retries "
        f"(a0={last[0]:.3g}, a1={last[1]:.3g})")


@dataclass(frozen=True)
class CubeCheck:
    covers: bool
    disjoint: bool
    sandwich: bool

    @property
    def ok(self) -> bool:
        return self.covers and self.disjoint and self.sandwich


def verify_cubes(space: MetricMeasureSpace, cd: CubeDecomposition) -> CubeCheck:
    """Check cover, disjointness and ball sandwich by set algebra."""
    n = space.size
    covers = disjoint = sandwich = True
    for k, (level, zs) in enumerate(zip(cd.cubes, cd.centers)):
        seen = np.zeros(n, dtype=np.int64)
        for q, z in zip(level, zs):
            seen[q] += 1
            qs = set(int(i) for i in q)
            inner = set(int(i) for i in np.flatnonzero(space.dist[z] < cd.a0 * cd.side(k)))
            outer = set(int(i) for i in np.flatnonzero(space.dist[z] < cd.a1 * cd.side(k)))
            sandwich &= inner <= qs <= outer
        covers &= bool(np.all(seen >= 1))
        disjoint &= bool(np.all(seen <= 1))
    return CubeCheck(covers, disjoint, sandwich)


# ----------------------------------------------------------------------------
# approximate isometries


@dataclass(frozen=True)
class ApproxIsometry:
    """Maps ``f: source -> target`` and ``g: target -> source`` with measured defects.

    Attributes
    ----------
    forward, backward : ndarray
        Position tables.
    distortion_forward, distortion_backward : float
        ``max |d_T(f x, f y) - d_S(x, y)|`` and its mirror.
    net_radius : float
        Covering radius of ``f(source)`` in the target.
    roundtrip_source, roundtrip_target : float
        ``max d_S(x, g f x)`` and ``max d_T(y, f g y)``.
    basepoint_preserved : bool
    eps : float
        ``max`` of both distortions, both roundtrips and ``net_radius / 2``.
    """

    forward: np.ndarray
    backward: np.ndarray
    distortion_forward: float
    distortion_backward: float
    net_radius: float
    roundtrip_source: float
    roundtrip_target: float
    basepoint_preserved: bool
    eps: float

    def header(self) -> dict:
        return {"eps": self.eps, "net_radius": self.net_radius,
                "roundtrip_sup": max(self.roundtrip_source, self.roundtrip_target),
                "distortion_forward": self.distortion_forward,
                "distortion_backward": self.distortion_backward,
                "basepoint_preserved": self.basepoint_preserved}


def map_distortion(source: MetricMeasureSpace, target: MetricMeasureSpace, f) -> float:
    """``max_{x,y} |d_T(f x, f y) - d_S(x, y)|``."""
    f = as_index(f)
    v, _, _ = core.pair_distortion(source.dist, target.dist, as_index(np.arange(len(f))), f)
    return float(v)


def measure_isometry(source: MetricMeasureSpace, target: MetricMeasureSpace, f, g) -> ApproxIsometry:
    """Recompute every defect of the pair ``(f, g)`` from the tables."""
    f, g = as_index(f), as_index(g)
    df = map_distortion(source, target, f)
    dg = map_distortion(target, source, g)
    net = float(target.dist[:, f].min(axis=1).max())
    rs = float(source.dist[np.arange(source.size), g[f]].max())
    rt = float(target.dist[np.arange(target.size), f[g]].max())
    bp = bool(f[source.basepoint] == target.basepoint and g[target.basepoint] == source.basepoint)
    eps = max(df, dg, rs, rt, net / 2.0)
    return ApproxIsometry(f, g, df, dg, net, rs, rt, bp, eps)


#: Largest target for which the anchored greedy backward map is also tried.
ANCHORED_LIMIT = 2000
#: Relative tolerance under which anchor costs count as tied.
TIE_RTOL = 1e-9
#: Farthest-point orders (seeds ``seed .. seed + RESTARTS - 1``) tried by the greedy search.
RESTARTS = 4
#: Quantile levels of the distance signature used to break assignment ties.
SIGNATURE_LEVELS = np.linspace(0.0, 1.0, 65)


def distance_signature(space: MetricMeasureSpace, levels=SIGNATURE_LEVELS) -> np.ndarray:
    """Quantiles of ``d(x, .)`` under the normalized measure, one row per point.

    The rows are isometry invariants. The mean absolute difference of two rows
    is the Wasserstein-1 distance of the distance distributions, which varies
    smoothly under refinement of the space.
    """
    order = np.argsort(space.dist, axis=1, kind="stable")
    d = np.take_along_axis(space.dist, order, axis=1)
    cum = np.cumsum(space.measure[order], axis=1)
    cum /= cum[:, -1:]
    out = np.empty((space.size, len(levels)))
    for i in range(space.size):
        k = np.minimum(np.searchsorted(cum[i], levels, side="left"), space.size - 1)
        out[i] = d[i, k]
    return out


def greedy_map(source: MetricMeasureSpace, target: MetricMeasureSpace, seed: int = 0,
               budget: int | None = None, initial=None) -> np.ndarray:
    """Basepoint-preserving map with small distortion.

    Unassigned source points are placed in farthest-point order (coarse cube
    centers first). Each goes to the target point minimizing the mismatch of
    its distances to the points already placed; near-ties are broken by the
    closest distance signature (mean quantile gap), then by lowest position. A
    local search then moves endpoints of the worst pair, or swaps them, for at
    most ``budget`` rounds (``10 |source|`` by default).

    Parameters
    ----------
    initial : array_like, optional
        Partial table with ``-1`` for unassigned points; assigned entries act
        as anchors.
    """
    order, _ = farthest_point_order(source, seed)
    if initial is None:
        f = np.full(source.size, -1, dtype=np.int64)
    else:
        f = np.array(initial, dtype=np.int64)
    f[source.basepoint] = target.basepoint
    sig_s, sig_t = distance_signature(source), distance_signature(target)
    ds, dt = source.dist, target.dist
    tie = TIE_RTOL * max(1.0, float(dt.max()))
    for x in order:
        x = int(x)
        if f[x] >= 0:
            continue
        anchors = as_index(np.flatnonzero(f >= 0))
        costs = core.assignment_costs(as_matrix(ds[x]), dt, f, anchors)
        near = np.flatnonzero(costs <= costs.min() + tie)
        f[x] = int(near[np.argmin(np.abs(sig_t[near] - sig_s[x]).mean(axis=1))])
    budget = 10 * source.size if budget is None else budget
    core.local_search(ds, dt, f, int(source.basepoint), int(budget))
    return f


def build_approx_isometry(source: MetricMeasureSpace, target: MetricMeasureSpace,
                          seed: int = 0, budget: int | None = None) -> ApproxIsometry:
    """Approximate isometry pair between two pointed spaces.

    ``f`` comes from :func:`greedy_map`, restarted with up to ``RESTARTS``
    traversal seeds until its distortion vanishes (the smallest ``eps`` is
    kept otherwise). Two candidates for ``g`` are measured
    and the one with the smaller ``eps`` is kept (the projection on ties): the
    nearest-point projection onto ``f(source)``, whose distortion is at most the
    distortion of ``f`` plus twice the net radius, and the greedy map in the
    other direction anchored by ``g(f(x)) = x``. The second candidate is only
    tried for targets up to ``ANCHORED_LIMIT`` points, since its local search
    scans all target pairs per round. The reported ``eps`` is the
    largest of the distortion, roundtrip and net defects.
    """
    if source.dist.shape == target.dist.shape and source.basepoint == target.basepoint \
            and np.array_equal(source.dist, target.dist):
        return identity_isometry(source)
    # A partial isometry on the first few points need not extend; other
    # traversal orders are tried until one gives an exact embedding.
    best = None
    exact = TIE_RTOL * max(1.0, float(target.dist.max()))
    for k in range(RESTARTS):
        f_k = greedy_map(source, target, seed + k, budget)
        cand = measure_isometry(source, target, f_k, quasi_inverse(source, target, f_k))
        if best is None or cand.eps < best.eps:
            best, f = cand, f_k
        if cand.distortion_forward <= exact:
            break
    if target.size > ANCHORED_LIMIT:
        return best
    initial = np.full(target.size, -1, dtype=np.int64)
    images, first = np.unique(f, return_index=True)
    initial[images] = first
    anchored = measure_isometry(source, target, f,
                                greedy_map(target, source, seed, budget, initial=initial))
    return anchored if anchored.eps < best.eps else best


def quasi_inverse(source: MetricMeasureSpace, target: MetricMeasureSpace, f) -> np.ndarray:
    """``g(y)``: a source point whose image is nearest to ``y`` (lowest position on ties)."""
    f = np.asarray(f, dtype=np.int64)
    g = np.argmin(target.dist[:, f], axis=1).astype(np.int64)
    g[target.basepoint] = source.basepoint
    return g


def identity_isometry(space: MetricMeasureSpace) -> ApproxIsometry:
    idx = np.arange(space.size)
    return measure_isometry(space, space, idx, idx)


def write_isometry(iso: ApproxIsometry, source: MetricMeasureSpace, target: MetricMeasureSpace,
                   csv_path, header_path) -> None:
    """CSV ``source_id,target_id`` for ``f`` plus a JSON header with the defects."""
    rows = ["source_id,target_id"] + [f"{source.ids[i]},{target.ids[j]}"
                                      for i, j in enumerate(iso.forward)]
    with open(csv_path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    with open(header_path, "w") as fh:
        json.dump(iso.header(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------------------
# Gromov-Hausdorff bounds


def correspondence_distortion(a: MetricMeasureSpace, b: MetricMeasureSpace, pairs) -> float:
    """``max |d_A(a, a') - d_B(b, b')|`` over pairs of related points."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    v, _, _ = core.pair_distortion(a.dist, b.dist, as_index(pairs[:, 0]), as_index(pairs[:, 1]))
    return float(v)


def _exhaustive_gh(a: MetricMeasureSpace, b: MetricMeasureSpace) -> float:
    na, nb = a.size, b.size
    cells = [(i, j) for i in range(na) for j in range(nb)]
    best = math.inf
    for mask in range(1, 2 ** len(cells)):
        rel = [cells[k] for k in range(len(cells)) if mask >> k & 1]
        if len({i for i, _ in rel}) < na or len({j for _, j in rel}) < nb:
            continue
        best = min(best, correspondence_distortion(a, b, rel))
    return best


def gh_upper_bound(a: MetricMeasureSpace, b: MetricMeasureSpace, seed: int = 0) -> float:
    """Upper bound on the GH distance: half the distortion of a correspondence.

    Small pairs are searched exhaustively over all correspondences, which gives
    the exact value. Larger pairs use the union of the graphs of the two maps
    from :func:`build_approx_isometry`.
    """
    if 2 ** (a.size * b.size) <= EXHAUSTIVE_RELATIONS:
        return 0.5 * _exhaustive_gh(a, b)
    iso = build_approx_isometry(a, b, seed)
    pairs = np.concatenate([
        np.stack([np.arange(a.size), iso.forward], axis=1),
        np.stack([iso.backward, np.arange(b.size)], axis=1),
    ])
    return 0.5 * correspondence_distortion(a, b, pairs)


# ----------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class PushforwardMeasure:
    """Image measure on target points of a source measure restricted to a ball."""

    masses: np.ndarray
    source_points: np.ndarray
    source_mass: float

    @property
    def total(self) -> float:
        return math.fsum(self.masses)


def pushforward(measure, f, points, target_size: int) -> PushforwardMeasure:
    """Mass at ``y`` is the sum of source masses over ``f^-1(y)`` within ``points``."""
    measure = np.asarray(measure, dtype=float)
    f = np.asarray(f, dtype=np.int64)
    points = np.asarray(points, dtype=np.int64)
    masses = np.zeros(target_size)
    buckets: dict[int, list] = {}
    for p in points:
        buckets.setdefault(int(f[p]), []).append(measure[p])
    for y, vals in buckets.items():
        masses[y] = math.fsum(vals)
    return PushforwardMeasure(masses, points, math.fsum(measure[points]))


def default_tests(space: MetricMeasureSpace, R: float) -> dict:
    """Constant 1, ``min(d(., p), R)`` and tents of width ``R/4`` at radii ``R/4, R/2, 3R/4``."""
    d = space.dist[space.basepoint]
    tests = {"one": np.ones(space.size), "dist_capped": np.minimum(d, R)}
    for name, c in (("bump_q1", R / 4), ("bump_q2", R / 2), ("bump_q3", 3 * R / 4)):
        tests[name] = np.maximum(0.0, 1.0 - np.abs(d - c) / (R / 4))
    return tests


def weak_gap(mu, nu, tests: dict) -> dict:
    """``|int t dmu - int t dnu|`` for each named test function."""
    mu = mu.masses if isinstance(mu, PushforwardMeasure) else np.asarray(mu, dtype=float)
    nu = nu.masses if isinstance(nu, PushforwardMeasure) else np.asarray(nu, dtype=float)
    return {k: abs(math.fsum(mu * v) - math.fsum(nu * v)) for k, v in tests.items()}
