"""Finite metric measure spaces built from weighted graphs.

A :class:`WeightedGraph` carries edge lengths (for the metric), edge
conductances (for the energy) and a positive vertex measure. Its geodesic
completion is a :class:`MetricMeasureSpace` with the all-pairs shortest-path
metric. Points are addressed by their position ``0..N-1``; the original labels
live in ``ids``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from ._backend import as_matrix, core
from .profiles import VolumeProfile

#: Relative slack for the triangle inequality of shortest-path metrics.
TRIANGLE_RTOL = 1e-12
#: Above this size the triangle check samples triples instead of enumerating.
EXHAUSTIVE_TRIANGLE_LIMIT = 300
SAMPLED_TRIPLES = 100_000


class GraphValidationError(ValueError):
    """Raised when a graph violates a structural invariant."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected graph with edge lengths, conductances and vertex measure.

    Parameters
    ----------
    ids : sequence
        Vertex labels (ints or strings), unique.
    edges : (E, 2) int array
        Endpoint positions into ``ids``.
    lengths, conductances : (E,) float arrays
        Strictly positive.
    measure : (N,) float array
        Strictly positive.
    coords : (N, 2) float array, optional
        Planar embedding used for plotting and for locating points.
    """

    ids: tuple
    edges: np.ndarray
    lengths: np.ndarray
    conductances: np.ndarray
    measure: np.ndarray
    coords: np.ndarray | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "edges", _freeze(edges.copy()))
        for name in ("lengths", "conductances", "measure"):
            object.__setattr__(self, name, _freeze(np.array(getattr(self, name), dtype=float)))
        if self.coords is not None:
            object.__setattr__(self, "coords", _freeze(np.array(self.coords, dtype=float)))
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.ids)})
        self.validate()

    @property
    def n_vertices(self) -> int:
        return len(self.ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index(self, vid) -> int:
        """Position of the vertex labelled ``vid``."""
        return self._index[vid]

    def validate(self) -> None:
        n = len(self.ids)
        if len(self._index) != n:
            raise GraphValidationError("duplicate vertex ids")
        if n == 0:
            raise GraphValidationError("graph has no vertices")
        if self.measure.shape != (n,):
            raise GraphValidationError("measure must have one entry per vertex")
        if np.any(~(self.measure > 0)):
            bad = self.ids[int(np.flatnonzero(~(self.measure > 0))[0])]
            raise GraphValidationError(f"vertex {bad!r} has non-positive measure")
        e = self.edges
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise GraphValidationError("edge endpoint out of range")
            loops = np.flatnonzero(e[:, 0] == e[:, 1])
            if len(loops):
                raise GraphValidationError(f"self-loop at vertex {self.ids[e[loops[0], 0]]!r}")
            for name in ("lengths", "conductances"):
                w = getattr(self, name)
                if w.shape != (len(e),):
                    raise GraphValidationError(f"{name} must have one entry per edge")
                if np.any(~(w > 0)):
                    k = int(np.flatnonzero(~(w > 0))[0])
                    raise GraphValidationError(
                        f"edge {self.ids[e[k, 0]]!r}-{self.ids[e[k, 1]]!r} has non-positive "
                        f"{name[:-1]}")
            key = np.sort(e, axis=1)
            if len(np.unique(key, axis=0)) != len(key):
                raise GraphValidationError("duplicate undirected edge")
        ncomp, labels = csgraph.connected_components(self.adjacency("lengths"), directed=False)
        if ncomp > 1:
            sizes = np.bincount(labels)
            small = int(np.argmin(sizes))
            members = [self.ids[i] for i in np.flatnonzero(labels == small)[:10]]
            raise GraphValidationError(
                f"graph is disconnected ({ncomp} components); smallest component "
                f"has {sizes[small]} vertices: {members}")

    def adjacency(self, weight: str = "conductances") -> sparse.csr_matrix:
        """Symmetric sparse matrix of edge ``weight`` ("lengths" or "conductances")."""
        n = len(self.ids)
        w = getattr(self, weight)
        i, j = self.edges[:, 0], self.edges[:, 1]
        a = sparse.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]),
                              np.concatenate([j, i]))), shape=(n, n))
        return a.tocsr()

    def incident_length(self) -> np.ndarray:
        """Total length of edges incident to each vertex."""
        out = np.zeros(len(self.ids))
        np.add.at(out, self.edges[:, 0], self.lengths)
        np.add.at(out, self.edges[:, 1], self.lengths)
        return out


@dataclass(frozen=True, eq=False)
class MetricMeasureSpace:
    """Finite pointed metric measure space.

    Parameters
    ----------
    ids : tuple
        Point labels.
    dist : (N, N) float array
        Symmetric, zero diagonal, satisfies the triangle inequality.
    measure : (N,) float array
        Strictly positive point masses.
    basepoint : int
        Position of the distinguished point.
    coords : (N, 2) float array, optional
    """

    ids: tuple
    dist: np.ndarray
    measure: np.ndarray
    basepoint: int = 0
    coords: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "dist", _freeze(as_matrix(self.dist).copy()))
        object.__setattr__(self, "measure", _freeze(np.array(self.measure, dtype=float)))
        if self.coords is not None:
            object.__setattr__(self, "coords", _freeze(np.array(self.coords, dtype=float)))
        n = len(self.ids)
        if self.dist.shape != (n, n) or self.measure.shape != (n,):
            raise ValueError("dist/measure shapes do not match ids")
        if not 0 <= self.basepoint < n:
            raise ValueError("basepoint out of range")
        if np.any(~(self.measure > 0)):
            raise ValueError("measure must be positive")
        if np.any(self.dist != self.dist.T) or np.any(np.diag(self.dist) != 0):
            raise ValueError("dist must be symmetric with zero diagonal")

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.measure)

    def subspace(self, points, basepoint: int | None = None) -> "MetricMeasureSpace":
        """Restriction to ``points`` (positions), keeping the inherited metric."""
        points = np.asarray(points, dtype=np.int64)
        if basepoint is None:
            hits = np.flatnonzero(points == self.basepoint)
            if not len(hits):
                raise ValueError("basepoint not in subspace; pass basepoint explicitly")
            basepoint = int(hits[0])
        return MetricMeasureSpace(
            ids=tuple(self.ids[i] for i in points),
            dist=self.dist[np.ix_(points, points)],
            measure=self.measure[points],
            basepoint=basepoint,
            coords=None if self.coords is None else self.coords[points],
        )


def shortest_paths(g: WeightedGraph, sources=None) -> np.ndarray:
    """Shortest-path lengths from ``sources`` (all vertices by default)."""
    return csgraph.shortest_path(g.adjacency("lengths"), method="D", directed=False,
                                 indices=sources)


def symmetrize_exact(d: np.ndarray) -> np.ndarray:
    """Force bitwise symmetry by taking the entrywise minimum with the transpose.

    Dijkstra from different sources can round sums of the same path differently;
    the minimum is still a path length.
    """
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return d


def triangle_check(dist: np.ndarray, seed: int = 0) -> tuple[float, tuple[int, int, int]]:
    """Worst triangle-inequality excess, exhaustive for small spaces.

    Returns ``(excess, (i, j, k))`` with ``excess = d(i,k) - d(i,j) - d(j,k)``.
    """
    n = dist.shape[0]
    if n <= EXHAUSTIVE_TRIANGLE_LIMIT:
        v, i, j, k = core.triangle_violation(as_matrix(dist))
        return float(v), (int(i), int(j), int(k))
    rng = np.random.default_rng(seed)
    t = rng.integers(0, n, size=(SAMPLED_TRIPLES, 3))
    ex = dist[t[:, 0], t[:, 2]] - dist[t[:, 0], t[:, 1]] - dist[t[:, 1], t[:, 2]]
    w = int(np.argmax(ex))
    return float(ex[w]), tuple(int(x) for x in t[w])


def geodesic_space(g: WeightedGraph, basepoint: int = 0, check: bool = True,
                   seed: int = 0) -> MetricMeasureSpace:
    """Geodesic (shortest-path) metric measure space of a connected graph.

    Parameters
    ----------
    g : WeightedGraph
    basepoint : int
        Position of the basepoint.
    check : bool
        Verify the triangle inequality (exhaustive up to 300 points).
    seed : int
        Seed for the sampled triangle check on large spaces.
    """
    d = symmetrize_exact(shortest_paths(g))
    if check:
        excess, where = triangle_check(d, seed)
        scale = max(float(d.max()), 1.0)
        if excess > TRIANGLE_RTOL * scale:
            raise GraphValidationError(f"triangle inequality fails by {excess:g} at {where}")
    return MetricMeasureSpace(g.ids, d, g.measure, basepoint, g.coords)


def ball(space: MetricMeasureSpace, center: int, r: float) -> np.ndarray:
    """Positions of points at distance strictly less than ``r`` from ``center``."""
    return np.flatnonzero(space.dist[center] < r)


def closed_ball(space: MetricMeasureSpace, center: int, r: float) -> np.ndarray:
    """Positions of points at distance at most ``r`` from ``center``."""
    return np.flatnonzero(space.dist[center] <= r)


def _priority(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n).astype(np.int64)


def farthest_point_order(space: MetricMeasureSpace, seed: int = 0,
                         start: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Farthest-point traversal from the basepoint (or ``start``).

    Returns the visiting order and each point's insertion radius.
    """
    start = space.basepoint if start is None else start
    return core.farthest_point_order(space.dist, int(start), _priority(space.size, seed))


def epsilon_net(space: MetricMeasureSpace, eps: float, seed: int = 0) -> np.ndarray:
    """Greedy ε-net by farthest-point traversal from the basepoint.

    Every point lies within ``eps`` of the net and net points are pairwise more
    than ``eps`` apart. Ties between equally far candidates are broken by a
    permutation drawn from ``seed``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    order, radii = farthest_point_order(space, seed)
    keep = np.flatnonzero(radii > eps)
    return np.sort(order[keep])


def covering_radius(space: MetricMeasureSpace, points) -> float:
    """``max_x min_{p in points} d(x, p)``."""
    return float(space.dist[:, np.asarray(points)].min(axis=1).max())


def ball_masses(space: MetricMeasureSpace, radii, centers=None) -> np.ndarray:
    """``m(B(x, r))`` for every center ``x`` and radius ``r`` (open balls).

    Returns an array of shape ``(len(centers), len(radii))``.
    """
    centers = np.arange(space.size) if centers is None else np.asarray(centers)
    radii = np.asarray(radii, dtype=float)
    d = space.dist[centers]
    order = np.argsort(d, axis=1, kind="stable")
    ds = np.take_along_axis(d, order, axis=1)
    cm = np.cumsum(space.measure[order], axis=1)
    cm = np.concatenate([np.zeros((len(centers), 1)), cm], axis=1)
    out = np.empty((len(centers), len(radii)))
    for k, row in enumerate(ds):
        out[k] = cm[k, np.searchsorted(row, radii, side="left")]
    return out


@dataclass(frozen=True)
class RegularityReport:
    """Outcome of :func:`volume_regularity`.

    Attributes
    ----------
    C_v : float
        Smallest ``C`` with ``V(r)/C <= m(B(x,r)) <= C V(r)`` on the samples.
    gamma : float
        Annulus exponent ``log(1 + C_v**-4) / log 3``.
    witnesses : list of dict
        Worst ``(x, r)`` sample with its mass and profile value.
    passed : bool
    bound : float
    """

    C_v: float
    gamma: float
    witnesses: list
    passed: bool
    bound: float

    def to_dict(self) -> dict:
        return {"C_v": self.C_v, "gamma": self.gamma, "witnesses": self.witnesses,
                "pass": self.passed, "bound": self.bound}


def annulus_exponent(C_v: float) -> float:
    """``log(1 + C_v**-4) / log 3``."""
    return math.log1p(C_v ** -4) / math.log(3.0)


def volume_regularity(space: MetricMeasureSpace, V: VolumeProfile, r_grid,
                      centers=None, bound: float = 10.0) -> RegularityReport:
    """Measure how well ball masses follow the profile ``V``.

    Parameters
    ----------
    space : MetricMeasureSpace
    V : VolumeProfile
    r_grid : array_like
        Radii, expected in ``(0, diam)``.
    centers : array_like, optional
        Centers to test; all points by default.
    bound : float
        The report passes when the measured ``C_v`` does not exceed it.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    centers = np.arange(space.size) if centers is None else np.asarray(centers)
    mass = ball_masses(space, r_grid, centers)
    prof = np.broadcast_to(V(r_grid), mass.shape)
    ratio = np.maximum(mass / prof, prof / mass)
    k = int(np.argmax(ratio))
    ci, ri = divmod(k, len(r_grid))
    C_v = float(ratio[ci, ri])
    w = {"x": int(centers[ci]), "r": float(r_grid[ri]), "mass": float(mass[ci, ri]),
         "V": float(prof[ci, ri])}
    return RegularityReport(C_v, annulus_exponent(C_v), [w], C_v <= bound, bound)


@dataclass(frozen=True)
class AnnulusResult:
    ratio: float
    bound: float
    gamma: float
    exceeds: bool


def annulus_ratio(space: MetricMeasureSpace, z: int, r: float, R: float,
                  C_v: float = 1.0) -> AnnulusResult:
    """Relative mass of the annulus ``B(z,R)`` minus the closed ball of radius ``r``.

    The comparison bound is ``6**gamma * ((R - r)/R)**gamma`` with
    ``gamma = log(1 + C_v**-4)/log 3``.
    """
    if not 0 <= r < R:
        raise ValueError("need 0 <= r < R")
    d = space.dist[z]
    inner = space.measure[d < R]
    if not len(inner):
        raise ValueError("empty ball")
    total = math.fsum(inner)
    shell = math.fsum(space.measure[(d > r) & (d < R)])
    gamma = annulus_exponent(C_v)
    bound = 6.0 ** gamma * ((R - r) / R) ** gamma
    ratio = shell / total
    return AnnulusResult(ratio, bound, gamma, ratio > bound)


def diameter(space: MetricMeasureSpace) -> float:
    """Largest pairwise distance."""
    return float(space.dist.max())


def diameter_sequence_gap(spaces) -> np.ndarray:
    """``|diam(X_n) - diam(X_N)|`` for each member against the last one."""
    d = np.array([diameter(s) for s in spaces])
    return np.abs(d - d[-1])
