"""Model generators: pre-carpet windows, gasket cable systems, ingested graphs.

Generators work in the unscaled units of the base space: lattice spacing 1 for
the carpet, unit cables for the gasket. The member ``n`` of a converging
sequence is obtained with :func:`rescale`, which shrinks distances by
``l**-n``, measures by ``l**(-alpha n)`` and multiplies conductances by
``l**((beta - alpha) n)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metric import GraphValidationError, WeightedGraph
from .profiles import PiecewisePower

CARPET_ALPHA = math.log(8) / math.log(3)
GASKET_ALPHA = math.log(3) / math.log(2)
GASKET_BETA = math.log(5) / math.log(2)

#: Default cap on generated vertex counts.
MAX_VERTICES = 60_000


class ModelSizeError(ValueError):
    """Raised when a requested model exceeds the vertex cap."""


def _check_cap(count: int, cap: int) -> None:
    if count > cap:
        raise ModelSizeError(f"model would have about {count} vertices, above the limit of {cap}")


def carpet_cell_kept(i, j) -> np.ndarray:
    """True for unit cells ``[i,i+1]x[j,j+1]`` of the pre-carpet.

    A cell is removed when, at some base-3 digit position, both coordinates
    have digit 1.
    """
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    keep = np.ones(np.broadcast(i, j).shape, dtype=bool)
    while np.any((i > 0) & (j > 0)):
        keep &= ~((i % 3 == 1) & (j % 3 == 1))
        i = i // 3
        j = j // 3
    return keep


def _cable_graph(coords: np.ndarray, edges: np.ndarray, lengths: np.ndarray) -> WeightedGraph:
    n = len(coords)
    measure = np.zeros(n)
    np.add.at(measure, edges[:, 0], lengths / 2)
    np.add.at(measure, edges[:, 1], lengths / 2)
    return WeightedGraph(tuple(range(n)), edges, lengths, 1.0 / lengths, measure, coords)


def pre_carpet(level: int, window: float = 1.0, cap: int = MAX_VERTICES) -> WeightedGraph:
    """Lattice graph of the pre-carpet on the square ``[0, window * 3**level]**2``.

    Vertices are the integer points on retained unit cells; edges join lattice
    neighbours on the boundary of a retained cell. Edges have unit length and
    unit conductance; each vertex carries half its incident length as mass.
    After ``rescale(..., l=3, n=level)`` the window becomes ``[0, window]**2``.

    Parameters
    ----------
    level : int
        Number of carpet levels resolved inside a unit square of the rescaled
        space.
    window : float
        Side of the window in rescaled units; ``window * 3**level`` must be an
        integer.
    cap : int
        Maximal vertex count.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    side = window * 3 ** level
    L = int(round(side))
    if L < 1 or abs(L - side) > 1e-9:
        raise ValueError("window * 3**level must be a positive integer")
    _check_cap((L + 1) ** 2, cap)
    ci, cj = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    kept = carpet_cell_kept(ci, cj)
    # a lattice edge is present when one of the (at most two) cells it borders is kept
    hx = np.zeros((L, L + 1), dtype=bool)  # edge (i,j)-(i+1,j)
    hx[:, :-1] |= kept
    hx[:, 1:] |= kept
    vy = np.zeros((L + 1, L), dtype=bool)  # edge (i,j)-(i,j+1)
    vy[:-1, :] |= kept
    vy[1:, :] |= kept
    node = np.zeros((L + 1, L + 1), dtype=bool)
    node[:-1, :-1] |= kept
    node[1:, :-1] |= kept
    node[:-1, 1:] |= kept
    node[1:, 1:] |= kept
    idx = -np.ones((L + 1, L + 1), dtype=np.int64)
    pts = np.argwhere(node)  # row-major: sorted by x then y
    idx[pts[:, 0], pts[:, 1]] = np.arange(len(pts))
    a = np.argwhere(hx)
    b = np.argwhere(vy)
    edges = np.concatenate([
        np.stack([idx[a[:, 0], a[:, 1]], idx[a[:, 0] + 1, a[:, 1]]], axis=1),
        np.stack([idx[b[:, 0], b[:, 1]], idx[b[:, 0], b[:, 1] + 1]], axis=1),
    ])
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return _cable_graph(pts.astype(float), edges, np.ones(len(edges)))


def gasket_triangles(level: int) -> np.ndarray:
    """Lattice coordinates ``(a, b)`` of the unit up-triangles in the level-``level`` gasket.

    The triangle with corner ``(a, b)`` has corners ``(a,b), (a+1,b), (a,b+1)``
    in the oblique lattice basis ``(1,0), (1/2, sqrt(3)/2)``.
    """
    n = 2 ** level
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = (a + b <= n - 1) & ((a & b) == 0)
    return np.argwhere(keep)


def gasket_cable(level: int, subdivision: int = 1, cap: int = MAX_VERTICES) -> WeightedGraph:
    """Cable graph of the level-``level`` gasket with unit edges.

    The vertices of the level-``level`` gasket graph (side ``2**level``) are
    joined by unit cables, each split into ``subdivision`` segments of length
    ``1/subdivision``. Conductance is ``1/length`` and each vertex carries half
    its incident length as mass. The basepoint ``(0, 0)`` has position 0.
    """
    if level < 0 or subdivision < 1:
        raise ValueError("need level >= 0 and subdivision >= 1")
    n_edges = 3 ** (level + 1)
    _check_cap((3 ** (level + 1) + 3) // 2 + n_edges * (subdivision - 1), cap)
    tri = gasket_triangles(level)
    corner = np.concatenate([tri, tri + [1, 0], tri + [0, 1]])
    lat, inv = np.unique(corner, axis=0, return_inverse=True)
    inv = inv.reshape(3, -1)
    base_edges = np.concatenate([
        np.stack([inv[0], inv[1]], axis=1),
        np.stack([inv[0], inv[2]], axis=1),
        np.stack([inv[1], inv[2]], axis=1),
    ])
    base_edges = np.sort(base_edges, axis=1)
    base_edges = base_edges[np.lexsort((base_edges[:, 1], base_edges[:, 0]))]
    xy = np.stack([lat[:, 0] + 0.5 * lat[:, 1], lat[:, 1] * (math.sqrt(3) / 2)], axis=1)
    m = subdivision
    if m == 1:
        return _cable_graph(xy, base_edges, np.ones(len(base_edges)))
    nb = len(xy)
    k = np.arange(1, m)
    # interior points of edge e get ids nb + e*(m-1) + (k-1)
    p, q = xy[base_edges[:, 0]], xy[base_edges[:, 1]]
    inner = p[:, None, :] + (q - p)[:, None, :] * (k / m)[None, :, None]
    coords = np.concatenate([xy, inner.reshape(-1, 2)])
    chain = np.empty((len(base_edges), m + 1), dtype=np.int64)
    chain[:, 0] = base_edges[:, 0]
    chain[:, -1] = base_edges[:, 1]
    chain[:, 1:-1] = nb + np.arange(len(base_edges) * (m - 1)).reshape(-1, m - 1)
    edges = np.stack([chain[:, :-1].ravel(), chain[:, 1:].ravel()], axis=1)
    return _cable_graph(coords, edges, np.full(len(edges), 1.0 / m))


def rescale(g: WeightedGraph, l: float, alpha: float, beta: float, n: int) -> WeightedGraph:
    """Member ``n`` of the scaling sequence generated by ``g``.

    Distances are multiplied by ``l**-n``, measures by ``l**(-alpha n)`` and
    conductances by ``l**((beta - alpha) n)``. The heat kernel then satisfies
    ``p_n(t, x, y) = l**(alpha n) * p(l**(beta n) t, x, y)``.
    """
    if n == 0:
        return g
    s_len = float(l) ** (-n)
    s_mass = float(l) ** (-alpha * n)
    s_cond = float(l) ** ((beta - alpha) * n)
    return WeightedGraph(g.ids, g.edges, g.lengths * s_len, g.conductances * s_cond,
                         g.measure * s_mass, None if g.coords is None else g.coords * s_len)


def rescale_profile(f: PiecewisePower, l: float, exponent: float, n: int) -> PiecewisePower:
    """``r -> l**(-exponent n) f(l**n r)``, the profile of member ``n``."""
    return f.rescaled(l, exponent, n)


@dataclass(frozen=True)
class FractalModelSpec:
    """Description of one member of a model sequence.

    Parameters
    ----------
    family : {"pre_carpet", "gasket_cable", "generic_graph"}
    level : int
    l : int
        Contraction ratio (3 for the carpet, 2 for the gasket).
    subdivision : int
        Cable subdivision (gasket only).
    alpha, beta : float or None
        Volume and walk exponents; ``beta=None`` means it must be fitted.
    window : float
        Window side in rescaled units (carpet only).
    path : str, optional
        Graph file (generic graphs only).
    cap : int
        Vertex cap.
    """

    family: str
    level: int = 0
    l: int = 2
    subdivision: int = 1
    alpha: float | None = None
    beta: float | None = None
    window: float = 1.0
    path: str | None = None
    cap: int = MAX_VERTICES

    def __post_init__(self):
        if self.family not in ("pre_carpet", "gasket_cable", "generic_graph"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if int(self.l) != self.l or self.l < 2:
            raise ValueError("contraction l must be an integer >= 2")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def carpet(cls, level: int, window: float = 1.0, beta: float | None = None, **kw):
        return cls("pre_carpet", level, 3, 1, CARPET_ALPHA, beta, window, **kw)

    @classmethod
    def gasket(cls, level: int, subdivision: int = 1, **kw):
        return cls("gasket_cable", level, 2, subdivision, GASKET_ALPHA, GASKET_BETA, **kw)

    def base_graph(self) -> WeightedGraph:
        """Unscaled graph."""
        if self.family == "pre_carpet":
            return pre_carpet(self.level, self.window, self.cap)
        if self.family == "gasket_cable":
            return gasket_cable(self.level, self.subdivision, self.cap)
        if self.path is None:
            raise ValueError("generic_graph needs a path")
        return ingest_graph(self.path)

    def scaled_graph(self, beta: float | None = None) -> WeightedGraph:
        """Member ``level`` of the scaling sequence (requires ``beta``)."""
        beta = self.beta if beta is None else beta
        if beta is None or self.alpha is None:
            raise ValueError("scaled graph needs alpha and beta")
        n = self.level if self.family != "generic_graph" else 0
        return rescale(self.base_graph(), self.l, self.alpha, beta, n)


# ----------------------------------------------------------------------------
# graph files


class GraphFormatError(ValueError):
    """Parse or validation failure in a graph file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


_INT = re.compile(r"-?[0-9]+\Z")


def _label(tok: str):
    return int(tok) if _INT.match(tok) and str(int(tok)) == tok else tok


def _num(tok: str, what: str, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise GraphFormatError(f"bad {what} {tok!r}", line) from None
    if not math.isfinite(v):
        raise GraphFormatError(f"non-finite {what}", line)
    return v


def parse_graph(text: str) -> WeightedGraph:
    """Parse the ``V <id> <measure>`` / ``E <id> <id> <length> <conductance>`` format."""
    ids, meas, index = [], [], {}
    edges, lens, conds = [], [], []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "V":
            if len(tok) != 3:
                raise GraphFormatError("vertex record needs 2 fields", ln)
            vid = _label(tok[1])
            if vid in index:
                raise GraphFormatError(f"duplicate vertex {tok[1]!r}", ln)
            m = _num(tok[2], "measure", ln)
            if m <= 0:
                raise GraphFormatError(f"vertex {tok[1]!r} has non-positive measure", ln)
            index[vid] = len(ids)
            ids.append(vid)
            meas.append(m)
        elif tok[0] == "E":
            if len(tok) != 5:
                raise GraphFormatError("edge record needs 4 fields", ln)
            a, b = _label(tok[1]), _label(tok[2])
            for v in (a, b):
                if v not in index:
                    raise GraphFormatError(f"edge references unknown vertex {v!r}", ln)
            if a == b:
                raise GraphFormatError(f"self-loop at {tok[1]!r}", ln)
            length = _num(tok[3], "length", ln)
            cond = _num(tok[4], "conductance", ln)
            if length <= 0:
                raise GraphFormatError("non-positive length", ln)
            if cond <= 0:
                raise GraphFormatError("non-positive conductance", ln)
            edges.append((index[a], index[b]))
            lens.append(length)
            conds.append(cond)
        else:
            raise GraphFormatError(f"unknown record type {tok[0]!r}", ln)
    try:
        return WeightedGraph(tuple(ids), np.array(edges, dtype=np.int64).reshape(-1, 2),
                             np.array(lens), np.array(conds), np.array(meas))
    except GraphValidationError as exc:
        raise GraphFormatError(str(exc)) from exc


def format_graph(g: WeightedGraph, comment: str | None = None) -> str:
    """Serialize a graph; floats use the shortest round-tripping repr."""
    out = []
    if comment:
        out.extend(f"# {c}" for c in comment.splitlines())
    for vid, m in zip(g.ids, g.measure):
        out.append(f"V {vid} {float(m)!r}")
    for (a, b), length, c in zip(g.edges, g.lengths, g.conductances):
        out.append(f"E {g.ids[a]} {g.ids[b]} {float(length)!r} {float(c)!r}")
    return "\n".join(out) + "\n"


def ingest_graph(path) -> WeightedGraph:
    """Read and validate a graph file."""
    return parse_graph(Path(path).read_text())


def write_graph(g: WeightedGraph, path, comment: str | None = None) -> None:
    Path(path).write_text(format_graph(g, comment))


def format_coords(g: WeightedGraph) -> str:
    """Planar coordinates as CSV ``id,x,y``."""
    if g.coords is None:
        raise ValueError("graph has no coordinates")
    rows = ["id,x,y"] + [f"{vid},{float(x)!r},{float(y)!r}" for vid, (x, y) in zip(g.ids, g.coords)]
    return "\n".join(rows) + "\n"


def nearest_vertex(g: WeightedGraph, point) -> int:
    """Position of the vertex closest (Euclidean) to ``point``."""
    if g.coords is None:
        raise ValueError("graph has no coordinates")
    return int(np.argmin(np.linalg.norm(g.coords - np.asarray(point, float), axis=1)))
