"""Member-to-proxy convergence diagnostics for scaled model sequences.

The finest member of a sequence stands in for the limit space. Every other
member is compared with it on matched balls ``B(p, R)`` through approximate
isometries: ``f`` maps the member to the proxy and ``g`` maps back.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csgraph

from .cubes import (ApproxIsometry, build_approx_isometry, default_tests, identity_isometry,
                    pushforward, weak_gap)
from .metric import (MetricMeasureSpace, RegularityReport, WeightedGraph, diameter,
                     geodesic_space, shortest_paths, symmetrize_exact, volume_regularity)
from .profiles import ScaleFunction, VolumeProfile
from .spectral import (DENSE_LIMIT, GraphDirichletForm, HeatKernel, SpectralData, assemble_part,
                       semigroup_apply, spectrum)

#: Relative eigenvalue gap below which neighbours form one cluster.
CLUSTER_RTOL = 1e-6
#: Identifier of the fixed test battery used for Mosco residuals.
BATTERY_VERSION = "battery-v1"
#: Gaps below this fraction of a curve's maximum count as exact zeros.
ZERO_RTOL = 1e-12
#: Curve groups that enter the pass/fail verdict.
GRADED_GROUPS = ("kernel", "eigenvalue", "weak", "mosco")


class SupportError(ValueError):
    """A function to embed is nonzero outside the matched ball."""


@dataclass(eq=False)
class SequenceMember:
    """One scaled model with its geometry, form and profiles."""

    level: int
    space: MetricMeasureSpace
    form: GraphDirichletForm
    psi: ScaleFunction
    volume: VolumeProfile
    mesh: float

    @classmethod
    def from_graph(cls, level: int, graph: WeightedGraph, psi: ScaleFunction,
                   volume: VolumeProfile, basepoint: int = 0,
                   neighborhood: float | None = None) -> "SequenceMember":
        """Member built from a graph, optionally cut down to ``B(p, neighborhood)``.

        The cut keeps exact distances (geodesics between points of ``B(p, r)``
        stay in ``B(p, 2r)``) and the Dirichlet form of the ball, so every ball
        part of radius at most ``neighborhood`` is unchanged.
        """
        form = GraphDirichletForm.from_graph(graph)
        mesh = float(graph.lengths.max())
        if neighborhood is None:
            return cls(level, geodesic_space(graph, basepoint, check=False), form, psi,
                       volume, mesh)
        d0 = shortest_paths(graph, [basepoint])[0]
        keep = np.flatnonzero(d0 < neighborhood)
        halo = np.flatnonzero(d0 < 2 * neighborhood)
        adj = graph.adjacency("lengths")[halo][:, halo]
        src = np.searchsorted(halo, keep)
        d = csgraph.shortest_path(adj, method="D", directed=False, indices=src)[:, src]
        space = MetricMeasureSpace(
            [graph.ids[i] for i in keep], symmetrize_exact(d), graph.measure[keep],
            int(np.searchsorted(keep, basepoint)),
            None if graph.coords is None else graph.coords[keep])
        return cls(level, space, form.restrict(keep), psi, volume, mesh)

    def ball(self, R: float) -> np.ndarray:
        return np.flatnonzero(self.space.dist[self.space.basepoint] < R)

    def bulk_floor(self) -> float:
        """Smallest time at which the member resolves diffusion (``psi(mesh)``)."""
        return float(self.psi(self.mesh))


@dataclass(eq=False)
class SpaceSequence:
    """Ordered members; the last one is the limit proxy.

    Attributes
    ----------
    members : list of SequenceMember
    to_proxy : list of ApproxIsometry
        ``to_proxy[i]`` maps member ``i`` to the proxy (identity for the proxy).
    consecutive : list of ApproxIsometry
        ``consecutive[i]`` maps member ``i`` to member ``i + 1``.
    radius : float
        Ball radius ``R`` shared by all members.
    """

    members: list
    to_proxy: list
    consecutive: list
    radius: float

    @classmethod
    def build(cls, members, radius: float, seed: int = 0, consecutive: bool = True) -> "SpaceSequence":
        if len(members) < 2:
            raise ValueError("a sequence needs at least two members")
        proxy = members[-1].space
        to_proxy = [build_approx_isometry(m.space, proxy, seed) for m in members[:-1]]
        to_proxy.append(identity_isometry(proxy))
        cons = []
        if consecutive:
            cons = [build_approx_isometry(a.space, b.space, seed)
                    for a, b in zip(members[:-1], members[1:])]
        return cls(list(members), to_proxy, cons, float(radius))

    @property
    def proxy(self) -> SequenceMember:
        return self.members[-1]

    @property
    def levels(self) -> list:
        return [m.level for m in self.members]


# ----------------------------------------------------------------------------
# embeddings


def l2_embed(u, iso: ApproxIsometry, member_ball, proxy_ball, member_size: int) -> np.ndarray:
    """``u o f`` on the member ball and 0 elsewhere.

    Parameters
    ----------
    u : array_like
        Function on all proxy points; must vanish outside ``proxy_ball``.
    iso : ApproxIsometry
        Member to proxy.
    """
    u = np.asarray(u, dtype=float)
    outside = np.ones(len(u), dtype=bool)
    outside[proxy_ball] = False
    if np.any(u[outside] != 0):
        raise SupportError("function escapes the proxy ball")
    out = np.zeros(member_size)
    out[member_ball] = u[iso.forward[member_ball]]
    return out


def weighted_norm(u, measure) -> float:
    return math.sqrt(math.fsum(np.asarray(measure) * np.asarray(u) ** 2))


def norm_gap(u, iso: ApproxIsometry, member: SequenceMember, proxy: SequenceMember, R: float) -> float:
    """``| ||u o f||_member - ||u||_proxy |`` in the measure-weighted norms."""
    e = l2_embed(u, iso, member.ball(R), proxy.ball(R), member.space.size)
    return abs(weighted_norm(e, member.space.measure) - weighted_norm(u, proxy.space.measure))


# ----------------------------------------------------------------------------
# kernels and spectra


@dataclass(frozen=True)
class KernelGap:
    value: float
    reliable: bool
    witness: tuple


def pullback_kernel_gap(member_kernel: HeatKernel, g, proxy_kernel: HeatKernel, t: float,
                        bulk_floor: float = 0.0) -> KernelGap:
    """``sup |p_member(t, g x, g y) - p_proxy(t, x, y)|`` over proxy-ball pairs.

    Pairs whose image leaves the member ball read the member kernel as 0.
    Below ``bulk_floor`` the member is in its discretization regime and the gap
    is flagged unreliable.
    """
    g = np.asarray(g, dtype=np.int64)
    q = proxy_kernel.matrix(t)
    mi = member_kernel.interior
    lookup = np.full(int(max(mi.max(), g.max())) + 1, -1, dtype=np.int64)
    lookup[mi] = np.arange(len(mi))
    pos = lookup[g[proxy_kernel.interior]]
    inside = pos >= 0
    pm = member_kernel.matrix(t)
    pulled = np.zeros_like(q)
    ii = np.flatnonzero(inside)
    pulled[np.ix_(ii, ii)] = pm[np.ix_(pos[ii], pos[ii])]
    diff = np.abs(pulled - q)
    k = int(np.argmax(diff))
    i, j = divmod(k, diff.shape[1])
    return KernelGap(float(diff[i, j]), t >= bulk_floor,
                     (int(proxy_kernel.interior[i]), int(proxy_kernel.interior[j])))


def eigen_clusters(values, rtol: float = CLUSTER_RTOL) -> list:
    """Group ascending eigenvalues whose relative gap is below ``rtol``."""
    values = np.asarray(values)
    clusters, cur = [], [0]
    for j in range(1, len(values)):
        scale = max(abs(values[j]), abs(values[j - 1]), np.finfo(float).tiny)
        if (values[j] - values[j - 1]) / scale < rtol:
            cur.append(j)
        else:
            clusters.append(cur)
            cur = [j]
    if len(values):
        clusters.append(cur)
    return clusters


@dataclass(frozen=True)
class EigenGaps:
    """Per-index eigenvalue gaps and per-cluster eigenfunction sup gaps.

    ``function_gaps[c]`` belongs to ``clusters[c]``: sign-minimized for simple
    eigenvalues, projector-kernel sup gap otherwise.
    """

    value_gaps: np.ndarray
    clusters: list
    function_gaps: np.ndarray

    def simple_indices(self) -> list:
        return [c[0] for c in self.clusters if len(c) == 1]


def eigen_data_gap(member: SpectralData, proxy: SpectralData, g, count: int) -> EigenGaps:
    """Compare the lowest ``count`` eigenpairs of a member part and the proxy part.

    Clusters are formed on the proxy spectrum. Member eigenfunctions are pulled
    back through ``g`` (proxy to member) and read as 0 off the member ball.
    """
    if count > min(member.count, proxy.count):
        raise ValueError("count exceeds the available eigenpairs")
    g = np.asarray(g, dtype=np.int64)
    gaps = np.abs(member.values[:count] - proxy.values[:count])
    lookup = np.full(int(max(member.interior.max(), g.max())) + 1, -1, dtype=np.int64)
    lookup[member.interior] = np.arange(member.size)
    pos = lookup[g[proxy.interior]]
    pulled = np.zeros((proxy.size, count))
    ok = pos >= 0
    pulled[ok] = member.vectors[pos[ok], :count]
    target = proxy.vectors[:, :count]
    clusters = [c for c in eigen_clusters(proxy.values) if c[0] < count]
    clusters[-1] = [j for j in clusters[-1] if j < count]
    fgaps = []
    for c in clusters:
        if len(c) == 1:
            j = c[0]
            fgaps.append(min(np.abs(target[:, j] - pulled[:, j]).max(),
                             np.abs(target[:, j] + pulled[:, j]).max()))
        else:
            a, b = target[:, c], pulled[:, c]
            fgaps.append(float(np.abs(a @ a.T - b @ b.T).max()))
    return EigenGaps(gaps, clusters, np.asarray(fgaps, dtype=float))


def mosco_residual(v, t: float, member_spec: SpectralData, proxy_spec: SpectralData,
                   iso: ApproxIsometry, member_size: int, proxy_size: int) -> float:
    """``|| P_t^member (v o f) - (Q_t v) o f ||`` in the member's weighted norm.

    ``v`` lives on all proxy points and vanishes off the proxy ball; both
    semigroups are the Dirichlet semigroups of the ball parts.
    """
    v = np.asarray(v, dtype=float)
    mball, pball = member_spec.interior, proxy_spec.interior
    ev = l2_embed(v, iso, mball, pball, member_size)
    left = semigroup_apply(member_spec, t, ev[mball])
    qv = np.zeros(proxy_size)
    qv[pball] = semigroup_apply(proxy_spec, t, v[pball])
    right = l2_embed(qv, iso, mball, pball, member_size)[mball]
    return weighted_norm(left - right, member_spec.measure)


def battery_functions(proxy: SequenceMember, spec: SpectralData, R: float) -> dict:
    """Fixed battery: ball indicator, three radial tents, first three eigenfunctions."""
    tests = default_tests(proxy.space, R)
    ball = np.zeros(proxy.space.size, dtype=bool)
    ball[spec.interior] = True
    out = {"one": np.where(ball, 1.0, 0.0)}
    for k in ("bump_q1", "bump_q2", "bump_q3"):
        out[k] = np.where(ball, tests[k], 0.0)
    for j in range(min(3, spec.count)):
        phi = np.zeros(proxy.space.size)
        phi[spec.interior] = spec.vectors[:, j]
        out[f"eig{j + 1}"] = phi
    return out


# ----------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class LimitMeasure:
    masses: np.ndarray
    regularity: RegularityReport


def limit_measure_estimate(seq: SpaceSequence, R: float, r_grid, member: int = -2,
                           bound: float = 10.0) -> LimitMeasure:
    """Pushforward of a member's ball measure onto the proxy, with its regularity.

    The regularity constant is measured on balls centered in ``B(p, R/2)`` with
    radii from ``r_grid`` that stay inside ``B(p, R)``.
    """
    m = seq.members[member]
    iso = seq.to_proxy[member]
    proxy = seq.proxy.space
    pf = pushforward(m.space.measure, iso.forward, m.ball(R), proxy.size)
    # Ball masses ignore massless points, so regularity is measured on the support.
    support = np.flatnonzero(pf.masses > 0)
    d0 = proxy.dist[proxy.basepoint]
    base = int(np.argmin(d0[support]))
    est = MetricMeasureSpace(tuple(proxy.ids[i] for i in support),
                             proxy.dist[np.ix_(support, support)], pf.masses[support], base)
    centers = np.flatnonzero(d0[support] < R / 2)
    r_grid = np.asarray(r_grid, dtype=float)
    r_grid = r_grid[r_grid <= R / 2]
    rep = volume_regularity(est, seq.proxy.volume, r_grid, centers=centers, bound=bound)
    for w in rep.witnesses:
        w["x"] = int(support[w["x"]])
    return LimitMeasure(pf.masses, rep)


# ----------------------------------------------------------------------------
# report


def decreasing_tail(values, reliable=None, tail: int = 3, scale: float | None = None,
                    zero_rtol: float = ZERO_RTOL) -> bool:
    """Strict decrease over the last ``tail`` reliable entries.

    Entries at or below ``zero_rtol * scale`` are exact zeros up to roundoff; a
    zero may follow a zero. ``scale`` is the magnitude of the compared
    quantities (the curve maximum by default).
    """
    v = np.asarray(values, dtype=float)
    if reliable is not None:
        v = v[np.asarray(reliable, dtype=bool)]
    if len(v) < tail or not np.all(np.isfinite(v)):
        return False
    scale = float(np.abs(v).max()) if scale is None else float(scale)
    v = np.where(np.abs(v) <= zero_rtol * scale, 0.0, v)[-tail:]
    return bool(all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(v[:-1], v[1:])))


@dataclass
class ConvergenceReport:
    """Gap curves indexed by member level, with monotone-decrease verdicts.

    ``curves[name]`` is a list aligned with ``levels``; ``reliable[name]`` flags
    entries admissible for verdicts; ``scales[name]`` is the magnitude of the
    compared quantities; ``groups`` maps each acceptance family to its curve
    names.
    """

    levels: list
    curves: dict = field(default_factory=dict)
    reliable: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)
    groups: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    tail: int = 3

    def add(self, group: str, name: str, values, reliable=None, witnesses=None,
            scale: float | None = None) -> None:
        self.curves[name] = [float(v) for v in values]
        if scale is not None:
            self.scales[name] = float(scale)
        self.reliable[name] = [True] * len(values) if reliable is None else [bool(r) for r in reliable]
        self.groups.setdefault(group, []).append(name)
        if witnesses is not None:
            self.witnesses[name] = witnesses

    def verdicts(self) -> dict:
        return {k: decreasing_tail(v, self.reliable[k], self.tail, self.scales.get(k))
                for k, v in self.curves.items()}

    def group_verdicts(self) -> dict:
        v = self.verdicts()
        return {g: all(v[n] for n in names) for g, names in self.groups.items()}

    @property
    def passed(self) -> bool:
        gv = self.group_verdicts()
        return all(gv[g] for g in GRADED_GROUPS if g in gv)

    def to_dict(self) -> dict:
        return {"levels": list(self.levels), "curves": self.curves, "reliable": self.reliable,
                "scales": self.scales,
                "groups": self.groups, "verdicts": self.verdicts(),
                "group_verdicts": self.group_verdicts(), "witnesses": self.witnesses,
                "extras": self.extras, "battery": BATTERY_VERSION, "tail": self.tail}


def convergence_report(seq: SpaceSequence, times=(0.1, 0.5), modes: int = 5,
                       tail: int = 3, dense_limit: int = DENSE_LIMIT) -> ConvergenceReport:
    """All gap curves of ``seq`` against its proxy.

    Groups: ``kernel`` (sup gaps per t), ``eigenvalue`` (first ``modes`` simple
    proxy modes), ``weak`` (default tests), ``mosco`` (battery x t), plus
    ungraded ``eigenfunction``, ``norm`` and ``diameter`` curves.
    """
    R = seq.radius
    proxy = seq.proxy
    members = seq.members[:-1]
    pspec = spectrum(assemble_part(proxy.form, proxy.space, proxy.space.basepoint, R),
                     dense_limit=dense_limit)
    pker = HeatKernel(pspec)
    mspecs = [spectrum(assemble_part(m.form, m.space, m.space.basepoint, R), dense_limit=dense_limit)
              for m in members]
    rep = ConvergenceReport([m.level for m in members], tail=tail)

    for t in times:
        gaps = [pullback_kernel_gap(HeatKernel(s), iso.backward, pker, t, m.bulk_floor())
                for m, s, iso in zip(members, mspecs, seq.to_proxy)]
        rep.add("kernel", f"kernel_sup_gap/t={t:g}", [k.value for k in gaps],
                [k.reliable for k in gaps], [list(k.witness) for k in gaps],
                scale=float(np.abs(pker.matrix(t)).max()))

    count = min(min(s.count for s in mspecs), pspec.count)
    simple = [c[0] for c in eigen_clusters(pspec.values) if len(c) == 1 and c[0] < count][:modes]
    eg = [eigen_data_gap(s, pspec, iso.backward, count) for s, iso in zip(mspecs, seq.to_proxy)]
    for j in simple:
        rep.add("eigenvalue", f"eigenvalue_gap/j={j + 1}", [e.value_gaps[j] for e in eg],
                scale=float(pspec.values[j]))
        ci = next(i for i, c in enumerate(eg[0].clusters) if c == [j])
        rep.add("eigenfunction", f"eigenfunction_gap/j={j + 1}", [e.function_gaps[ci] for e in eg])
    rep.extras["simple_modes"] = [j + 1 for j in simple]
    rep.extras["proxy_eigenvalues"] = [float(x) for x in pspec.values[:count]]

    tests = default_tests(proxy.space, R)
    nu = np.zeros(proxy.space.size)
    nu[pspec.interior] = pspec.measure
    wg = [weak_gap(pushforward(m.space.measure, iso.forward, m.ball(R), proxy.space.size), nu, tests)
          for m, iso in zip(members, seq.to_proxy)]
    for k in tests:
        rep.add("weak", f"weak_gap/{k}", [w[k] for w in wg],
                scale=math.fsum(nu * np.abs(tests[k])))

    battery = battery_functions(proxy, pspec, R)
    for name, v in battery.items():
        for t in times:
            rep.add("mosco", f"mosco/{name}/t={t:g}",
                    [mosco_residual(v, t, s, pspec, iso, m.space.size, proxy.space.size)
                     for m, s, iso in zip(members, mspecs, seq.to_proxy)],
                    [t >= m.bulk_floor() for m in members],
                    scale=weighted_norm(v, proxy.space.measure))
        rep.add("norm", f"norm_gap/{name}",
                [norm_gap(v, iso, m, proxy, R) for m, iso in zip(members, seq.to_proxy)],
                scale=weighted_norm(v, proxy.space.measure))

    dproxy = diameter(proxy.space)
    rep.add("diameter", "diameter_gap", [abs(diameter(m.space) - dproxy) for m in members],
            scale=dproxy)
    rep.extras["isometry_eps"] = [iso.eps for iso in seq.to_proxy[:-1]]
    rep.extras["consecutive_eps"] = [iso.eps for iso in seq.consecutive]
    return rep

