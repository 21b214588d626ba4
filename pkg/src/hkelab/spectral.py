"""Graph Dirichlet forms, their parts on balls, spectra and heat kernels.

For conductances ``c`` and vertex measure ``m`` the energy is
``E(u) = 1/2 sum_{x,y} c(x,y) (u(x) - u(y))**2 = u^T K u`` with
``K = D - C``. The generator is ``M^-1 K`` and the heat kernel is the density of
``exp(-t M^-1 K)`` with respect to ``m``::

    p(t, x, y) = sum_j exp(-lambda_j t) phi_j(x) phi_j(y)

with ``phi_j`` orthonormal in ``L^2(m)``. Parts on a ball keep the rows and
columns of interior vertices only, which imposes the Dirichlet condition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .metric import MetricMeasureSpace, WeightedGraph

#: Largest interior size solved with a dense eigensolver.
DENSE_LIMIT = 3000
GRAM_TOL = 1e-10
RESIDUAL_RTOL = 1e-8


class SpectralError(RuntimeError):
    """Eigensolver failure, with residual diagnostics in the message."""


@dataclass(frozen=True, eq=False)
class GraphDirichletForm:
    """Energy ``1/2 sum c(x,y)(u(x)-u(y))**2 + sum k(x) u(x)**2`` on ``L^2(m)``.

    Attributes
    ----------
    conductance : scipy.sparse.csr_matrix
        Symmetric, nonnegative, zero diagonal.
    measure : ndarray
        Positive vertex masses.
    killing : ndarray, optional
        Nonnegative killing rates ``k``; a restricted form carries the
        conductance to the removed vertices here.
    """

    conductance: sparse.csr_matrix
    measure: np.ndarray
    killing: np.ndarray | None = None

    def __post_init__(self):
        c = sparse.csr_matrix(self.conductance, dtype=float)
        if c.shape[0] != c.shape[1] or c.shape[0] != len(self.measure):
            raise ValueError("shape mismatch")
        if (abs(c - c.T)).max() if c.nnz else 0.0:
            raise ValueError("conductances must be symmetric")
        if c.nnz and c.data.min() < 0:
            raise ValueError("conductances must be nonnegative")
        if c.diagonal().any():
            raise ValueError("conductance diagonal must be zero")
        m = np.array(self.measure, dtype=float)
        if np.any(~(m > 0)):
            raise ValueError("measure must be positive")
        m.setflags(write=False)
        k = np.zeros(len(m)) if self.killing is None else np.array(self.killing, dtype=float)
        if k.shape != m.shape or np.any(~(k >= 0)):
            raise ValueError("killing rates must be nonnegative, one per vertex")
        k.setflags(write=False)
        object.__setattr__(self, "conductance", c)
        object.__setattr__(self, "measure", m)
        object.__setattr__(self, "killing", k)

    @classmethod
    def from_graph(cls, g: WeightedGraph) -> "GraphDirichletForm":
        return cls(g.adjacency("conductances"), g.measure)

    @property
    def size(self) -> int:
        return len(self.measure)

    def energy_matrix(self) -> sparse.csr_matrix:
        """``K = D - C + diag(k)`` with ``D`` the weighted degree."""
        deg = np.asarray(self.conductance.sum(axis=1)).ravel()
        return (sparse.diags(deg + self.killing) - self.conductance).tocsr()

    def energy(self, u) -> float:
        """``1/2 sum_{x,y} c(x,y)(u(x)-u(y))**2 + sum_x k(x) u(x)**2``."""
        u = np.asarray(u, dtype=float)
        c = self.conductance.tocoo()
        return 0.5 * float(np.sum(c.data * (u[c.row] - u[c.col]) ** 2)) \
            + float(np.sum(self.killing * u ** 2))

    def restrict(self, points) -> "GraphDirichletForm":
        """Form on ``points`` with Dirichlet condition on the removed vertices.

        Its energy matrix equals ``K[points][:, points]`` of the full form.
        """
        points = np.asarray(points, dtype=np.int64)
        c = self.conductance[points][:, points]
        lost = np.asarray(self.conductance[points].sum(axis=1)).ravel() \
            - np.asarray(c.sum(axis=1)).ravel()
        return GraphDirichletForm(c, self.measure[points],
                                  self.killing[points] + np.maximum(lost, 0.0))


@dataclass(frozen=True, eq=False)
class BallPart:
    """Part of a form on the open ball ``B(p, R)`` (Dirichlet outside).

    Attributes
    ----------
    form : GraphDirichletForm
    interior : ndarray
        Sorted vertex positions of the ball.
    R : float
    center : int
    """

    form: GraphDirichletForm
    interior: np.ndarray
    R: float
    center: int

    @property
    def size(self) -> int:
        return len(self.interior)

    @property
    def measure(self) -> np.ndarray:
        return self.form.measure[self.interior]

    def energy_matrix(self) -> sparse.csr_matrix:
        k = self.form.energy_matrix()
        i = self.interior
        return k[i][:, i].tocsr()


def full_part(form: GraphDirichletForm) -> BallPart:
    """The whole space viewed as a part (no boundary)."""
    return BallPart(form, np.arange(form.size), math.inf, 0)


def assemble_part(form: GraphDirichletForm, space: MetricMeasureSpace | np.ndarray,
                  p: int, R: float) -> BallPart:
    """Part of ``form`` on the open ball ``B(p, R)``.

    Parameters
    ----------
    form : GraphDirichletForm
    space : MetricMeasureSpace or ndarray
        Either the space, or a precomputed distance row from ``p``.
    p : int
        Center position.
    R : float
        Radius (open ball).
    """
    d = space.dist[p] if isinstance(space, MetricMeasureSpace) else np.asarray(space)
    interior = np.flatnonzero(d < R)
    if not len(interior):
        raise ValueError("empty ball")
    return BallPart(form, interior, float(R), int(p))


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenpairs of a part, ascending.

    ``vectors[:, j]`` is ``phi_j`` on the interior, orthonormal in ``L^2(m)``.
    """

    values: np.ndarray
    vectors: np.ndarray
    measure: np.ndarray
    interior: np.ndarray
    complete: bool
    gram_error: float
    residual: float

    @property
    def size(self) -> int:
        return len(self.measure)

    @property
    def count(self) -> int:
        return len(self.values)


def _check(values, vectors, K, m, tol_scale):
    gram = vectors.T @ (vectors * m[:, None])
    gram_err = float(np.abs(gram - np.eye(len(values))).max()) if len(values) else 0.0
    r = K @ vectors - (vectors * m[:, None]) * values[None, :]
    # residual measured in the M^{-1} norm: ||M^{-1/2}(K phi - lambda M phi)||
    res = float(np.linalg.norm(r / np.sqrt(m)[:, None], axis=0).max()) if len(values) else 0.0
    return gram_err, res


def spectrum(part: BallPart, k: int | None = None, dense_limit: int = DENSE_LIMIT) -> SpectralData:
    """Dirichlet eigenpairs of a part.

    Solves ``K phi = lambda M phi`` after symmetrizing with ``M^{-1/2}``.
    Dense for interiors up to ``dense_limit``; above it the ``k`` lowest pairs
    come from a shift-invert Lanczos solve.

    Parameters
    ----------
    part : BallPart
    k : int, optional
        Number of pairs; all of them by default.
    """
    n = part.size
    k = n if k is None else int(k)
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= interior size")
    K = part.energy_matrix()
    m = part.measure
    s = 1.0 / np.sqrt(m)
    S = K.multiply(s[:, None]).multiply(s[None, :]).tocsr()
    if n <= dense_limit:
        A = S.toarray()
        A = 0.5 * (A + A.T)
        w, v = sla.eigh(A, subset_by_index=None if k == n else [0, k - 1], driver="evr")
    else:
        if k >= n - 1:
            raise SpectralError(f"interior of {n} exceeds the dense limit; request k < {n - 1}")
        shift = -1e-8 * max(1.0, abs(S).sum(axis=1).max())
        w, v = spla.eigsh(S, k=k, sigma=shift, which="LM", tol=1e-12)
        o = np.argsort(w)
        w, v = w[o], v[:, o]
    # fix the sign convention: largest-magnitude entry positive
    piv = np.argmax(np.abs(v), axis=0)
    v = v * np.sign(v[piv, np.arange(v.shape[1])])[None, :]
    phi = v * s[:, None]
    w = np.maximum(w, 0.0) if k == n else w
    gram_err, res = _check(w, phi, K, m, None)
    scale = max(1.0, float(np.abs(w).max()) if len(w) else 1.0)
    if gram_err > GRAM_TOL or res > RESIDUAL_RTOL * scale:
        raise SpectralError(f"eigensolver inaccurate: gram error {gram_err:.3g}, "
                            f"residual {res:.3g} (scale {scale:.3g})")
    return SpectralData(w, phi, m.copy(), part.interior.copy(), k == n, gram_err, res)


class HeatKernel:
    """Heat kernel of a part evaluated by eigen-expansion.

    ``p(t, x, y)`` is a density with respect to the vertex measure. Indices are
    positions within the part interior.
    """

    def __init__(self, spec: SpectralData):
        self.spec = spec

    @property
    def interior(self) -> np.ndarray:
        return self.spec.interior

    @property
    def measure(self) -> np.ndarray:
        return self.spec.measure

    def truncation_bound(self, t: float) -> float:
        """Bound on the omitted tail ``exp(-lambda_k t) * (N - k)`` (0 when complete)."""
        if self.spec.complete:
            return 0.0
        return math.exp(-self.spec.values[-1] * t) * (self.spec.size - self.spec.count)

    def matrix(self, t: float, symmetrize: bool = True) -> np.ndarray:
        """``p(t, ., .)`` on the interior, exactly symmetric unless ``symmetrize=False``."""
        if not t > 0:
            raise ValueError("t must be positive")
        e = np.exp(-t * self.spec.values)
        p = (self.spec.vectors * e[None, :]) @ self.spec.vectors.T
        return 0.5 * (p + p.T) if symmetrize else p

    def rows(self, t: float, x) -> np.ndarray:
        """``p(t, x, .)`` for the interior positions ``x``."""
        if not t > 0:
            raise ValueError("t must be positive")
        x = np.atleast_1d(x)
        e = np.exp(-t * self.spec.values)
        return (self.spec.vectors[x] * e[None, :]) @ self.spec.vectors.T

    def diagonal(self, ts, x: int) -> np.ndarray:
        """``p(t, x, x)`` over the times ``ts``."""
        ts = np.asarray(ts, dtype=float)
        phi2 = self.spec.vectors[x] ** 2
        return np.exp(-np.outer(ts, self.spec.values)) @ phi2


@dataclass(frozen=True)
class SemigroupChecks:
    """Worst defects of the exact semigroup identities over a set of times.

    ``symmetry`` is measured before symmetrization; ``chapman_kolmogorov`` is
    relative to the largest kernel value; ``conservation`` is ``nan`` unless
    the part is the whole space without killing.
    """

    symmetry: float
    chapman_kolmogorov: float
    contraction_l2: float
    contraction_sup: float
    negativity: float
    mass_excess: float
    conservation: float

    def passed(self, sym_tol: float = 1e-12, ck_tol: float = 1e-8, slack: float = 1e-10) -> bool:
        ok = (self.symmetry <= sym_tol and self.chapman_kolmogorov <= ck_tol
              and self.contraction_l2 <= slack and self.contraction_sup <= slack
              and self.negativity <= slack and self.mass_excess <= slack)
        return bool(ok and (math.isnan(self.conservation) or self.conservation <= slack))

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def semigroup_identities(spec: SpectralData, times, conservative: bool = False,
                         seed: int = 0, probes: int = 8) -> SemigroupChecks:
    """Check symmetry, Chapman-Kolmogorov, contraction and Markov bounds.

    Chapman-Kolmogorov is checked for every pair of ``times``. Contraction is
    checked in ``L^2(m)`` and sup norm on ``probes`` random functions; Markov
    bounds are ``p >= 0`` and ``int p(t, x, .) dm <= 1``, relative slack for the
    first. All defects are reported as nonnegative excesses.
    """
    if not spec.complete:
        raise ValueError("identity checks need a complete spectrum")
    hk = HeatKernel(spec)
    m = spec.measure
    times = [float(t) for t in times]
    mats = {t: hk.matrix(t, symmetrize=False) for t in times}
    sym = max(float(np.abs(p - p.T).max()) for p in mats.values())
    ps = {t: 0.5 * (p + p.T) for t, p in mats.items()}
    ck = 0.0
    for i, s_ in enumerate(times):
        for t in times[i:]:
            direct = hk.matrix(s_ + t)
            ck = max(ck, float(np.abs(compose(ps[s_], ps[t], m) - direct).max())
                     / float(np.abs(direct).max()))
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((spec.size, probes))
    l2 = lambda u: np.sqrt(np.sum(m[:, None] * u * u, axis=0))
    c2 = csup = neg = excess = 0.0
    cons = math.nan
    for t, p in ps.items():
        pf = (p * m[None, :]) @ f
        c2 = max(c2, float(np.max(l2(pf) / l2(f))) - 1.0)
        csup = max(csup, float(np.max(np.abs(pf).max(axis=0) / np.abs(f).max(axis=0))) - 1.0)
        neg = max(neg, float(-p.min() / np.abs(p).max()))
        mass = p @ m
        excess = max(excess, float(mass.max()) - 1.0)
        if conservative:
            cons = max(0.0 if math.isnan(cons) else cons, float(np.abs(mass - 1.0).max()))
    return SemigroupChecks(sym, ck, max(c2, 0.0), max(csup, 0.0), max(neg, 0.0),
                           max(excess, 0.0), cons)


def heat_diagonal_krylov(form: GraphDirichletForm, x: int, ts) -> np.ndarray:
    """``p(t, x, x)`` from ``exp(-t S)`` applied to a unit vector, ``S = M^-1/2 K M^-1/2``.

    Needs no eigenpairs, so it serves graphs above the dense limit.
    """
    m = form.measure
    s = 1.0 / np.sqrt(m)
    S = form.energy_matrix().multiply(s[:, None]).multiply(s[None, :]).tocsc()
    e = np.zeros(form.size)
    e[x] = 1.0
    return np.array([spla.expm_multiply(-float(t) * S, e)[x] / m[x] for t in ts])


def heat_kernel(spec: SpectralData, t: float) -> np.ndarray:
    """Heat kernel matrix ``p(t, x, y)`` on the part interior."""
    return HeatKernel(spec).matrix(t)


def semigroup_apply(spec: SpectralData, t: float, f) -> np.ndarray:
    """``P_t f = sum_j exp(-lambda_j t) <f, phi_j>_m phi_j``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    f = np.asarray(f, dtype=float)
    coef = spec.vectors.T @ (spec.measure * f)
    return spec.vectors @ (np.exp(-t * spec.values) * coef)


def compose(p1: np.ndarray, p2: np.ndarray, measure: np.ndarray) -> np.ndarray:
    """``(p1 * p2)(x, y) = sum_z p1(x, z) p2(z, y) m(z)``."""
    return (p1 * measure[None, :]) @ p2


def extend_by_zero(values: np.ndarray, interior: np.ndarray, size: int) -> np.ndarray:
    """Embed a vector or kernel on ``interior`` into the whole space."""
    if values.ndim == 1:
        out = np.zeros(size)
        out[interior] = values
        return out
    out = np.zeros((size, size))
    out[np.ix_(interior, interior)] = values
    return out


@dataclass(frozen=True)
class KernelFamily:
    """Dirichlet kernels on nested balls and their successive gaps."""

    radii: np.ndarray
    kernels: list
    spectra: list
    gaps: np.ndarray
    monotonicity_violation: float
    eigenvalue_violation: float

    @property
    def limit(self) -> np.ndarray:
        return self.kernels[-1]


class MonotonicityError(RuntimeError):
    """Dirichlet kernels on nested balls failed to increase."""


def kernel_limit_in_R(form: GraphDirichletForm, space: MetricMeasureSpace, p: int,
                      radii, t: float, tol: float = 1e-12) -> KernelFamily:
    """Dirichlet kernels on ``B(p, R)`` for ascending ``R``.

    Kernels are zero-extended to the whole space. Raises
    :class:`MonotonicityError` when a larger ball gives a smaller kernel entry by
    more than ``tol``.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) < 0):
        raise ValueError("radii must be ascending")
    kernels, spectra = [], []
    for R in radii:
        part = assemble_part(form, space, p, R)
        sp = spectrum(part)
        spectra.append(sp)
        kernels.append(extend_by_zero(heat_kernel(sp, t), part.interior, form.size))
    viol, evviol, gaps = 0.0, 0.0, []
    for a, b, sa, sb in zip(kernels, kernels[1:], spectra, spectra[1:]):
        viol = max(viol, float((a - b).max()))
        j = min(sa.count, sb.count)
        evviol = max(evviol, float((sb.values[:j] - sa.values[:j]).max()))
        gaps.append(float(np.abs(b - a).max()))
    if viol > tol:
        raise MonotonicityError(f"kernel decreased by {viol:.3g} on a larger ball")
    return KernelFamily(radii, kernels, spectra, np.array(gaps), viol, evviol)


@dataclass(frozen=True)
class ConservativenessFit:
    """Fit of ``defect ~ c * exp(-gamma * (Psi(R)/t)**exponent)``."""

    c: float
    gamma: float
    exponent: float
    rms: float


def conservativeness_defect(kernel: np.ndarray, measure: np.ndarray, full: bool = False,
                            tol: float = 1e-10) -> np.ndarray:
    """Mass defect ``1 - sum_y p(t, x, y) m(y)`` per point.

    With ``full=True`` the kernel belongs to the whole (conservative) graph and
    the defect must vanish to ``tol``. A defect below ``-tol`` always fails.
    """
    d = 1.0 - kernel @ measure
    if d.min() < -tol:
        raise ValueError(f"negative mass defect {d.min():.3g}: positivity breach")
    if full and np.abs(d).max() > tol:
        raise ValueError(f"full-space defect {np.abs(d).max():.3g} exceeds {tol:g}")
    return d


def fit_defect_tail(defects, psi_R: float, ts, exponents=None) -> ConservativenessFit:
    """Least-squares fit of ``log defect = log c - gamma (Psi(R)/t)**q``.

    ``q`` is scanned on a grid; ``log c`` and ``gamma`` come from a linear
    least-squares solve at each ``q``.
    """
    defects = np.asarray(defects, dtype=float)
    ts = np.asarray(ts, dtype=float)
    ok = defects > 0
    if ok.sum() < 3:
        raise ValueError("need at least three positive defects")
    y = np.log(defects[ok])
    u = psi_R / ts[ok]
    grid = np.linspace(0.05, 2.0, 391) if exponents is None else np.asarray(exponents)
    best = None
    for q in grid:
        A = np.stack([np.ones_like(u), -u ** q], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        rms = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
        if best is None or rms < best[0]:
            best = (rms, float(np.exp(coef[0])), float(coef[1]), float(q))
    return ConservativenessFit(best[1], best[2], best[3], best[0])


@dataclass(frozen=True)
class CutoffResult:
    energy: float
    ratio: float | None
    cutoff: np.ndarray


def cutoff_capacity(form: GraphDirichletForm, space: MetricMeasureSpace, x: int, r: float,
                    kappa: float, V=None, Psi=None) -> CutoffResult:
    """Energy of the tent cutoff ``clamp((r - d(x,.)) / ((1-kappa) r), 0, 1)``.

    With ``V`` and ``Psi`` the ratio ``E(phi) Psi(r) / V(r)`` is reported too.
    """
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    d = space.dist[x]
    if not np.any(d < r):
        raise ValueError("empty ball")
    phi = np.clip((r - d) / ((1.0 - kappa) * r), 0.0, 1.0)
    e = form.energy(phi)
    ratio = None if V is None or Psi is None else float(e * Psi(r) / V(r))
    return CutoffResult(e, ratio, phi)
