"""End-to-end pipeline: generate, geodesic, isometries, spectra, kernels, hke, convergence.

Deterministic artifacts go to ``<out>/run-<config hash>/reports``. The manifest
with wall-clock times sits next to that directory, so two runs of one config
produce byte-identical report trees.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import OUT_ENV, RunConfig
from .convergence import (GRADED_GROUPS, SequenceMember, SpaceSequence, convergence_report,
                          limit_measure_estimate)
from .cubes import christ_cubes, verify_cubes
from .hke import (KernelSamples, bulk_times, hke_bounds_check, ondiag_fit, weyl_check)
from .metric import triangle_check, volume_regularity
from .models import (CARPET_ALPHA, GASKET_ALPHA, GASKET_BETA, FractalModelSpec, format_coords,
                     format_graph)
from .profiles import carpet_volume, gasket_volume, two_regime_scale
from .spectral import (DENSE_LIMIT, GraphDirichletForm, HeatKernel, assemble_part, full_part,
                       heat_diagonal_krylov, semigroup_identities, spectrum)

STAGES = ("generate", "geodesic", "isometries", "spectra", "kernels", "hke", "convergence")
#: Times of the exact semigroup identity checks.
IDENTITY_TIMES = (0.05, 0.1, 0.3)
#: Fixed-point iterations of the walk-exponent fit.
BETA_ITERATIONS = 4
#: Dense eigensolver limit for the ball parts compared in convergence curves.
CONVERGENCE_DENSE_LIMIT = 8000
#: Allowed factor between fitted C1 of consecutive levels.
HKE_STABILITY = 2.0


class StageError(RuntimeError):
    """A stage failed; carries the stage name and the hash of its inputs."""

    def __init__(self, stage: str, inputs: str, diagnostics: str):
        super().__init__(f"stage {stage!r} failed (inputs {inputs}): {diagnostics}")
        self.stage, self.inputs, self.diagnostics = stage, inputs, diagnostics


class DeterminismError(RuntimeError):
    """A report file would be rewritten with different bytes."""


class UnknownCurveError(KeyError):
    """Requested plot curve does not exist in the report."""


@dataclass
class RunManifest:
    """Config hash, per-stage status and timing, and every written artifact."""

    config_hash: str
    run_dir: str
    stages: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and all(
            s["status"] == "done" for s in self.stages.values())

    @property
    def failed_stage(self) -> str | None:
        return next((k for k, s in self.stages.items() if s["status"] == "failed"), None)

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "stages": self.stages,
                "artifacts": sorted(self.artifacts), "checks": self.checks,
                "passed": self.passed, "version": __version__}


def dumps(obj) -> str:
    """Canonical JSON text used for every report."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit_plot_data(report: dict, name: str) -> str:
    """Two-column CSV with a header row for one curve of a report.

    ``report["plots"][name]`` holds ``{"header": [a, b], "rows": [[x, y], ...]}``;
    a convergence report's ``curves[name]`` is emitted as ``n,value`` rows in
    level order.
    """
    if name in report.get("plots", {}):
        plot = report["plots"][name]
        header, rows = plot["header"], plot["rows"]
    elif name in report.get("curves", {}):
        header = ["n", "value"]
        rows = list(zip(report["levels"], report["curves"][name]))
    else:
        raise UnknownCurveError(name)
    lines = [",".join(header)] + [f"{a!r},{b!r}" if isinstance(a, float) else f"{a},{b!r}"
                                  for a, b in rows]
    return "\n".join(lines) + "\n"


def _curve_file(name: str) -> str:
    return name.replace("/", "__").replace("=", "") + ".csv"


# ----------------------------------------------------------------------------
# model helpers


def model_alpha(cfg: RunConfig) -> float:
    if cfg.alpha != "model":
        return float(cfg.alpha)
    return GASKET_ALPHA if cfg.family == "gasket" else CARPET_ALPHA


def model_spec(cfg: RunConfig, level: int, beta: float | None) -> FractalModelSpec:
    alpha = model_alpha(cfg)
    if cfg.family == "gasket":
        return FractalModelSpec("gasket_cable", level, 2, cfg.subdivision, alpha, beta)
    return FractalModelSpec("pre_carpet", level, 3, 1, alpha, beta, cfg.window)


def volume_profile(cfg: RunConfig, level: int):
    l = 2 if cfg.family == "gasket" else 3
    base = gasket_volume(model_alpha(cfg)) if cfg.family == "gasket" else carpet_volume(model_alpha(cfg))
    return base.rescaled(l, model_alpha(cfg), level)


def scale_function(cfg: RunConfig, level: int, beta: float):
    l = 2 if cfg.family == "gasket" else 3
    return two_regime_scale(beta).rescaled(l, beta, level)


def fit_walk_exponent(cfg: RunConfig, points: int | None = None) -> dict:
    """Walk exponent from the on-diagonal decay of the finest unscaled level.

    The slope of ``log p_t(p, p)`` against ``log t`` over the bulk window
    ``[Psi(2), Psi(L/4)]`` (unit mesh, window side ``L``) is ``-alpha/beta``.
    The window depends on ``beta``, so the fit is iterated from ``beta = 2``.
    """
    alpha = model_alpha(cfg)
    spec = model_spec(cfg, cfg.levels[-1], None)
    g = spec.base_graph()
    form = GraphDirichletForm.from_graph(g)
    side = float(np.ptp(g.coords[:, 0])) if g.coords is not None else float(g.n_vertices)
    points = cfg.ondiag_points if points is None else points
    beta, history = 2.0, []
    for _ in range(BETA_ITERATIONS):
        ts = bulk_times(two_regime_scale(beta), 1.0, side, points)
        if g.n_vertices <= DENSE_LIMIT:
            vals = HeatKernel(spectrum(full_part(form))).diagonal(ts, 0)
        else:
            vals = heat_diagonal_krylov(form, 0, ts)
        fit = ondiag_fit(ts, vals)
        beta = -alpha / fit.slope
        history.append({"slope": fit.slope, "beta": beta})
    return {"beta": beta, "alpha": alpha, "level": cfg.levels[-1], "iterations": history}


# ----------------------------------------------------------------------------
# pipeline


class Pipeline:
    """Stateful executor of the stages for one config."""

    def __init__(self, cfg: RunConfig, out: str | None = None):
        self.cfg = cfg
        base = Path(out or os.environ.get(OUT_ENV) or cfg.out)
        self.run_dir = base / f"run-{cfg.digest()}"
        self.reports = self.run_dir / "reports"
        self.manifest = RunManifest(cfg.digest(), str(self.run_dir))
        self.beta: float | None = None
        self.graphs: dict = {}
        self.members: list = []
        self.seq: SpaceSequence | None = None
        self.spectra: dict = {}
        self.full_kernels: dict = {}

    # -- io ------------------------------------------------------------------
    def write(self, rel: str, text: str) -> None:
        path = self.reports / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        if path.exists():
            if path.read_bytes() != data:
                raise DeterminismError(f"{rel} exists with different content")
        else:
            path.write_bytes(data)
        if rel not in self.manifest.artifacts:
            self.manifest.artifacts.append(rel)

    def _inputs_hash(self, stage: str) -> str:
        h = hashlib.sha256((self.cfg.digest() + stage).encode())
        for rel in sorted(self.manifest.artifacts):
            h.update((self.reports / rel).read_bytes())
        return h.hexdigest()[:16]

    # -- driver ----------------------------------------------------------------
    def run(self, stages=STAGES) -> RunManifest:
        stages = list(stages)
        self.reports.mkdir(parents=True, exist_ok=True)
        self.write("config.json", dumps(self.cfg.canonical()))
        for stage in STAGES:
            if stage not in stages:
                continue
            t0 = time.perf_counter()
            try:
                getattr(self, f"stage_{stage}")()
            except (DeterminismError, KeyboardInterrupt):
                raise
            except Exception as e:  # recorded with diagnostics, later stages skipped
                self.manifest.stages[stage] = {"status": "failed", "seconds": time.perf_counter() - t0,
                                               "error": f"{type(e).__name__}: {e}",
                                               "inputs": self._inputs_hash(stage)}
                self.write(f"FAILED-{stage}", self.manifest.stages[stage]["error"] + "\n")
                for rest in stages[stages.index(stage) + 1:]:
                    self.manifest.stages[rest] = {"status": "skipped", "seconds": 0.0}
                break
            self.manifest.stages[stage] = {"status": "done", "seconds": time.perf_counter() - t0}
        (self.run_dir / "manifest.json").write_text(dumps(self.manifest.to_dict()))
        return self.manifest

    def require(self, stage: str) -> None:
        if stage not in self.manifest.stages:
            getattr(self, f"stage_{stage}")()
            self.manifest.stages[stage] = {"status": "done", "seconds": 0.0}

    # -- stages ----------------------------------------------------------------
    def stage_generate(self) -> None:
        cfg = self.cfg
        if cfg.beta == "fit":
            fit = fit_walk_exponent(cfg)
            self.beta = fit["beta"]
            self.write("generate/beta_fit.json", dumps(fit))
        elif cfg.beta == "model":
            self.beta = GASKET_BETA
        else:
            self.beta = float(cfg.beta)
        for n in cfg.levels:
            g = model_spec(cfg, n, self.beta).scaled_graph()
            self.graphs[n] = g
            self.write(f"generate/level_{n}.graph",
                       format_graph(g, f"{cfg.family} level {n} beta {self.beta!r}"))
            if g.coords is not None:
                self.write(f"generate/level_{n}_coords.csv", format_coords(g))

    def stage_geodesic(self) -> None:
        self.require("generate")
        cfg = self.cfg
        R = cfg.radius
        self.members = []
        for n in cfg.levels:
            m = SequenceMember.from_graph(n, self.graphs[n], scale_function(cfg, n, self.beta),
                                          volume_profile(cfg, n),
                                          neighborhood=R if cfg.neighborhood else None)
            self.members.append(m)
            sp = m.space
            excess, where = triangle_check(sp.dist, cfg.seed)
            radii = np.geomspace(m.mesh, max(R / 2, m.mesh), 6)
            centers = np.flatnonzero(sp.dist[sp.basepoint] < R / 2)
            reg = volume_regularity(sp, m.volume, radii, centers=centers)
            info = {"level": n, "size": sp.size, "basepoint": sp.ids[sp.basepoint],
                    "diameter": float(sp.dist.max()), "mesh": m.mesh,
                    "triangle_excess": excess, "triangle_witness": list(where),
                    "total_mass": sp.total_mass, "regularity": reg.to_dict()}
            if sp.size <= 2000:
                cd = christ_cubes(sp, cfg.cube_delta, cfg.cube_depth,
                                  scale=float(sp.dist.max()), seed=cfg.seed)
                chk = verify_cubes(sp, cd)
                info["cubes"] = {"a0": cd.a0, "a1": cd.a1, "delta": cd.delta, "scale": cd.scale,
                                 "counts": [len(c) for c in cd.cubes], "covers": chk.covers,
                                 "disjoint": chk.disjoint, "sandwich": chk.sandwich}
                self.manifest.checks[f"cubes/level_{n}"] = chk.ok
            self.write(f"geodesic/level_{n}.json", dumps(info))

    def stage_isometries(self) -> None:
        self.require("geodesic")
        cfg = self.cfg
        self.seq = SpaceSequence.build(self.members, cfg.radius, cfg.seed)
        lv = cfg.levels
        pairs = [(lv[i], lv[i + 1], iso, self.members[i], self.members[i + 1])
                 for i, iso in enumerate(self.seq.consecutive)]
        pairs += [(lv[i], lv[-1], iso, self.members[i], self.members[-1])
                  for i, iso in enumerate(self.seq.to_proxy[:-2])]
        eps = {}
        for a, b, iso, ma, mb in pairs:
            stem = f"isometries/level_{a}_to_{b}"
            write_isometry_text = _isometry_texts(iso, ma.space, mb.space)
            self.write(stem + ".csv", write_isometry_text[0])
            self.write(stem + ".json", write_isometry_text[1])
            eps[f"{a}->{b}"] = iso.eps
            self.manifest.checks[f"isometry/{a}->{b}/basepoint"] = iso.basepoint_preserved
        cons = [iso.eps for iso in self.seq.consecutive]
        self.write("isometries/summary.json", dumps({
            "eps": eps, "consecutive_eps": cons,
            "consecutive_ratios": [b / a if a > 0 else math.nan for a, b in zip(cons[:-1], cons[1:])],
            "plots": {"consecutive_eps": {"header": ["n", "eps"],
                                          "rows": [[n, e] for n, e in zip(lv[:-1], cons)]}}}))

    def stage_spectra(self) -> None:
        self.require("geodesic")
        cfg = self.cfg
        for m in self.members:
            part = assemble_part(m.form, m.space, m.space.basepoint, cfg.radius)
            spec = spectrum(part, None if part.size <= DENSE_LIMIT else min(part.size - 2, 200))
            self.spectra[m.level] = spec
            weyl = weyl_check(spec, m.psi, cfg.radius)
            self.write(f"spectra/level_{m.level}.csv",
                       "j,lambda\n" + "".join(f"{j + 1},{v!r}\n" for j, v in enumerate(spec.values)))
            self.write(f"spectra/level_{m.level}.json", dumps({
                "level": m.level, "interior": part.size, "count": spec.count,
                "complete": spec.complete, "gram_error": spec.gram_error,
                "residual": spec.residual, "weyl": weyl.to_dict()}))
            self.manifest.checks[f"weyl/level_{m.level}"] = bool(math.isfinite(weyl["C_weyl"]))

    def stage_kernels(self) -> None:
        self.require("geodesic")
        cfg = self.cfg
        for m in self.members:
            info = {"level": m.level, "size": m.space.size}
            ts = _bulk_or_none(m, cfg.ondiag_points)
            if m.space.size <= cfg.kernel_limit:
                spec = spectrum(full_part(m.form))
                self.full_kernels[m.level] = HeatKernel(spec)
                chk = semigroup_identities(spec, IDENTITY_TIMES,
                                           conservative=not m.form.killing.any(), seed=cfg.seed)
                info["identities"] = chk.to_dict()
                info["identities_pass"] = chk.passed()
                self.manifest.checks[f"identities/level_{m.level}"] = chk.passed()
            if ts is None:
                info["ondiag"] = {"skipped": "bulk regime is empty at this level"}
                self.write(f"kernels/level_{m.level}.json", dumps(info))
                continue
            if m.level in self.full_kernels:
                diag = self.full_kernels[m.level].diagonal(ts, m.space.basepoint)
            else:
                diag = heat_diagonal_krylov(m.form, m.space.basepoint, ts)
            fit = ondiag_fit(ts, diag)
            info["ondiag"] = {"slope": fit.slope, "intercept": fit.intercept}
            info["plots"] = {"ondiag": {"header": ["log_t", "log_p"],
                                        "rows": [[a, b] for a, b in zip(fit.log_t.tolist(),
                                                                        fit.log_p.tolist())]}}
            self.write(f"kernels/level_{m.level}.json", dumps(info))
            self.write(f"plots/ondiag_level_{m.level}.csv", emit_plot_data(info, "ondiag"))

    def stage_hke(self) -> None:
        self.require("kernels")
        cfg = self.cfg
        fits, c2 = {}, None
        anchor = self.members[0]
        for m in self.members:
            ts = _bulk_or_none(m, cfg.hke_times)
            if m.level not in self.full_kernels or ts is None:
                continue
            hk = self.full_kernels[m.level]
            if m.space.coords is not None and anchor.space.coords is not None:
                pts = sorted({nearest_vertex_space(m.space, c) for c in anchor.space.coords})
            else:
                pts = [m.space.basepoint]
            samples = KernelSamples(ts, np.asarray(pts), mesh=m.mesh)
            rep = hke_bounds_check(hk, m.space, m.volume, m.psi, samples, c2=c2,
                                   delta=cfg.hke_delta, budget=cfg.hke_budget)
            c2 = rep["c_2"] if c2 is None else c2
            fits[m.level] = rep
            self.write(f"hke/level_{m.level}.json", dumps(rep.to_dict()))
        levels = sorted(fits)
        C1 = [fits[n]["C_1"] for n in levels]
        ratios = [b / a for a, b in zip(C1[:-1], C1[1:])]
        stable = all(1 / HKE_STABILITY <= r <= HKE_STABILITY for r in ratios)
        self.write("hke/summary.json", dumps({
            "levels": levels, "C_1": C1, "c_2": c2, "ratios": ratios, "stable": stable,
            "fits_pass": [fits[n].passed for n in levels],
            "plots": {"C_1": {"header": ["n", "C_1"], "rows": [[n, c] for n, c in zip(levels, C1)]}}}))
        self.manifest.checks["hke/stable"] = stable
        self.manifest.checks["hke/fits"] = all(fits[n].passed for n in levels)

    def stage_convergence(self) -> None:
        self.require("isometries")
        cfg = self.cfg
        rep = convergence_report(self.seq, cfg.times, cfg.modes, dense_limit=CONVERGENCE_DENSE_LIMIT)
        d = rep.to_dict()
        lm = limit_measure_estimate(self.seq, cfg.radius,
                                    np.geomspace(self.seq.proxy.mesh, cfg.radius / 2, 6))
        d["limit_measure"] = {"regularity": lm.regularity.to_dict(), "total": float(lm.masses.sum())}
        self.write("convergence/report.json", dumps(d))
        for name in rep.curves:
            self.write(f"plots/{_curve_file(name)}", emit_plot_data(d, name))
        for g, ok in rep.group_verdicts().items():
            if g in GRADED_GROUPS:
                self.manifest.checks[f"convergence/{g}"] = ok


def _bulk_or_none(member, count: int):
    """Bulk times of a member, or None when its mesh leaves no bulk regime."""
    lo = member.psi(2.0 * member.mesh)
    hi = member.psi(float(member.space.dist.max()) / 4.0)
    if not lo < hi:
        return None
    return bulk_times(member.psi, member.mesh, float(member.space.dist.max()), count)


def nearest_vertex_space(space, point) -> int:
    d = np.sum((space.coords - np.asarray(point)[None, :]) ** 2, axis=1)
    return int(np.argmin(d))


def _isometry_texts(iso, source, target) -> tuple:
    rows = ["source_id,target_id"] + [f"{source.ids[i]},{target.ids[j]}"
                                      for i, j in enumerate(iso.forward)]
    return "\n".join(rows) + "\n", dumps(iso.header())


def run_pipeline(config: RunConfig, out: str | None = None, stages=STAGES) -> RunManifest:
    """Run ``stages`` (all by default) in dependency order and return the manifest."""
    return Pipeline(config, out).run(stages)
