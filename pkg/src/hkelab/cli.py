"""Command-line front door.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error,
3 internal error.
"""
from __future__ import annotations

import argparse
import filecmp
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .pipeline import STAGES, Pipeline, run_pipeline

EXIT_PASS, EXIT_CHECK, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3

#: Stages each subcommand needs, in pipeline order.
COMMAND_STAGES = {
    "generate": ("generate",),
    "spectrum": ("generate", "geodesic", "spectra"),
    "kernel": ("generate", "geodesic", "kernels"),
    "hke-check": ("generate", "geodesic", "kernels", "hke"),
    "align": ("generate", "geodesic", "isometries"),
    "converge": ("generate", "geodesic", "isometries", "convergence"),
    "report": STAGES,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hkelab", description="Heat kernel and convergence lab for fractal graphs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in (*COMMAND_STAGES, "verify"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="key-value or JSON config file")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int, help="seed (nonnegative)")
        s.add_argument("--level", type=int, action="append",
                       help="restrict to these levels (repeatable; at least two for sequences)")
        s.add_argument("--stage", choices=STAGES, help="run the pipeline up to this stage")
        if name == "verify":
            s.add_argument("run_dir", nargs="?", help="run directory to verify")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {"seed": args.seed}
    if args.level:
        levels = sorted(set(args.level))
        if args.command not in ("generate", "spectrum", "kernel") and len(levels) < 2:
            raise ConfigError("--level must be given at least twice for sequence commands")
        if len(levels) == 1:
            lv = levels[0]
            levels = [lv, lv + 1]
        over["levels"] = tuple(levels)
    try:
        return cfg.with_overrides(**over)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def _stages(args) -> tuple:
    stages = COMMAND_STAGES[args.command]
    if args.stage:
        stages = STAGES[: STAGES.index(args.stage) + 1]
    return stages


def verify_run(run_dir: Path, out: str | None = None) -> tuple[bool, list]:
    """Recompute a run from its stored config and compare every report byte for byte.

    Isometry defects are also recomputed directly from the stored map tables.
    """
    reports = run_dir / "reports"
    cfg_path = reports / "config.json"
    if not cfg_path.exists():
        raise ConfigError(f"{run_dir} has no reports/config.json")
    cfg = RunConfig(**{k: tuple(v) if isinstance(v, list) else v
                       for k, v in json.loads(cfg_path.read_text()).items()})
    problems = []
    stored = sorted(p.relative_to(reports) for p in reports.rglob("*") if p.is_file())
    stages = [s for s in STAGES if any(str(p).startswith(s + "/") for p in stored)] or ["generate"]
    if any(str(p).startswith("plots/") for p in stored) and "kernels" not in stages:
        stages.append("kernels")
    stages = [s for s in STAGES if s in stages]
    with tempfile.TemporaryDirectory() as tmp:
        pipe = Pipeline(cfg, out or tmp)
        pipe.run(stages)
        fresh = pipe.reports
        for rel in stored:
            other = fresh / rel
            if not other.exists():
                problems.append(f"{rel}: not reproduced")
            elif not filecmp.cmp(reports / rel, other, shallow=False):
                problems.append(f"{rel}: differs on recomputation")
        if pipe.seq is not None:
            problems += _verify_isometries(reports, pipe)
    problems += _verify_witnesses(reports)
    return not problems, problems


def _verify_witnesses(reports: Path) -> list:
    """Each stored bound witness must reproduce its fitted constant."""
    from .hke import witness_constant
    problems = []
    for path in sorted((reports / "hke").glob("level_*.json")):
        rep = json.loads(path.read_text())
        target = {"upper": rep["residuals"]["C_upper"], "lower": rep["residuals"]["C_lower"]}
        for w in rep["witnesses"]:
            got = witness_constant(w, rep["c_2"])
            if not np.isclose(got, target[w["bound"]], rtol=1e-12, atol=0.0):
                problems.append(f"{path.name}: {w['bound']} witness gives {got!r}, "
                                f"stored {target[w['bound']]!r}")
    return problems


def _verify_isometries(reports: Path, pipe: Pipeline) -> list:
    from .cubes import measure_isometry, quasi_inverse
    problems = []
    lv = [m.level for m in pipe.members]
    spaces = dict(zip(lv, [m.space for m in pipe.members]))
    for csv in sorted((reports / "isometries").glob("level_*_to_*.csv")):
        a, b = (int(x) for x in csv.stem[len("level_"):].split("_to_"))
        src, tgt = spaces[a], spaces[b]
        pos = {str(v): i for i, v in enumerate(tgt.ids)}
        rows = csv.read_text().splitlines()[1:]
        f = np.array([pos[r.split(",")[1]] for r in rows], dtype=np.int64)
        header = json.loads(csv.with_suffix(".json").read_text())
        iso = measure_isometry(src, tgt, f, quasi_inverse(src, tgt, f))
        if iso.distortion_forward != header["distortion_forward"]:
            problems.append(f"{csv.name}: forward distortion not reproduced from the table")
        if iso.net_radius != header["net_radius"]:
            problems.append(f"{csv.name}: net radius not reproduced from the table")
    return problems


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    try:
        if args.command == "verify":
            if not args.run_dir:
                raise ConfigError("verify needs a run directory")
            ok, problems = verify_run(Path(args.run_dir), args.out)
            for p in problems:
                print(p)
            print("verify: " + ("ok" if ok else f"{len(problems)} problem(s)"))
            return EXIT_PASS if ok else EXIT_CHECK
        cfg = _config(args)
        manifest = run_pipeline(cfg, args.out, _stages(args))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - the exit code contract covers every failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    print(f"run directory: {manifest.run_dir}")
    for name, st in manifest.stages.items():
        line = f"  {name:12s} {st['status']}"
        if "error" in st:
            line += f"  {st['error']}"
        print(line)
    failed = [k for k, v in manifest.checks.items() if not v]
    for k in failed:
        print(f"  check failed: {k}")
    if manifest.failed_stage:
        return EXIT_INTERNAL
    return EXIT_PASS if manifest.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
