"""Run configuration: one flat key-value file, validated before any compute."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace

#: Environment variable that may override the output directory (the only one read).
OUT_ENV = "HKELAB_OUT"


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run depends on.

    Attributes
    ----------
    family : {"gasket", "carpet"}
    levels : tuple of int
        Increasing levels; the last one is the limit proxy.
    window : float
        Carpet window side in rescaled units.
    subdivision : int
        Gasket cable subdivision.
    alpha : float or "model"
    beta : float, "model" or "fit"
        ``"fit"`` estimates the walk exponent from the on-diagonal decay of the
        finest unscaled level.
    radius : float
        Ball radius ``R`` for parts, isometry balls and convergence curves.
    neighborhood : bool
        Represent each member by ``B(p, R)`` only (exact for ball quantities).
    times : tuple of float
        Times for kernel and convergence curves.
    ondiag_points : int
        Number of times in the on-diagonal fit.
    hke_times : int
        Number of bulk times in the bound fits.
    hke_budget : float
        Pass threshold for the fitted ``C1``.
    hke_delta : float
        Near-diagonal factor of the lower bound.
    kernel_limit : int
        Largest vertex count for full-space kernel checks.
    cube_delta : float
    cube_depth : int
    modes : int
        Simple eigenvalues tracked in the convergence curves.
    seed : int
    out : str
        Output directory (``HKELAB_OUT`` overrides it).
    """

    family: str = "gasket"
    levels: tuple = (1, 2, 3)
    window: float = 1.0
    subdivision: int = 1
    alpha: object = "model"
    beta: object = "model"
    radius: float = 1.0
    neighborhood: bool = False
    times: tuple = (0.1, 0.5)
    ondiag_points: int = 15
    hke_times: int = 8
    hke_budget: float = 50.0
    hke_delta: float = 0.5
    kernel_limit: int = 1500
    cube_delta: float = 0.5
    cube_depth: int = 2
    modes: int = 5
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        if self.family not in ("gasket", "carpet"):
            raise ConfigError(f"family must be 'gasket' or 'carpet', not {self.family!r}")
        lv = tuple(self.levels)
        if len(lv) < 2 or any(not isinstance(n, int) or isinstance(n, bool) or n < 0 for n in lv) \
                or any(b <= a for a, b in zip(lv[:-1], lv[1:])):
            raise ConfigError("levels must be at least two increasing nonnegative integers")
        object.__setattr__(self, "levels", lv)
        times = tuple(float(t) for t in self.times)
        if not times or any(not t > 0 for t in times):
            raise ConfigError("times must be positive")
        object.__setattr__(self, "times", times)
        if self.alpha != "model" and not _positive(self.alpha):
            raise ConfigError("alpha must be 'model' or a positive number")
        if self.beta not in ("model", "fit") and not (_positive(self.beta) and self.beta > 1):
            raise ConfigError("beta must be 'model', 'fit' or a number > 1")
        if self.family == "carpet" and self.beta == "model":
            raise ConfigError("the carpet has no model walk exponent; use 'fit' or a number")
        for name in ("window", "radius", "hke_budget", "hke_delta"):
            if not _positive(getattr(self, name)):
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.cube_delta < 1:
            raise ConfigError("cube_delta must lie in (0, 1)")
        for name, lo in (("subdivision", 1), ("ondiag_points", 5), ("hke_times", 2),
                         ("kernel_limit", 2), ("cube_depth", 1), ("modes", 1), ("seed", 0)):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}")
        if not isinstance(self.neighborhood, bool):
            raise ConfigError("neighborhood must be true or false")
        if not isinstance(self.out, str) or not self.out:
            raise ConfigError("out must be a nonempty path")

    def canonical(self) -> dict:
        """Config without the output location, in a stable JSON-ready form."""
        d = asdict(self)
        d.pop("out")
        d["levels"] = list(self.levels)
        d["times"] = list(self.times)
        return d

    def digest(self) -> str:
        """Hash of the canonical config; names the run directory."""
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def _positive(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0


KEYS = tuple(f.name for f in fields(RunConfig))


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(text: str) -> RunConfig:
    """Parse a JSON object or ``key = value`` lines (``#`` starts a comment).

    Values in the line format are read as JSON when possible, otherwise as
    bare strings. Unknown and repeated keys are rejected.
    """
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            pairs = json.loads(stripped, object_pairs_hook=list)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON config: {e}") from None
    else:
        pairs = []
        for no, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {no}: expected 'key = value'")
            k, v = line.split("=", 1)
            pairs.append((k.strip(), _value(v.strip())))
    data = {}
    for k, v in pairs:
        if k not in KEYS:
            raise ConfigError(f"unknown key {k!r}")
        if k in data:
            raise ConfigError(f"repeated key {k!r}")
        data[k] = tuple(v) if isinstance(v, list) else v
    try:
        return RunConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
