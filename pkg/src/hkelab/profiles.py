"""Two-regime power laws used for volume growth and space-time scaling.

Both the volume profile ``V`` and the scale function ``Psi`` of a model are
continuous, increasing functions that behave like one power below a crossover
radius and like another above it::

    f(r) = a * (r / rc) ** small    for r <= rc
    f(r) = a * (r / rc) ** large    for r >  rc
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class PiecewisePower:
    """Continuous two-regime power law.

    Parameters
    ----------
    exponent_small : float
        Exponent below the crossover.
    exponent_large : float
        Exponent above the crossover.
    crossover : float
        Radius ``rc`` where the regimes meet.
    amplitude : float
        Value ``f(rc)``.
    constant : float
        Comparison constant (``C_v`` or ``C_0``) carried with the profile; it
        does not enter evaluation.
    """

    exponent_small: float
    exponent_large: float
    crossover: float = 1.0
    amplitude: float = 1.0
    constant: float = 1.0

    def __post_init__(self):
        if not (self.exponent_small > 0 and self.exponent_large > 0):
            raise ValueError("exponents must be positive")
        if not (self.crossover > 0 and self.amplitude > 0):
            raise ValueError("crossover and amplitude must be positive")
        if self.constant < 1:
            raise ValueError("comparison constant must be >= 1")

    @classmethod
    def power(cls, exponent: float, constant: float = 1.0):
        """Pure power ``r ** exponent``."""
        return cls(exponent, exponent, 1.0, 1.0, constant)

    @property
    def is_pure_power(self) -> bool:
        return self.exponent_small == self.exponent_large

    @property
    def lower_exponent(self) -> float:
        return min(self.exponent_small, self.exponent_large)

    @property
    def upper_exponent(self) -> float:
        return max(self.exponent_small, self.exponent_large)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        u = r / self.crossover
        with np.errstate(divide="ignore"):
            out = self.amplitude * np.where(u <= 1.0, u ** self.exponent_small,
                                            u ** self.exponent_large)
        return out[()] if out.ndim == 0 else out

    def inverse(self, t):
        """Exact inverse, piece by piece."""
        t = np.asarray(t, dtype=float)
        v = t / self.amplitude
        with np.errstate(divide="ignore"):
            u = np.where(v <= 1.0, v ** (1.0 / self.exponent_small),
                         v ** (1.0 / self.exponent_large))
        out = self.crossover * u
        return out[()] if out.ndim == 0 else out

    def rescaled(self, l: float, exponent: float, n: int):
        """Return ``r -> l**(-exponent*n) * f(l**n * r)``."""
        if n == 0:
            return self
        return replace(self, crossover=self.crossover * float(l) ** (-n),
                       amplitude=self.amplitude * float(l) ** (-exponent * n))

    def scaled(self, factor: float):
        """Return ``factor * f``."""
        return replace(self, amplitude=self.amplitude * factor)

    def ratio_bounds(self, r, R):
        """Sandwich ``C^-1 (R/r)^lower <= f(R)/f(r) <= C (R/r)^upper``.

        Returns the smallest constant making the sandwich hold at the given
        pairs (arrays broadcast together).
        """
        r = np.asarray(r, dtype=float)
        R = np.asarray(R, dtype=float)
        q = self(R) / self(r)
        lo = (R / r) ** self.lower_exponent
        hi = (R / r) ** self.upper_exponent
        return float(np.max(np.maximum(lo / q, q / hi)))

    def to_dict(self) -> dict:
        return {
            "exponent_small": self.exponent_small,
            "exponent_large": self.exponent_large,
            "crossover": self.crossover,
            "amplitude": self.amplitude,
            "constant": self.constant,
        }


class VolumeProfile(PiecewisePower):
    """Volume growth ``V(r)``; ``constant`` plays the role of ``C_v``."""

    @property
    def exponents(self) -> tuple[float, float]:
        return self.exponent_small, self.exponent_large


class ScaleFunction(PiecewisePower):
    """Space-time scale function ``Psi(r)``; ``constant`` plays the role of ``C_0``.

    Both exponents must exceed 1 so that the tail transform is finite.
    """

    def __post_init__(self):
        super().__post_init__()
        if self.lower_exponent <= 1:
            raise ValueError("scale function exponents must exceed 1")

    @property
    def beta(self) -> float:
        return self.lower_exponent

    @property
    def beta_prime(self) -> float:
        return self.upper_exponent


def carpet_volume(alpha: float = np.log(8) / np.log(3)) -> VolumeProfile:
    """``r**2`` below unit scale, ``r**alpha`` above."""
    return VolumeProfile(2.0, alpha)


def gasket_volume(alpha: float = np.log(3) / np.log(2)) -> VolumeProfile:
    """``r`` below unit scale, ``r**alpha`` above."""
    return VolumeProfile(1.0, alpha)


def two_regime_scale(beta: float) -> ScaleFunction:
    """``r**2`` below unit scale, ``r**beta`` above (diffusive then anomalous)."""
    return ScaleFunction(2.0, beta)
