"""Volatility bands, mean bands and spatial-temporal grids."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GParams:
    """Volatility band ``[sigma_lo, sigma_hi]`` defining the generator

    ``G(a) = 0.5 * (sigma_hi**2 * a^+ - sigma_lo**2 * a^-)``.
    """

    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        lo, hi = float(self.sigma_lo), float(self.sigma_hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("volatility band must be finite")
        if lo < 0 or hi <= 0 or lo > hi:
            raise ValueError(f"need 0 <= sigma_lo <= sigma_hi, sigma_hi > 0; got [{lo}, {hi}]")
        object.__setattr__(self, "sigma_lo", lo)
        object.__setattr__(self, "sigma_hi", hi)

    @property
    def var_lo(self) -> float:
        return self.sigma_lo**2

    @property
    def var_hi(self) -> float:
        return self.sigma_hi**2

    def G(self, alpha):
        """Evaluate the generator; works elementwise on arrays."""
        a = np.asarray(alpha, dtype=float)
        out = 0.5 * np.where(a > 0, self.var_hi * a, self.var_lo * a)
        return float(out) if out.ndim == 0 else out

    def contains(self, other: "GParams") -> bool:
        """True when ``other``'s band lies inside this one (so G_self >= G_other)."""
        return self.sigma_lo <= other.sigma_lo and self.sigma_hi >= other.sigma_hi

    def mean_params(self) -> "MeanParams":
        """Band of the quadratic variation rate, ``[sigma_lo^2, sigma_hi^2]``."""
        return MeanParams(self.var_lo, self.var_hi)


@dataclass(frozen=True)
class MeanParams:
    """Mean-uncertainty band ``[mu_lo, mu_hi]`` with ``G(a) = 0.5*(mu_hi a^+ - mu_lo a^-)``."""

    mu_lo: float
    mu_hi: float

    def __post_init__(self):
        lo, hi = float(self.mu_lo), float(self.mu_hi)
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"need finite mu_lo <= mu_hi; got [{lo}, {hi}]")
        object.__setattr__(self, "mu_lo", lo)
        object.__setattr__(self, "mu_hi", hi)

    def G(self, a):
        a = np.asarray(a, dtype=float)
        out = 0.5 * np.where(a > 0, self.mu_hi * a, self.mu_lo * a)
        return float(out) if out.ndim == 0 else out

    @property
    def speed(self) -> float:
        return max(abs(self.mu_lo), abs(self.mu_hi))


@dataclass(frozen=True)
class GridSpec:
    """Space-time grid.

    ``nt == 0`` asks the solver to choose the step count from its CFL limit.
    ``spacing="log"`` places nodes geometrically (requires ``x_min > 0``),
    which suits coefficients that scale like ``sigma(x) = x``.
    """

    x_min: float
    x_max: float
    nx: int
    T: float
    nt: int = 0
    spacing: str = "uniform"

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be < x_max")
        if int(self.nx) < 3:
            raise ValueError("nx must be >= 3")
        if not self.T > 0:
            raise ValueError("T must be > 0")
        if int(self.nt) < 0:
            raise ValueError("nt must be >= 0")
        if self.spacing not in ("uniform", "log"):
            raise ValueError(f"unknown spacing {self.spacing!r}")
        if self.spacing == "log" and self.x_min <= 0:
            raise ValueError("log spacing needs x_min > 0")

    @classmethod
    def centered(cls, g: GParams, T: float, nx: int = 801, center: float = 0.0,
                 width: float = 8.0, nt: int = 0) -> "GridSpec":
        """Domain ``center +- width * sigma_hi * sqrt(T)``."""
        half = width * g.sigma_hi * math.sqrt(T)
        return cls(center - half, center + half, nx, T, nt)

    @classmethod
    def lognormal(cls, x0: float, sigma_hi: float, T: float, nx: int = 801,
                  width: float = 8.0, nt: int = 0) -> "GridSpec":
        """Geometric grid ``x0 * exp(+- width * sigma_hi * sqrt(T))``."""
        half = width * sigma_hi * math.sqrt(T)
        return cls(x0 * math.exp(-half), x0 * math.exp(half), nx, T, nt, "log")

    def nodes(self) -> np.ndarray:
        if self.spacing == "log":
            x = np.geomspace(self.x_min, self.x_max, self.nx)
        else:
            x = np.linspace(self.x_min, self.x_max, self.nx)
        return x

    @property
    def dx(self) -> float:
        """Smallest node spacing."""
        return float(np.min(np.diff(self.nodes())))
