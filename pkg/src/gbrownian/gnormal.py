"""G-normal and maximal (U-) distributions.

``gnormal_expect`` evaluates ``E[phi(sqrt(t) X)]`` for ``X ~ N(0; [s_lo^2, s_hi^2])``.
Convex payoffs reduce to a Gaussian integral at ``s_hi``, concave ones at
``s_lo``; anything else goes through the G-heat solver.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import roots_hermitenorm

from .params import GParams, GridSpec, MeanParams
from . import pde_engine


class ShapeHint(str, enum.Enum):
    CONVEX = "convex"
    CONCAVE = "concave"
    GENERAL = "general"


@dataclass(frozen=True)
class GNormalLaw:
    g: GParams
    t: float = 1.0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be > 0")


@dataclass(frozen=True)
class ULaw:
    """Maximal distribution on ``[mu_lo * t, mu_hi * t]``."""

    m: MeanParams
    t: float = 1.0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be > 0")

    @property
    def interval(self) -> tuple[float, float]:
        return self.m.mu_lo * self.t, self.m.mu_hi * self.t


def g_eval(alpha, g: GParams):
    """``G(alpha) = 0.5 * (s_hi^2 alpha^+ - s_lo^2 alpha^-)``."""
    return g.G(alpha)


def g_eval_diag(A: Sequence[float], bands: Sequence[GParams]) -> float:
    """G of a diagonal matrix under a diagonal volatility set: sum of per-axis G_i."""
    if len(A) != len(bands):
        raise ValueError("one band per diagonal entry")
    return float(sum(b.G(a) for a, b in zip(A, bands)))


def gaussian_expect(phi: Callable, sd: float, nodes: int = 4001, width: float = 10.0,
                    method: str = "simpson") -> float:
    """``E[phi(sd * Z)]`` for standard normal ``Z``.

    Composite Simpson on ``[-width*sd, width*sd]`` (``nodes`` odd), or
    Gauss-Hermite with ``nodes`` points.
    """
    if sd == 0:
        return float(np.asarray(phi(np.zeros(1)), dtype=float)[0])
    if method == "hermite":
        z, w = roots_hermitenorm(nodes)
        return float(np.dot(w, phi(sd * z)) / math.sqrt(2 * math.pi))
    if nodes % 2 == 0:
        nodes += 1
    y = np.linspace(-width * sd, width * sd, nodes)
    h = y[1] - y[0]
    dens = np.exp(-0.5 * (y / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    w = np.ones(nodes)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    return float(h / 3.0 * np.dot(w, np.asarray(phi(y), dtype=float) * dens))


def check_shape(phi: Callable, hint: ShapeHint, x: np.ndarray, tol: float = 1e-9) -> ShapeHint:
    """Spot-check a declared convex/concave hint on grid samples; downgrade on mismatch."""
    hint = ShapeHint(hint)
    if hint is ShapeHint.GENERAL:
        return hint
    v = np.asarray(phi(x), dtype=float)
    d2 = v[2:] - 2 * v[1:-1] + v[:-2]
    scale = tol * (1.0 + np.abs(v[1:-1]))
    bad = np.any(d2 < -scale) if hint is ShapeHint.CONVEX else np.any(d2 > scale)
    if bad:
        warnings.warn(f"payoff declared {hint.value} fails the sample check; using PDE", stacklevel=3)
        return ShapeHint.GENERAL
    return hint


def gnormal_expect(phi: Callable, hint: ShapeHint | str, law: GNormalLaw,
                   grid: GridSpec | None = None, *, nodes: int = 4001,
                   method: str = "simpson") -> float:
    """``E[phi(sqrt(t) X)]`` under the G-normal law.

    Parameters
    ----------
    hint : ShapeHint
        ``convex``/``concave`` select the Gaussian fast path at the upper/lower
        volatility; the hint is spot-checked first. ``general`` solves the
        G-heat equation up to ``t`` and reads the value at ``x = 0``.
    grid : GridSpec, optional
        PDE grid for the general path (default: 8-sigma domain, 1601 nodes).
    """
    g, t = law.g, law.t
    probe = np.linspace(-8 * g.sigma_hi * math.sqrt(t), 8 * g.sigma_hi * math.sqrt(t), 801)
    hint = check_shape(phi, hint, probe)
    if hint is ShapeHint.CONVEX:
        return gaussian_expect(phi, g.sigma_hi * math.sqrt(t), nodes, method=method)
    if hint is ShapeHint.CONCAVE:
        return gaussian_expect(phi, g.sigma_lo * math.sqrt(t), nodes, method=method)
    if grid is None:
        grid = GridSpec.centered(g, t, nx=1601)
    elif grid.T != t:
        grid = GridSpec(grid.x_min, grid.x_max, grid.nx, t, 0, grid.spacing)
    return pde_engine.solve_gheat(phi, g, grid).at(0.0)


def increment_moment_table(g: GParams, dt: float) -> dict[str, float]:
    """Moments of a G-Brownian increment over ``dt`` with ``sigma_hi`` normalized to 1.

    Upper moments of ``|dB|^n`` are the classical ``N(0, dt)`` ones; lower
    moments ``-E[-|dB|^n]`` carry a factor ``(sigma_lo / sigma_hi)^n``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    s = g.sigma_lo / g.sigma_hi
    abs_mom = {
        1: math.sqrt(2 * dt / math.pi),
        2: dt,
        3: 2 * math.sqrt(2) * dt**1.5 / math.sqrt(math.pi),
        4: 3 * dt**2,
        5: 8 * math.sqrt(2) * dt**2.5 / math.sqrt(math.pi),
        6: 15 * dt**3,
        8: 105 * dt**4,
    }
    table = {}
    for n in (2, 4, 6, 8):
        table[f"E[dB^{n}]"] = abs_mom[n]
    for n in (1, 3, 5):
        table[f"E[|dB|^{n}]"] = abs_mom[n]
    for n in sorted(abs_mom):
        table[f"-E[-|dB|^{n}]"] = s**n * abs_mom[n]
    return table


def format_moment_table(table: dict[str, float], csv: bool = False) -> str:
    if csv:
        return "moment,value\n" + "".join(f"{k},{v!r}\n" for k, v in table.items())
    w = max(len(k) for k in table)
    return "".join(f"{k:<{w}}  {v: .12g}\n" for k, v in table.items())


def u_expect(phi: Callable, law: ULaw, scan: int = 65) -> float:
    """``sup_{v in [mu_lo t, mu_hi t]} phi(v)``: coarse scan, bounded golden/Brent
    refinement around the best scan point, and the two endpoints."""
    a, b = law.interval
    if a == b:
        return float(phi(a))
    vs = np.linspace(a, b, scan)
    vals = np.array([float(phi(v)) for v in vs])
    k = int(np.argmax(vals))
    best = float(vals[k])
    lo, hi = vs[max(k - 1, 0)], vs[min(k + 1, scan - 1)]
    res = minimize_scalar(lambda v: -float(phi(v)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * max(1.0, abs(b - a))})
    if res.success:
        best = max(best, -float(res.fun))
    return max(best, float(phi(a)), float(phi(b)))


@dataclass
class ConvexityReport:
    min_lhs: float
    witness: tuple | None
    status: str

    @property
    def passed(self) -> bool:
        return self.witness is None


def g_convexity_check(h: Callable, bands: Sequence[GParams], *, y_range=(-2.0, 2.0),
                      z_range=(-2.0, 2.0), a_range=(-2.0, 2.0), n_grid: int = 9,
                      dh: Callable | None = None, d2h: Callable | None = None,
                      step: float = 1e-5, tol: float = 1e-9) -> ConvexityReport:
    """Scan ``G(h'(y) A + h''(y) z z^T) - h'(y) G(A)`` over a box.

    ``A`` is diagonal with entries on ``a_range``; ``z`` ranges per axis on
    ``z_range``. Derivatives default to central differences with ``step``;
    the rounding noise of the second difference is then added to ``tol``.
    The outcome only speaks for the sampled box.
    """
    d = len(bands)
    noise = lambda y: 0.0
    if dh is None:
        dh = lambda y: (h(y + step) - h(y - step)) / (2 * step)
    if d2h is None:
        d2h = lambda y: (h(y + step) - 2 * h(y) + h(y - step)) / step**2
        zmax = max(abs(v) for v in z_range)
        s_hi = max(b.sigma_hi for b in bands)
        eps = np.finfo(float).eps
        noise = lambda y: 8 * eps * (abs(h(y - step)) + abs(h(y)) + abs(h(y + step)) + 1.0) \
            / step**2 * s_hi**2 * d * zmax**2
    ys = np.linspace(*y_range, n_grid)
    axes = [np.linspace(*z_range, n_grid)] * d + [np.linspace(*a_range, n_grid)] * d
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    Z, A = mesh[:, :d], mesh[:, d:]
    worst, witness = math.inf, None
    for y in ys:
        h1, h2 = float(dh(y)), float(d2h(y))
        diag = h1 * A + h2 * Z**2
        lhs = sum(bands[i].G(diag[:, i]) for i in range(d)) \
            - h1 * sum(bands[i].G(A[:, i]) for i in range(d))
        k = int(np.argmin(lhs))
        if lhs[k] < worst:
            worst = float(lhs[k])
            if worst < -(tol + noise(y)):
                witness = (float(y), tuple(float(v) for v in Z[k]), tuple(float(v) for v in A[k]))
    status = "no violation found on sampled box" if witness is None else "violated at witness"
    return ConvexityReport(min_lhs=worst, witness=witness, status=status)
