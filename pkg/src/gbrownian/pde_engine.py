"""Explicit monotone finite-difference solvers.

Equations handled (all on a truncated 1-d or 2-d tensor grid):

* G-heat         ``u_t = G(u_xx)``,            forward from ``u(0) = phi``
* G-drift        ``u_t = 2 G_mu(u_x)``,        forward from ``u(0) = phi``
* Feynman-Kac    ``u_t + sup_gamma L_gamma u = 0``, backward from ``u(T) = Phi``
* diagonal 2-d   ``u_t = G1(u_xx) + G2(u_yy)``

Every update is a monotone, translation-invariant, positively homogeneous
map of the previous slice, so ordering and sublinearity carry over exactly
from one step to the next. Boundary nodes use a zero second difference
(linear extension of the solution past the truncated domain).
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .params import GParams, GridSpec, MeanParams

DEFAULT_CFL = 0.9
BOUNDARY_POLICY = "linear-extension"


class CFLError(ValueError):
    """Forced time step breaks the monotonicity (CFL) limit."""


@dataclass
class SolveResult:
    """Stored slices of a PDE solve.

    ``u[k]`` is the solution at ``times[k]`` (ascending). For 1-d solves
    ``u`` has shape ``(n_slices, nx)``; 2-d solves add a ``y`` axis.
    ``meta["t_out"]`` is the time of the last computed slice, i.e. ``T``
    for forward equations and ``0`` for the backward Feynman-Kac solve.
    """

    x: np.ndarray
    times: np.ndarray
    u: np.ndarray
    meta: dict = field(default_factory=dict)
    y: np.ndarray | None = None

    def slice_at(self, t: float | None = None) -> np.ndarray:
        if t is None:
            t = self.meta["t_out"]
        k = int(np.argmin(np.abs(self.times - t)))
        return self.u[k]

    def at(self, x: float, t: float | None = None, y: float | None = None) -> float:
        """Value at a point, linear interpolation in space."""
        s = self.slice_at(t)
        if self.y is None:
            return float(np.interp(x, self.x, s))
        i = np.clip(np.searchsorted(self.x, x) - 1, 0, len(self.x) - 2)
        j = np.clip(np.searchsorted(self.y, y) - 1, 0, len(self.y) - 2)
        wx = (x - self.x[i]) / (self.x[i + 1] - self.x[i])
        wy = (y - self.y[j]) / (self.y[j + 1] - self.y[j])
        return float((1 - wx) * (1 - wy) * s[i, j] + wx * (1 - wy) * s[i + 1, j]
                     + (1 - wx) * wy * s[i, j + 1] + wx * wy * s[i + 1, j + 1])

    @property
    def final(self) -> np.ndarray:
        return self.slice_at(None)

    def to_csv(self, path) -> None:
        """Long-format CSV: ``t,x,u`` (or ``t,x,y,u``)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.y is None:
                w.writerow(["t", "x", "u"])
                for t, row in zip(self.times, self.u):
                    for xi, ui in zip(self.x, row):
                        w.writerow([repr(float(t)), repr(float(xi)), repr(float(ui))])
            else:
                w.writerow(["t", "x", "y", "u"])
                for t, sl in zip(self.times, self.u):
                    for i, xi in enumerate(self.x):
                        for j, yj in enumerate(self.y):
                            w.writerow([repr(float(t)), repr(float(xi)), repr(float(yj)),
                                        repr(float(sl[i, j]))])

    def meta_json(self) -> str:
        return json.dumps(self.meta, sort_keys=True)


def _sample(phi, *coords) -> np.ndarray:
    vals = phi(*coords) if callable(phi) else phi
    vals = np.array(np.broadcast_to(np.asarray(vals, dtype=float),
                                    np.broadcast_shapes(*(c.shape for c in coords))))
    if not np.all(np.isfinite(vals)):
        raise ValueError("payoff has NaN/Inf on the grid")
    return vals


def _second_diff(u: np.ndarray, x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Three-point second difference along ``axis``; zero on the two boundary nodes."""
    u = np.moveaxis(u, axis, 0)
    hm = np.diff(x)[:-1]
    hp = np.diff(x)[1:]
    shape = (-1,) + (1,) * (u.ndim - 1)
    hm, hp = hm.reshape(shape), hp.reshape(shape)
    d = np.zeros_like(u)
    d[1:-1] = 2.0 / (hm + hp) * ((u[2:] - u[1:-1]) / hp - (u[1:-1] - u[:-2]) / hm)
    return np.moveaxis(d, 0, axis)


def _diffusion_limit(x: np.ndarray) -> np.ndarray:
    """Per-node ``h_- * h_+``; with a zero-diffusion boundary only interior nodes count."""
    h = np.diff(x)
    return h[:-1] * h[1:]


def _choose_nt(T: float, dt_max: float, nt: int, cfl_safety: float, what: str) -> int:
    if not math.isfinite(dt_max) or dt_max <= 0:
        dt_max = math.inf
    if nt == 0:
        return max(1, math.ceil(T / (cfl_safety * dt_max) - 1e-9)) if math.isfinite(dt_max) else 1
    if T / nt > cfl_safety * dt_max * (1 + 1e-12):
        raise CFLError(f"{what}: dt={T / nt:.3g} exceeds CFL limit {cfl_safety * dt_max:.3g}"
                       f" (need nt >= {math.ceil(T / (cfl_safety * dt_max))})")
    return nt


def _store_plan(nt: int, store_every: int | None) -> set[int]:
    keep = {0, nt}
    if store_every:
        keep.update(range(0, nt + 1, int(store_every)))
    return keep


def _march(u0, nt, dt, step, store_every, times_fn):
    keep = _store_plan(nt, store_every)
    times, slices = [times_fn(0)], [u0.copy()]
    u = u0
    for n in range(1, nt + 1):
        u = step(u)
        if n in keep:
            times.append(times_fn(n))
            slices.append(u.copy())
    return np.array(times), np.array(slices)


def solve_gheat(phi, g: GParams, grid: GridSpec, *, growth: int = 2,
                cfl_safety: float = DEFAULT_CFL, store_every: int | None = None) -> SolveResult:
    """Solve ``u_t = G(u_xx)``, ``u(0, .) = phi`` by the explicit monotone scheme.

    ``u^{n+1}_i = u^n_i + dt * G(D_i u^n)`` with the three-point second
    difference ``D``. With ``grid.nt == 0`` the step count is chosen so that
    ``dt <= cfl_safety * dx^2 / sigma_hi^2``; a forced ``nt`` above that
    limit raises :class:`CFLError`.

    Parameters
    ----------
    phi : callable or array
        Initial condition, vectorized over grid nodes.
    growth : int
        Declared polynomial growth exponent of ``phi``. Only recorded and used
        to warn that the default 8-sigma domain is tuned for ``growth <= 4``.
    store_every : int, optional
        Keep every k-th slice besides the initial and final ones.
    """
    x = grid.nodes()
    u0 = _sample(phi, x)
    if growth > 4:
        warnings.warn("growth > 4: widen the domain beyond 8 sigma to bound truncation error",
                      stacklevel=2)
    dt_max = float(np.min(_diffusion_limit(x))) / g.var_hi
    nt = _choose_nt(grid.T, dt_max, grid.nt, cfl_safety, "solve_gheat")
    dt = grid.T / nt
    vhi, vlo = g.var_hi, g.var_lo

    def step(u):
        d = _second_diff(u, x)
        return u + dt * 0.5 * np.where(d > 0, vhi * d, vlo * d)

    times, u = _march(u0, nt, dt, step, store_every, lambda n: n * dt)
    meta = dict(dt=dt, dx=grid.dx, nt=nt, scheme="explicit-central-G", boundary=BOUNDARY_POLICY,
                t_out=grid.T, growth=growth, sigma_lo=g.sigma_lo, sigma_hi=g.sigma_hi)
    return SolveResult(x, times, u, meta)


def solve_gdrift(phi, m: MeanParams, grid: GridSpec, *, cfl_safety: float = DEFAULT_CFL,
                 store_every: int | None = None) -> SolveResult:
    """Solve ``u_t = 2 G_mu(u_x) = max_{v in {mu_lo, mu_hi}} v u_x`` (forward in t).

    Upwind differences per candidate speed, then the pointwise max; the
    solution is ``max_{v in [mu_lo, mu_hi]} phi(x + v t)``. Ghost nodes use
    linear extrapolation.
    """
    x = grid.nodes()
    u0 = _sample(phi, x)
    h = np.diff(x)
    speed = m.speed
    dt_max = float(np.min(h)) / speed if speed > 0 else math.inf
    nt = _choose_nt(grid.T, dt_max, grid.nt, cfl_safety, "solve_gdrift")
    dt = grid.T / nt
    speeds = (m.mu_lo, m.mu_hi)

    def step(u):
        fwd = np.empty_like(u)
        bwd = np.empty_like(u)
        slope = np.diff(u) / h
        fwd[:-1], fwd[-1] = slope, slope[-1]
        bwd[1:], bwd[0] = slope, slope[0]
        rates = [v * (fwd if v > 0 else bwd) for v in speeds]
        return u + dt * np.maximum(*rates)

    times, u = _march(u0, nt, dt, step, store_every, lambda n: n * dt)
    meta = dict(dt=dt, dx=grid.dx, nt=nt, scheme="explicit-upwind-max", boundary="linear-ghost",
                t_out=grid.T, mu_lo=m.mu_lo, mu_hi=m.mu_hi)
    return SolveResult(x, times, u, meta)


def _coef(fn, x, default=0.0):
    if fn is None:
        return np.full_like(x, default)
    return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape).copy()


def _lipschitz_warn(name, vals, x, bound):
    if bound is None:
        return
    slope = float(np.max(np.abs(np.diff(vals) / np.diff(x)))) if len(x) > 1 else 0.0
    if slope > bound * (1 + 1e-9):
        warnings.warn(f"{name}: observed slope {slope:.4g} exceeds declared Lipschitz bound {bound}",
                      stacklevel=3)


def solve_fk_hjb(terminal, grid: GridSpec, gamma_band: Sequence[float], *,
                 b: Callable | None = None, h: Callable | None = None,
                 sigma: Callable | None = None, g: Callable | None = None,
                 f: Callable | None = None, lipschitz: float | None = None,
                 cfl_safety: float = DEFAULT_CFL, store_every: int | None = None) -> SolveResult:
    """Backward solve of the nonlinear Feynman-Kac equation

    ``u_t + sup_gamma [ (b + h gamma) u_x + 0.5 sigma^2 gamma u_xx + g(x,u) + f(x,u) gamma ] = 0``

    with ``u(T, .) = terminal``. The bracket is affine in ``gamma``, so the sup
    is taken over the two band endpoints. Drift is upwinded, zero-order terms
    are explicit. ``gamma`` is a variance rate: a volatility band
    ``[s_lo, s_hi]`` corresponds to ``gamma_band = (s_lo**2, s_hi**2)``.
    """
    x = grid.nodes()
    g_lo, g_hi = (float(v) for v in gamma_band)
    if g_lo > g_hi or g_lo < 0:
        raise ValueError("gamma_band must satisfy 0 <= lo <= hi")
    u_T = _sample(terminal, x)
    bx, hx, sx = _coef(b, x), _coef(h, x), _coef(sigma, x, 1.0)
    for name, vals in (("b", bx), ("h", hx), ("sigma", sx)):
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"coefficient {name} is not finite on the grid")
        _lipschitz_warn(name, vals, x, lipschitz)

    hs = np.diff(x)
    hm, hp = hs[:-1], hs[1:]
    gammas = (g_lo, g_hi) if g_hi > g_lo else (g_hi,)
    rate = np.zeros_like(x)
    for gam in gammas:
        diff = np.zeros_like(x)
        diff[1:-1] = sx[1:-1] ** 2 * gam / (hm * hp)
        adv = np.abs(bx + hx * gam) / np.concatenate([hs[:1], np.minimum(hm, hp), hs[-1:]])
        rate = np.maximum(rate, diff + adv)
    rmax = float(np.max(rate))
    dt_max = 1.0 / rmax if rmax > 0 else math.inf
    nt = _choose_nt(grid.T, dt_max, grid.nt, cfl_safety, "solve_fk_hjb")
    dt = grid.T / nt

    def step(u):
        slope = np.diff(u) / hs
        fwd = np.concatenate([slope, slope[-1:]])
        bwd = np.concatenate([slope[:1], slope])
        d2 = _second_diff(u, x)
        g0 = _coef(None, x) if g is None else np.asarray(g(x, u), dtype=float)
        f0 = _coef(None, x) if f is None else np.asarray(f(x, u), dtype=float)
        best = None
        for gam in gammas:
            a = bx + hx * gam
            ux = np.where(a > 0, fwd, bwd)
            val = a * ux + 0.5 * sx**2 * gam * d2 + g0 + f0 * gam
            best = val if best is None else np.maximum(best, val)
        return u + dt * best

    times, u = _march(u_T, nt, dt, step, store_every, lambda n: grid.T - n * dt)
    order = np.argsort(times)
    meta = dict(dt=dt, dx=grid.dx, nt=nt, scheme="explicit-upwind-bangbang", boundary=BOUNDARY_POLICY,
                t_out=0.0, gamma_lo=g_lo, gamma_hi=g_hi, spacing=grid.spacing)
    return SolveResult(x, times[order], u[order], meta)


@dataclass(frozen=True)
class Grid2D:
    x_min: float
    x_max: float
    nx: int
    y_min: float
    y_max: float
    ny: int
    T: float
    nt: int = 0

    def axes(self):
        return GridSpec(self.x_min, self.x_max, self.nx, self.T).nodes(), \
            GridSpec(self.y_min, self.y_max, self.ny, self.T).nodes()


def solve_gheat_diag2d(phi, bands: Sequence[GParams], grid: Grid2D, *,
                       cfl_safety: float = DEFAULT_CFL, store_every: int | None = None) -> SolveResult:
    """Solve ``u_t = G1(u_xx) + G2(u_yy)`` for a diagonal volatility set.

    ``phi`` is called as ``phi(X, Y)`` on ``indexing="ij"`` mesh arrays.
    """
    if len(bands) != 2:
        raise ValueError("need exactly two per-axis bands")
    g1, g2 = bands
    x, y = grid.axes()
    X, Y = np.meshgrid(x, y, indexing="ij")
    u0 = _sample(phi, X, Y)
    dmin = min(float(np.min(_diffusion_limit(x))), float(np.min(_diffusion_limit(y))))
    dt_max = dmin / (g1.var_hi + g2.var_hi)
    nt = _choose_nt(grid.T, dt_max, grid.nt, cfl_safety, "solve_gheat_diag2d")
    dt = grid.T / nt

    def step(u):
        dxx = _second_diff(u, x, axis=0)
        dyy = _second_diff(u, y, axis=1)
        return u + dt * (g1.G(dxx) + g2.G(dyy))

    times, u = _march(u0, nt, dt, step, store_every, lambda n: n * dt)
    meta = dict(dt=dt, dx=float(np.min(np.diff(x))), dy=float(np.min(np.diff(y))), nt=nt,
                scheme="explicit-split-diag-G", boundary=BOUNDARY_POLICY, t_out=grid.T)
    return SolveResult(x, times, u, meta, y=y)


def _common_grid(grid: GridSpec, bands: Sequence[GParams], cfl_safety: float) -> GridSpec:
    """Pin ``nt`` so that solves under several bands share one time grid."""
    if grid.nt:
        return grid
    x = grid.nodes()
    vmax = max(b.var_hi for b in bands)
    nt = _choose_nt(grid.T, float(np.min(_diffusion_limit(x))) / vmax, 0, cfl_safety, "grid")
    return GridSpec(grid.x_min, grid.x_max, grid.nx, grid.T, nt, grid.spacing)


def comparison_check(phi1, phi2, g1: GParams, g2: GParams, grid: GridSpec, *,
                     cfl_safety: float = DEFAULT_CFL) -> float:
    """Max over grid and time of ``(u2 - u1)^+`` where ``u_k`` solves the
    ``g_k``-heat equation from ``phi_k``; requires ``phi1 >= phi2`` and
    ``g1``'s band to contain ``g2``'s."""
    if not g1.contains(g2):
        raise ValueError("comparison needs band of g1 to contain band of g2")
    x = grid.nodes()
    if np.any(_sample(phi1, x) < _sample(phi2, x)):
        raise ValueError("comparison needs phi1 >= phi2 on the grid")
    grid = _common_grid(grid, (g1, g2), cfl_safety)
    u1 = solve_gheat(phi1, g1, grid, cfl_safety=cfl_safety, store_every=1).u
    u2 = solve_gheat(phi2, g2, grid, cfl_safety=cfl_safety, store_every=1).u
    return float(np.max(np.maximum(u2 - u1, 0.0)))


def g_dominates(g0: GParams, g1: GParams, samples: int = 2000, seed: int = 0) -> float:
    """Largest sampled value of ``G1(a) - G1(b) - G0(a - b)`` (<= 0 means dominated)."""
    rng = np.random.default_rng(seed)
    a, b = rng.normal(scale=5, size=(2, samples))
    return float(np.max(g1.G(a) - g1.G(b) - g0.G(a - b)))


@dataclass
class DominationReport:
    violation: float
    slack_interior: float
    u0: np.ndarray
    gap: np.ndarray


def domination_check(g0: GParams, g1: GParams, phi0, phi1, phi2, grid: GridSpec, *,
                     cfl_safety: float = DEFAULT_CFL) -> DominationReport:
    """Check ``u2 - u1 <= u0`` where ``u1, u2`` solve the ``g1``-heat equation
    from ``phi1, phi2`` and ``u0`` the ``g0``-heat equation from ``phi0``.

    ``violation`` is the max over grid and time of ``(u2 - u1 - u0)^+``;
    ``slack_interior`` is the min of ``u0 - (u2 - u1)`` over the central half
    of the grid at the final time.
    """
    x = grid.nodes()
    if np.any(_sample(phi2, x) - _sample(phi1, x) > _sample(phi0, x) + 1e-12):
        raise ValueError("initial domination phi2 - phi1 <= phi0 fails on the grid")
    if g_dominates(g0, g1) > 1e-12:
        raise ValueError("G0 does not dominate the increments of G1")
    grid = _common_grid(grid, (g0, g1), cfl_safety)
    u0 = solve_gheat(phi0, g0, grid, cfl_safety=cfl_safety, store_every=1).u
    u1 = solve_gheat(phi1, g1, grid, cfl_safety=cfl_safety, store_every=1).u
    u2 = solve_gheat(phi2, g1, grid, cfl_safety=cfl_safety, store_every=1).u
    gap = u2 - u1 - u0
    n = len(x)
    mid = slice(n // 4, n - n // 4)
    return DominationReport(
        violation=float(np.max(np.maximum(gap, 0.0))),
        slack_interior=float(np.min(-gap[-1, mid])),
        u0=u0[-1],
        gap=gap[-1],
    )
