"""G-SDEs, G-BSDEs and superhedging prices.

Forward equations ``dX = b(X) dt + h(X) d<B> + sigma(X) dB`` are solved by
Picard iteration on a fixed set of driving increments, either simulated
paths under one volatility scenario or the leaves of an enumerated tree.
``d<B>`` is always discretized as ``(dB)^2``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import pde_engine
from .discrete_gexp import GTree, IncrementFamily
from .gbm_sim import PathBundle
from .params import GParams, GridSpec


class PicardDivergenceError(RuntimeError):
    pass


@dataclass
class SdeSpec:
    """``X_t = x0 + int b(X) ds + int h(X) d<B> + int sigma(X) dB`` on ``[0, T]``.

    Coefficients are vectorized callables; ``K`` is their declared Lipschitz
    constant.
    """

    b: Callable | None = None
    h: Callable | None = None
    sigma: Callable | None = None
    K: float = 1.0
    x0: float = 0.0
    T: float = 1.0

    def coef(self, name: str, x: np.ndarray) -> np.ndarray:
        fn = getattr(self, name)
        if fn is None:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape)

    def check_lipschitz(self, x: np.ndarray) -> None:
        xs = np.unique(np.asarray(x, dtype=float).ravel())
        if xs.size < 2:
            return
        for name in ("b", "h", "sigma"):
            v = self.coef(name, xs)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"coefficient {name} not finite on visited states")
            slope = float(np.max(np.abs(np.diff(v) / np.diff(xs))))
            if slope > self.K * (1 + 1e-9):
                warnings.warn(f"{name}: observed slope {slope:.4g} > declared K={self.K}", stacklevel=3)


class PathBackend:
    """Sample-mean expectation over simulated paths of one scenario."""

    def __init__(self, bundle: PathBundle):
        self.increments = bundle.increments
        self.dt = bundle.dt

    def expect(self, values: np.ndarray) -> float:
        return float(np.mean(values))


class TreeBackend:
    """Exact G-expectation over the enumerated leaves of a tree."""

    def __init__(self, tree: GTree):
        self.tree = tree
        self.increments = tree.increments()
        self.dt = tree.dt

    def expect(self, values: np.ndarray) -> float:
        return self.tree.expect(values)


@dataclass
class PicardResult:
    X: np.ndarray
    times: np.ndarray
    norms: list = field(default_factory=list)
    C: float = 0.0

    @property
    def ratios(self) -> list[float]:
        n = self.norms
        return [n[k + 1] / n[k] for k in range(len(n) - 1) if n[k] > 0]

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "weighted_norm", "ratio"])
        for k, v in enumerate(self.norms):
            r = v / self.norms[k - 1] if k > 0 and self.norms[k - 1] > 0 else ""
            w.writerow([k + 1, repr(v), repr(r) if r != "" else ""])
        return buf.getvalue()


def _weighted_norm(diff: np.ndarray, times: np.ndarray, C: float, expect) -> float:
    """``int_0^T E[|d_t|^2] exp(-2 C t) dt`` by the left-point rule."""
    dt = np.diff(times)
    e = np.array([expect(diff[:, k] ** 2) for k in range(diff.shape[1] - 1)])
    return float(np.sum(e * np.exp(-2 * C * times[:-1]) * dt))


def picard_map(spec: SdeSpec, Y: np.ndarray, inc: np.ndarray, dt: float) -> np.ndarray:
    """``Lambda(Y)_k = x0 + sum_{j<k} [b(Y_j) dt + h(Y_j) dB_j^2 + sigma(Y_j) dB_j]``."""
    Yl = Y[:, :-1]
    d = spec.coef("b", Yl) * dt + spec.coef("h", Yl) * inc**2 + spec.coef("sigma", Yl) * inc
    return spec.x0 + np.concatenate([np.zeros((Y.shape[0], 1)), np.cumsum(d, axis=1)], axis=1)


def sde_picard(spec: SdeSpec, backend, tol: float = 1e-8, max_iter: int = 200,
               init: np.ndarray | float | None = None, C: float | None = None) -> PicardResult:
    """Iterate ``Y <- Lambda(Y)`` until the weighted distance
    ``int E[|Y^{k+1} - Y^k|^2] exp(-2Ct) dt`` drops below ``tol``.

    ``C`` defaults to ``3 K^2``. ``init`` is the starting process (constant
    ``x0`` by default).
    """
    inc, dt = backend.increments, backend.dt
    N, n = inc.shape
    times = np.arange(n + 1) * dt
    if C is None:
        C = 3.0 * spec.K**2
    if init is None:
        Y = np.full((N, n + 1), float(spec.x0))
    else:
        Y = np.array(np.broadcast_to(np.asarray(init, dtype=float), (N, n + 1)))
    norms = []
    for _ in range(max_iter):
        Ynew = picard_map(spec, Y, inc, dt)
        if not np.all(np.isfinite(Ynew)):
            raise PicardDivergenceError("non-finite iterate")
        norm = _weighted_norm(Ynew - Y, times, C, backend.expect)
        norms.append(norm)
        Y = Ynew
        if norm < tol:
            spec.check_lipschitz(Y)
            return PicardResult(Y, times, norms, C)
    last = norms[-1] / norms[-2] if len(norms) > 1 and norms[-2] > 0 else float("nan")
    raise PicardDivergenceError(f"no convergence in {max_iter} iterations (last ratio {last:.3g})")


def picard_distance(a: PicardResult, b: PicardResult, backend) -> float:
    return _weighted_norm(a.X - b.X, a.times, a.C, backend.expect)


@dataclass
class BsdeSpec:
    """``Y_t = E[xi + int_t^T f(s, Y_s) ds | H_t]``; ``k`` is the Lipschitz constant of ``f`` in ``y``."""

    xi: Callable | np.ndarray
    f: Callable | None = None
    k: float = 0.0
    T: float = 1.0

    def check_lipschitz(self, t: float, y: np.ndarray) -> None:
        if self.f is None or y.size < 2:
            return
        ys = np.unique(y)
        # points closer than rounding noise say nothing about the slope
        keep = np.concatenate([[True], np.diff(ys) > 1e-8 * (1 + np.abs(ys[1:]))])
        ys = ys[keep]
        if ys.size < 2:
            return
        v = np.asarray(self.f(t, ys), dtype=float) * np.ones_like(ys)
        slope = float(np.max(np.abs(np.diff(v) / np.diff(ys))))
        if slope > self.k * (1 + 1e-6) + 1e-12:
            warnings.warn(f"driver slope {slope:.4g} exceeds declared k={self.k}", stacklevel=3)


def bsde_solve(spec: BsdeSpec, tree: GTree, tol: float = 1e-12, max_inner: int = 50) -> list[np.ndarray]:
    """Backward recursion ``Y_j = E[Y_{j+1} | H_j] + f(t_j, Y_j) dt``.

    The implicit step is a fixed point with contraction factor ``k dt``,
    iterated explicitly to ``tol``. Returns ``[Y_0, ..., Y_n]`` as level/grid
    arrays of the tree.
    """
    if spec.k * tree.dt >= 1:
        raise ValueError(f"k*dt = {spec.k * tree.dt:.3g} >= 1: refine the tree")
    if abs(tree.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise ValueError("tree horizon does not match BSDE horizon")
    Y = tree.terminal(spec.xi)
    out = [Y]
    for j in range(tree.n_steps - 1, -1, -1):
        c = tree.step_back(Y, j)
        t = j * tree.dt
        y = c.copy()
        if spec.f is not None:
            for _ in range(max_inner):
                y_new = c + np.asarray(spec.f(t, y), dtype=float) * tree.dt
                done = np.max(np.abs(y_new - y)) <= tol * (1 + np.max(np.abs(y_new)))
                y = y_new
                if done:
                    break
            spec.check_lipschitz(t, y)
        Y = y
        out.append(Y)
    return out[::-1]


def bsde_value(spec: BsdeSpec, tree: GTree, **kw) -> float:
    Y0 = bsde_solve(spec, tree, **kw)[0]
    if tree.backend == "enumerate":
        return float(Y0[0])
    return float(np.interp(0.0, tree.grid(), Y0))


def markov_tree_value(sde: SdeSpec, gamma_band: Sequence[float], Phi: Callable, *,
                      g: Callable | None = None, f: Callable | None = None,
                      n_levels: int = 10, nx: int = 801, x_range: tuple | None = None,
                      nodes: np.ndarray | None = None, n_sigma: int = 3) -> float:
    """Discrete G-expectation of ``Phi(X_T) + int g dt + int f d<B>`` with an
    Euler step per level and a value function on an ``x`` grid (linear
    interpolation on ``nodes``, or ``nx`` uniform nodes over ``x_range``).
    The one-step laws are ``+-s`` for ``s`` spread over
    ``[sqrt(gamma_lo), sqrt(gamma_hi)]``."""
    lo, hi = (math.sqrt(float(v)) for v in gamma_band)
    fam = IncrementFamily.from_band(GParams(lo, hi), n_sigma)
    dt = sde.T / n_levels
    jumps = fam.support * math.sqrt(dt)
    if nodes is not None:
        x = np.asarray(nodes, dtype=float)
    else:
        if x_range is None:
            x_range = (sde.x0 - 10 * hi * math.sqrt(sde.T) * max(1.0, abs(sde.x0)),
                       sde.x0 + 10 * hi * math.sqrt(sde.T) * max(1.0, abs(sde.x0)))
        x = np.linspace(*x_range, nx)
    V = np.asarray(Phi(x), dtype=float) * np.ones_like(x)
    bx, hx, sx = sde.coef("b", x), sde.coef("h", x), sde.coef("sigma", x)
    for _ in range(n_levels):
        nxt = x[:, None] + bx[:, None] * dt + hx[:, None] * jumps[None, :] ** 2 + sx[:, None] * jumps[None, :]
        child = np.interp(nxt.ravel(), x, V).reshape(nxt.shape)
        if f is not None:
            child = child + np.asarray(f(x, V), dtype=float)[:, None] * jumps[None, :] ** 2
        Vn = np.max(child @ fam.probs.T, axis=1)
        if g is not None:
            Vn = Vn + np.asarray(g(x, V), dtype=float) * dt
        V = Vn
    return float(np.interp(sde.x0, x, V))


@dataclass
class FKPrice:
    value: float
    tree_value: float | None
    gap: float | None
    solve: pde_engine.SolveResult = field(repr=False, default=None)

    def __float__(self):
        return self.value


def feynman_kac_price(sde: SdeSpec, gamma_band: Sequence[float], Phi: Callable, *,
                      g: Callable | None = None, f: Callable | None = None,
                      grid: GridSpec | None = None, tree_levels: int | None = 10) -> FKPrice:
    """``u(0, x0)`` from the nonlinear Feynman-Kac equation, cross-checked
    against the Markov tree on the same spatial nodes (gap reported, not
    enforced)."""
    if grid is None:
        grid = default_price_grid(sde, gamma_band)
    res = pde_engine.solve_fk_hjb(Phi, grid, gamma_band, b=sde.b, h=sde.h, sigma=sde.sigma,
                                  g=g, f=f, lipschitz=sde.K)
    value = res.at(sde.x0, 0.0)
    tree_value = gap = None
    if tree_levels:
        tree_value = markov_tree_value(sde, gamma_band, Phi, g=g, f=f, n_levels=tree_levels,
                                       nodes=grid.nodes())
        gap = abs(tree_value - value)
    return FKPrice(value, tree_value, gap, res)


def default_price_grid(sde: SdeSpec, gamma_band: Sequence[float], nx: int = 801) -> GridSpec:
    """Log grid when ``sigma`` vanishes at 0 and ``x0 > 0`` (lognormal-type
    models), otherwise an 8-sigma uniform grid around ``x0``."""
    s_hi = math.sqrt(float(gamma_band[1]))
    if sde.x0 > 0 and sde.sigma is not None and abs(float(np.asarray(sde.sigma(np.array([0.0])))[0])) < 1e-14:
        sig_rel = float(np.asarray(sde.sigma(np.array([sde.x0])))[0]) / sde.x0
        return GridSpec.lognormal(sde.x0, max(s_hi * abs(sig_rel), 1e-3), sde.T, nx)
    scale = float(np.asarray(sde.coef("sigma", np.array([sde.x0])))[0]) if sde.sigma else 0.0
    half = 8 * max(s_hi * abs(scale), 1e-3) * math.sqrt(sde.T)
    return GridSpec(sde.x0 - half, sde.x0 + half, nx, sde.T)


@dataclass
class PriceQuote:
    bid: float
    ask: float
    method: str
    grid_meta: dict
    probes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.bid > self.ask + 1e-10:
            raise ValueError(f"bid {self.bid} above ask {self.ask}")

    def to_json(self) -> str:
        return json.dumps({"bid": self.bid, "ask": self.ask, "method": self.method,
                           "grid_meta": self.grid_meta, "probes": self.probes}, sort_keys=True)


def bid_ask(payoff: Callable, sde: SdeSpec, gamma_band: Sequence[float], *,
            grid: GridSpec | None = None, probe_vols: Sequence[float] | None = None,
            slack: float = 1e-6) -> PriceQuote:
    """Superhedging interval ``[-E[-X], E[X]]`` for ``X = payoff(X_T)``.

    Each probe volatility ``s`` (default: band midpoint) is priced as a
    single classical scenario, i.e. with the degenerate band ``[s^2, s^2]``,
    and must land inside the interval.
    """
    if grid is None:
        grid = default_price_grid(sde, gamma_band)
    ask = feynman_kac_price(sde, gamma_band, payoff, grid=grid, tree_levels=None).value
    bid = -feynman_kac_price(sde, gamma_band, lambda x: -np.asarray(payoff(x)), grid=grid,
                             tree_levels=None).value
    lo, hi = (math.sqrt(float(v)) for v in gamma_band)
    if probe_vols is None:
        probe_vols = [0.5 * (lo + hi)]
    probes = {}
    pin = GridSpec(grid.x_min, grid.x_max, grid.nx, grid.T, 0, grid.spacing)
    for s in probe_vols:
        p = feynman_kac_price(sde, (s * s, s * s), payoff, grid=pin, tree_levels=None).value
        inside = bid - slack <= p <= ask + slack
        if not inside:
            warnings.warn(f"probe price {p} at vol {s} outside [{bid}, {ask}]", stacklevel=2)
        probes[repr(float(s))] = {"price": p, "inside": bool(inside)}
    meta = dict(x_min=grid.x_min, x_max=grid.x_max, nx=grid.nx, T=grid.T, spacing=grid.spacing)
    return PriceQuote(bid, ask, "fk-hjb-explicit", meta, probes)
