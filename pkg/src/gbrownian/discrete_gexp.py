"""Discrete-time G-expectation by backward dynamic programming.

A one-step increment is drawn from one of finitely many zero-mean laws on a
common support; the G-expectation takes, at every node, the worst (largest)
law. Two backends:

``enumerate``
    Every path is a leaf (``K**n`` of them for support size ``K``). Exact,
    handles path-dependent functionals, limited to ``n <= 12`` and 1e7 leaves.
``grid_dp``
    Value function of the running sum on a uniform grid with linear
    interpolation. When all jumps are integer multiples of the grid step the
    recursion is exact on the lattice.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .params import GParams

MAX_LEAVES = 10**7
MAX_ENUM_STEPS = 12


class StateExplosionError(ValueError):
    """Enumeration would exceed the leaf budget; use the grid_dp backend."""


@dataclass(frozen=True)
class IncrementFamily:
    """Candidate one-step laws for unit time, sharing one support.

    ``probs[l, k]`` is the weight law ``l`` puts on ``support[k]``. Over a step
    of length ``dt`` the jump is ``support[k] * sqrt(dt)``.
    """

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float).ravel()
        p = np.atleast_2d(np.asarray(self.probs, dtype=float))
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probs", p)
        if p.shape[1] != s.size:
            raise ValueError("probability vectors must match the support")
        if np.any(p < -1e-15) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-12):
            raise ValueError("invalid probability vector in family")
        if np.any(np.abs(p @ s) > 1e-12):
            raise ValueError("every candidate law must have mean 0")

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[Sequence[float], Sequence[float]]]) -> "IncrementFamily":
        """Merge ``(points, probs)`` laws onto the union of their supports."""
        pts = np.unique(np.concatenate([np.asarray(a, dtype=float) for a, _ in atoms]))
        rows = []
        for a, p in atoms:
            row = np.zeros(pts.size)
            for x, w in zip(a, p):
                row[np.searchsorted(pts, x)] += w
            rows.append(row)
        return cls(pts, np.array(rows))

    @classmethod
    def binomial(cls, sigmas: Sequence[float]) -> "IncrementFamily":
        """Laws ``+-sigma`` with probability 1/2, one per ``sigma``."""
        sig = [float(s) for s in sigmas]
        return cls.from_atoms([([-s, s], [0.5, 0.5]) if s > 0 else ([0.0], [1.0]) for s in sig])

    @classmethod
    def from_band(cls, g: GParams, n_sigma: int = 3) -> "IncrementFamily":
        """Binomial laws at ``n_sigma`` evenly spaced volatilities across the band."""
        if n_sigma < 2 or g.sigma_lo == g.sigma_hi:
            return cls.binomial(sorted({g.sigma_lo, g.sigma_hi}))
        return cls.binomial(np.linspace(g.sigma_lo, g.sigma_hi, n_sigma))

    @classmethod
    def ball(cls, p_values: Sequence[float] | None = None) -> "IncrementFamily":
        """Three-point laws ``(p/2, 1-p, p/2)`` on ``(-1, 0, 1)``."""
        if p_values is None:
            p_values = np.round(np.linspace(0.4, 0.5, 11), 12)
        p = np.asarray(p_values, dtype=float)
        return cls(np.array([-1.0, 0.0, 1.0]), np.column_stack([p / 2, 1 - p, p / 2]))

    @property
    def n_laws(self) -> int:
        return self.probs.shape[0]

    @property
    def variances(self) -> np.ndarray:
        return self.probs @ self.support**2

    @property
    def band(self) -> GParams:
        """Implied volatility band ``[sqrt(-E[-X^2]), sqrt(E[X^2])]``."""
        v = self.variances
        return GParams(math.sqrt(v.min()), math.sqrt(v.max()))

    def reflected(self) -> "IncrementFamily":
        order = np.argsort(-self.support)
        return IncrementFamily(-self.support[order], self.probs[:, order])

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        r = self.reflected()
        if r.support.shape != self.support.shape or np.any(np.abs(r.support - self.support) > tol):
            return False
        return all(np.any(np.max(np.abs(self.probs - row), axis=1) <= tol) for row in r.probs)

    def to_json(self) -> str:
        return json.dumps({"support": self.support.tolist(), "probs": self.probs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "IncrementFamily":
        d = json.loads(text)
        return cls(np.asarray(d["support"]), np.asarray(d["probs"]))


def _lattice_step(support: np.ndarray) -> float | None:
    """Largest ``q`` with every support point an integer multiple of ``q``."""
    nz = np.abs(support[np.abs(support) > 1e-14])
    if nz.size == 0:
        return None
    for q in sorted(set(np.round(nz, 14))):
        for div in range(1, 9):
            step = q / div
            r = nz / step
            if np.all(np.abs(r - np.round(r)) < 1e-9):
                return step
    return None


@dataclass
class GTree:
    """Discrete G-Brownian motion over ``n_steps`` steps of length ``dt``."""

    family: IncrementFamily
    n_steps: int
    dt: float
    backend: str = "enumerate"
    grid_nx: int | None = None
    width: float = 8.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.backend not in ("enumerate", "grid_dp"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "enumerate":
            leaves = self.K ** self.n_steps
            if self.n_steps > MAX_ENUM_STEPS or leaves > MAX_LEAVES:
                raise StateExplosionError(
                    f"{self.K}^{self.n_steps} = {leaves} leaves exceeds the enumerate budget;"
                    " use backend='grid_dp'")

    @property
    def K(self) -> int:
        return self.family.support.size

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def jumps(self) -> np.ndarray:
        return self.family.support * math.sqrt(self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    # --- enumerate backend -------------------------------------------------

    def increments(self) -> np.ndarray:
        """``(K**n, n)`` jump matrix; leaf index reads the path in base K,
        first step most significant."""
        self._require("enumerate")
        if "inc" not in self._cache:
            n, K = self.n_steps, self.K
            idx = np.indices((K,) * n).reshape(n, -1).T
            self._cache["inc"] = self.jumps[idx]
        return self._cache["inc"]

    def paths(self) -> np.ndarray:
        """``(K**n, n+1)`` running sums starting at 0."""
        inc = self.increments()
        return np.concatenate([np.zeros((inc.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)

    def quadratic_variation(self) -> np.ndarray:
        """Running ``sum (dB)^2`` per leaf, shape ``(K**n, n+1)``."""
        inc = self.increments()
        return np.concatenate([np.zeros((inc.shape[0], 1)), np.cumsum(inc**2, axis=1)], axis=1)

    def level_values(self, leaf_values: np.ndarray, j: int) -> np.ndarray:
        """Collapse a leaf array that only depends on the first ``j`` steps."""
        return np.asarray(leaf_values).reshape(self.K**j, -1)[:, 0]

    def broadcast(self, level: np.ndarray, j: int) -> np.ndarray:
        """Spread level-``j`` node values to the leaves below them."""
        return np.repeat(np.asarray(level, dtype=float), self.K ** (self.n_steps - j))

    # --- shared recursion --------------------------------------------------

    def _one_step(self, children: np.ndarray) -> np.ndarray:
        """``children`` has shape ``(N, K)``; returns the per-node max over laws."""
        return np.max(children @ self.family.probs.T, axis=1)

    def step_back(self, values: np.ndarray, j: int) -> np.ndarray:
        """Map values at level ``j+1`` to level ``j``."""
        if self.backend == "enumerate":
            return self._one_step(np.asarray(values, dtype=float).reshape(-1, self.K))
        s = self.grid()
        shifted = s[:, None] + self.jumps[None, :]
        children = np.interp(shifted.ravel(), s, values).reshape(shifted.shape)
        return self._one_step(children)

    def grid(self) -> np.ndarray:
        """State grid of the ``grid_dp`` backend."""
        self._require("grid_dp")
        if "grid" not in self._cache:
            half = self.width * self.family.band.sigma_hi * math.sqrt(self.T)
            half += float(np.max(np.abs(self.jumps)))
            q = _lattice_step(self.family.support)
            if self.grid_nx is None and q is not None:
                h = q * math.sqrt(self.dt)
                m = int(math.ceil(half / h))
                s = np.arange(-m, m + 1) * h
            else:
                s = np.linspace(-half, half, self.grid_nx or 2001)
            self._cache["grid"] = s
        return self._cache["grid"]

    def terminal(self, phi) -> np.ndarray:
        """Terminal values: leaf array (enumerate) or grid samples (grid_dp).

        ``phi`` is a callable of the terminal sum, or (enumerate only) an
        explicit leaf array for path-dependent functionals.
        """
        if callable(phi):
            s = self.paths()[:, -1] if self.backend == "enumerate" else self.grid()
            return np.asarray(phi(s), dtype=float) * np.ones_like(s)
        if self.backend != "enumerate":
            raise ValueError("explicit leaf arrays need the enumerate backend")
        v = np.asarray(phi, dtype=float)
        if v.shape != (self.K**self.n_steps,):
            raise ValueError(f"leaf array must have shape ({self.K ** self.n_steps},)")
        return v

    def conditional(self, phi, j: int) -> np.ndarray:
        if not 0 <= j <= self.n_steps:
            raise IndexError(f"step index {j} outside [0, {self.n_steps}]")
        v = self.terminal(phi)
        for k in range(self.n_steps - 1, j - 1, -1):
            v = self.step_back(v, k)
        return v

    def expect(self, phi) -> float:
        v = self.conditional(phi, 0)
        if self.backend == "enumerate":
            return float(v[0])
        return float(np.interp(0.0, self.grid(), v))

    def _require(self, backend):
        if self.backend != backend:
            raise ValueError(f"operation needs the {backend} backend")


def dp_gexpectation(tree: GTree, phi) -> float:
    """``E[phi(S_n)]`` by backward recursion (or of a leaf array)."""
    return tree.expect(phi)


def conditional_gexp(tree: GTree, phi, j: int) -> np.ndarray:
    """``E[phi | H_j]`` as level-``j`` node values (enumerate) or grid values."""
    return tree.conditional(phi, j)


@dataclass
class CltRow:
    n: int
    value: float
    abs_error: float


def clt_table(family: IncrementFamily, phi: Callable, n_list: Sequence[int], *,
              backend: str = "grid_dp", reference: float | None = None) -> list[CltRow]:
    """``E[phi(S_n / sqrt(n))]`` for each ``n`` against the G-normal limit.

    The reference is the G-normal expectation for the family's implied band,
    computed with the general (PDE) path unless given.
    """
    from .gnormal import GNormalLaw, ShapeHint, gnormal_expect

    if reference is None:
        g = family.band
        reference = gnormal_expect(phi, ShapeHint.GENERAL, GNormalLaw(g, 1.0))
    rows = []
    for n in sorted(n_list):
        tree = GTree(family, int(n), 1.0 / n, backend=backend)
        val = tree.expect(phi)
        rows.append(CltRow(int(n), val, abs(val - reference)))
    return rows


def clt_csv(rows: Sequence[CltRow]) -> str:
    return "n,value,abs_error\n" + "".join(f"{r.n},{r.value!r},{r.abs_error!r}\n" for r in rows)


@dataclass
class SimpleProcess:
    """Piecewise-constant adapted integrand on the tree's step grid.

    ``fn(j, prefix)`` returns the value on ``[t_j, t_{j+1})`` given the jump
    matrix ``prefix`` of shape ``(N, j)``; it never sees later jumps.
    ``knots`` (step indices, starting at 0) mark where the value may change;
    between knots the last value is held.
    """

    fn: Callable[[int, np.ndarray], np.ndarray]
    knots: Sequence[int] | None = None

    @classmethod
    def constant(cls, c: float) -> "SimpleProcess":
        return cls(lambda j, prefix: np.full(prefix.shape[0], float(c)), knots=[0])

    def values(self, increments: np.ndarray) -> np.ndarray:
        """``(N, n)`` matrix of integrand values per step."""
        N, n = increments.shape
        knots = sorted(set(range(n) if self.knots is None else self.knots))
        if not knots or knots[0] != 0 or knots[-1] >= n or any(k < 0 for k in knots):
            raise ValueError("knots must start at 0 and lie on the step grid")
        out = np.empty((N, n))
        bounds = list(knots) + [n]
        for a, b in zip(bounds[:-1], bounds[1:]):
            v = np.asarray(self.fn(a, increments[:, :a].copy()), dtype=float)
            out[:, a:b] = np.broadcast_to(v, (N,))[:, None]
        return out


def discrete_ito(tree: GTree, eta: SimpleProcess) -> np.ndarray:
    """Leaf array of the left-point sum ``sum_j eta_j dB_j``."""
    inc = tree.increments()
    return np.sum(eta.values(inc) * inc, axis=1)


def discrete_ito_qv(tree: GTree, eta: SimpleProcess) -> np.ndarray:
    """Leaf array of ``sum_j eta_j (dB_j)^2`` (integral against ``d<B>``)."""
    inc = tree.increments()
    return np.sum(eta.values(inc) * inc**2, axis=1)


def isometry_check(tree: GTree, eta: SimpleProcess) -> tuple[float, float, float]:
    """``(E[(int eta dB)^2], E[int eta^2 d<B>], |difference|)``."""
    inc = tree.increments()
    xi = eta.values(inc)
    lhs = tree.expect(np.sum(xi * inc, axis=1) ** 2)
    rhs = tree.expect(np.sum(xi**2 * inc**2, axis=1))
    return lhs, rhs, abs(lhs - rhs)


def martingale_paths(tree: GTree, Z: SimpleProcess, eta: SimpleProcess, x0: float = 0.0) -> np.ndarray:
    """``M_j = x0 + sum Z dB + sum eta (dB)^2 - sum 2 G(eta) dt`` per leaf, shape ``(N, n+1)``."""
    g = tree.family.band
    inc = tree.increments()
    z, e = Z.values(inc), eta.values(inc)
    dM = z * inc + e * inc**2 - 2.0 * g.G(e) * tree.dt
    return x0 + np.concatenate([np.zeros((inc.shape[0], 1)), np.cumsum(dM, axis=1)], axis=1)


def gmartingale_check(tree: GTree, Z: SimpleProcess, eta: SimpleProcess, x0: float = 0.0) -> float:
    """Max over ``s <= t`` and nodes of ``|E[M_t | H_s] - M_s|``."""
    M = martingale_paths(tree, Z, eta, x0)
    n = tree.n_steps
    worst = 0.0
    for t in range(n + 1):
        v = tree.level_values(M[:, t], t)
        for s in range(t, -1, -1):
            if s < t:
                v = tree.step_back(v, s)
            ms = tree.level_values(M[:, s], s)
            worst = max(worst, float(np.max(np.abs(v - ms))))
    return worst


def ito_formula_residual(increments: np.ndarray, dt: float, Phi: Callable, dPhi: Callable,
                         d2Phi: Callable, *, alpha: float = 0.0, eta: float = 0.0,
                         beta: float = 1.0, x0: float = 0.0) -> float:
    """Max over paths of the gap in the Ito formula for
    ``X = x0 + alpha t + eta <B>_t + beta B_t`` with left-point sums::

        Phi(X_T) - Phi(X_0) - sum[Phi'(X) (beta dB + alpha dt)
                                  + (Phi'(X) eta + Phi''(X) beta^2 / 2) (dB)^2]

    ``increments`` is any ``(N, n)`` jump matrix (tree leaves or simulated).
    """
    inc = np.asarray(increments, dtype=float)
    dX = alpha * dt + eta * inc**2 + beta * inc
    X = x0 + np.concatenate([np.zeros((inc.shape[0], 1)), np.cumsum(dX, axis=1)], axis=1)
    Xl = X[:, :-1]
    rhs = np.sum(dPhi(Xl) * (beta * inc + alpha * dt)
                 + (dPhi(Xl) * eta + 0.5 * d2Phi(Xl) * beta**2) * inc**2, axis=1)
    lhs = Phi(X[:, -1]) - Phi(X[:, 0])
    return float(np.max(np.abs(lhs - rhs)))
