"""Finite sublinear expectation spaces and coherent risk measures.

A sublinear expectation on a finite outcome set is the upper envelope of a
finite family of probability vectors::

    E[X] = max_q  sum_i q_i X_i

Everything here works on plain numpy vectors of length ``n_outcomes``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

PROB_TOL = 1e-12


class NotSublinearError(ValueError):
    """Raised when a black-box functional cannot be represented as a max of measures."""


def _as_values(x, n: int) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.shape[0] != n:
        raise ValueError(f"random variable has shape {v.shape}, expected ({n},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("random variable has non-finite entries")
    return v


@dataclass(frozen=True)
class ScenarioSpace:
    """Finite outcome set with a finite family of probability vectors.

    Parameters
    ----------
    n_outcomes : int
        Size of the outcome set.
    measures : array_like, shape (m, n_outcomes)
        Candidate probability vectors. Validated unless built through
        :meth:`unchecked`.
    """

    n_outcomes: int
    measures: np.ndarray
    validated: bool = field(default=True, compare=False)

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.measures, dtype=float))
        object.__setattr__(self, "measures", q)
        if self.n_outcomes < 1:
            raise ValueError("n_outcomes must be positive")
        if q.size == 0 or q.shape[0] == 0:
            raise ValueError("empty measure set")
        if q.shape[1] != self.n_outcomes:
            raise ValueError(f"measures have {q.shape[1]} outcomes, expected {self.n_outcomes}")
        if self.validated:
            if np.any(q < -PROB_TOL):
                raise ValueError("measure with negative entry")
            if np.any(np.abs(q.sum(axis=1) - 1.0) > PROB_TOL):
                raise ValueError("measure entries must sum to 1")

    @classmethod
    def unchecked(cls, measures) -> "ScenarioSpace":
        """Build without the probability-vector checks (for axiom diagnostics)."""
        q = np.atleast_2d(np.asarray(measures, dtype=float))
        return cls(q.shape[1], q, validated=False)

    @property
    def n_measures(self) -> int:
        return self.measures.shape[0]

    def expect(self, x) -> float:
        return float(np.max(self.measures @ _as_values(x, self.n_outcomes)))

    def witness(self, x) -> int:
        """Index of the lowest-index maximizing measure."""
        vals = self.measures @ _as_values(x, self.n_outcomes)
        return int(np.argmax(vals))

    def to_json(self) -> str:
        return json.dumps({"n_outcomes": int(self.n_outcomes),
                           "measures": self.measures.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpace":
        d = json.loads(text)
        unknown = set(d) - {"n_outcomes", "measures"}
        if unknown:
            raise ValueError(f"unknown keys {sorted(unknown)}")
        return cls(int(d["n_outcomes"]), np.asarray(d["measures"], dtype=float))


@dataclass(frozen=True)
class ProductSpace:
    """Nested evaluator for ``Y`` independent of ``X``.

    Outcomes are pairs ``(i, j)`` flattened row-major, so a random variable
    is a vector of length ``n1 * n2`` (or an ``(n1, n2)`` matrix). The value
    is ``E1[ i -> E2[phi(i, .)] ]``; the inner maximizing measure may change
    with ``i``, which a flat measure family cannot express.
    """

    outer: "ScenarioSpace | ProductSpace"
    inner: "ScenarioSpace | ProductSpace"

    @property
    def n_outcomes(self) -> int:
        return self.outer.n_outcomes * self.inner.n_outcomes

    def expect(self, x) -> float:
        n1, n2 = self.outer.n_outcomes, self.inner.n_outcomes
        v = np.asarray(x, dtype=float)
        if v.shape == (n1, n2):
            v = v.reshape(-1)
        rows = _as_values(v, n1 * n2).reshape(n1, n2)
        inner_vals = np.array([self.inner.expect(r) for r in rows])
        return self.outer.expect(inner_vals)


def evaluate(space, x) -> float:
    """Upper expectation ``max_q E_q[x]``."""
    return space.expect(x)


@dataclass(frozen=True)
class RiskReport:
    rho: float
    acceptable: bool


def risk_measure(space, x) -> RiskReport:
    """Coherent risk measure ``rho(X) = E[-X]``; ``X`` is acceptable iff ``rho <= 0``."""
    rho = evaluate(space, -np.asarray(x, dtype=float))
    return RiskReport(rho=rho, acceptable=bool(rho <= 0.0))


@dataclass
class AxiomReport:
    """Largest observed violation of each property (0 means none seen)."""

    monotonicity: float = 0.0
    constant_preserving: float = 0.0
    subadditivity: float = 0.0
    positive_homogeneity: float = 0.0
    convexity: float = 0.0
    cash_translatability: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    def worst(self) -> float:
        return max(self.as_dict().values())

    def ok(self, tol: float = 1e-10) -> bool:
        return self.worst() <= tol


def check_axioms(space, sample_count: int = 1000, rng_seed: int = 0,
                 scale: float = 10.0) -> AxiomReport:
    """Probe the sublinear-expectation axioms on random vectors.

    Besides random pairs ``X >= Y``, each outcome is probed with ``Y = X - e_k``
    so that a negatively weighted coordinate is always exposed.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    n = space.n_outcomes
    rng = np.random.default_rng(rng_seed)
    E = space.expect
    rep = AxiomReport()

    def bump(name, v):
        setattr(rep, name, max(getattr(rep, name), float(v)))

    for _ in range(sample_count):
        x = rng.normal(scale=scale, size=n)
        y = rng.normal(scale=scale, size=n)
        lam = rng.exponential(2.0)
        c = rng.normal(scale=scale)
        a = rng.uniform()
        lower = x - np.abs(rng.normal(scale=scale, size=n))
        ex, ey = E(x), E(y)
        bump("monotonicity", E(lower) - ex)
        bump("constant_preserving", abs(E(np.full(n, c)) - c))
        bump("subadditivity", E(x + y) - ex - ey)
        bump("positive_homogeneity", abs(E(lam * x) - lam * ex))
        bump("convexity", E(a * x + (1 - a) * y) - a * ex - (1 - a) * ey)
        bump("cash_translatability", abs(E(x + c) - ex - c))
    x = rng.normal(scale=scale, size=n)
    for k in range(n):
        y = x.copy()
        y[k] -= scale
        bump("monotonicity", E(y) - E(x))
    return rep


def _supporting_measure(X: np.ndarray, vals: np.ndarray, i: int, grad: np.ndarray) -> np.ndarray:
    """Measure in the outer polytope attaining ``vals[i]`` in direction ``X[i]``,
    chosen closest (L1) to the oracle's directional gradient."""
    m, n = X.shape
    # max q.X_i over {q in simplex, q.X_j <= vals_j}
    res = linprog(-X[i], A_ub=X, b_ub=vals, A_eq=np.ones((1, n)), b_eq=[1.0],
                  bounds=[(0, None)] * n, method="highs")
    if res.status != 0:
        raise NotSublinearError(f"LP infeasible for direction {i}: {res.message}")
    if -res.fun < vals[i] - 1e-8 * (1 + abs(vals[i])):
        raise NotSublinearError(
            f"oracle value {vals[i]:.6g} not attainable by any dominated measure (max {-res.fun:.6g})")
    # min sum t  s.t. -t <= q - grad <= t, q on the optimal face
    c = np.concatenate([np.zeros(n), np.ones(n)])
    eye = np.eye(n)
    A_ub = np.vstack([
        np.hstack([X, np.zeros((m, n))]),
        np.hstack([eye, -eye]),
        np.hstack([-eye, -eye]),
    ])
    b_ub = np.concatenate([vals, grad, -grad])
    A_eq = np.vstack([
        np.concatenate([np.ones(n), np.zeros(n)]),
        np.concatenate([X[i], np.zeros(n)]),
    ])
    b_eq = [1.0, vals[i]]
    res2 = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                   bounds=[(0, None)] * (2 * n), method="highs")
    if res2.status != 0:
        return np.clip(res.x, 0, None) / np.clip(res.x, 0, None).sum()
    q = np.clip(res2.x[:n], 0, None)
    return q / q.sum()


def represent(oracle: Callable[[np.ndarray], float], n: int, direction_count: int = 200,
              rng_seed: int = 0, fd_step: float = 1e-7) -> ScenarioSpace:
    """Recover a measure family representing a sublinear functional on R^n.

    For every sampled direction the supporting measure is found by linear
    programming over the simplex cut by all observed values
    ``q . X_j <= oracle(X_j)``; among the optimal face the point nearest the
    oracle's one-sided finite-difference gradient is kept. Duplicate measures
    are merged.
    """
    rng = np.random.default_rng(rng_seed)
    X = rng.normal(size=(direction_count, n))
    vals = np.array([float(oracle(x)) for x in X])
    if not np.all(np.isfinite(vals)):
        raise NotSublinearError("oracle returned non-finite values")
    eye = np.eye(n)
    found: list[np.ndarray] = []
    for i in range(direction_count):
        grad = np.array([(float(oracle(X[i] + fd_step * eye[k])) - vals[i]) / fd_step
                         for k in range(n)])
        q = _supporting_measure(X, vals, i, grad)
        if not any(np.max(np.abs(q - p)) <= 1e-7 for p in found):
            found.append(q)
    return ScenarioSpace(n, np.array(found))


def product_space(space1, space2) -> ProductSpace:
    """Joint space of ``(X, Y)`` with ``Y`` independent of ``X``."""
    return ProductSpace(space1, space2)


def ball_space(p_values: Sequence[float] | None = None) -> ScenarioSpace:
    """Urn with white/yellow/black balls: outcomes ``(-1, 0, 1)`` with
    laws ``(p/2, 1-p, p/2)`` for ``p`` in ``p_values`` (default 0.40..0.50)."""
    if p_values is None:
        p_values = np.round(np.linspace(0.4, 0.5, 11), 12)
    p = np.asarray(p_values, dtype=float)
    return ScenarioSpace(3, np.column_stack([p / 2, 1 - p, p / 2]))
