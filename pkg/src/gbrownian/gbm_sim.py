"""Scenario simulation of G-Brownian motion.

Each volatility control ``theta`` picks one classical probability measure:
``dB = theta dW``. Taking the best of several controls gives a lower bound on
the G-expectation.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtri

from .params import GParams

BLOCK = 4096


@dataclass
class VolControl:
    """Piecewise-constant (or feedback) volatility scenario.

    ``theta[k]`` applies on ``[knots[k], knots[k+1])``. In feedback mode
    ``feedback(t, B_t, QV_t)`` returns per-path volatilities, validated
    against the band at every step.
    """

    knots: np.ndarray
    theta: np.ndarray
    band: GParams
    feedback: Callable | None = None
    name: str = ""

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.knots.ndim != 1 or self.knots.size != self.theta.size + 1:
            raise ValueError("need len(knots) == len(theta) + 1")
        if self.knots[0] != 0 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must start at 0 and increase")
        self._check(self.theta)

    def _check(self, th):
        lo, hi = self.band.sigma_lo, self.band.sigma_hi
        if np.any(th < lo - 1e-12) or np.any(th > hi + 1e-12):
            raise ValueError(f"volatility outside band [{lo}, {hi}]")

    @property
    def mode(self) -> str:
        return "feedback" if self.feedback is not None else "deterministic"

    @property
    def T(self) -> float:
        return float(self.knots[-1])

    @classmethod
    def constant(cls, theta: float, band: GParams, T: float = 1.0, name: str = "") -> "VolControl":
        return cls(np.array([0.0, T]), np.array([theta]), band, name=name or f"const({theta:g})")

    @classmethod
    def feedback_control(cls, fn: Callable, band: GParams, T: float = 1.0, name: str = "feedback"):
        return cls(np.array([0.0, T]), np.array([band.sigma_hi]), band, feedback=fn, name=name)

    def theta_at(self, t: np.ndarray) -> np.ndarray:
        k = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, self.theta.size - 1)
        return self.theta[k]

    def integrated_variance(self) -> float:
        if self.feedback is not None:
            raise ValueError("integrated variance is path dependent for feedback controls")
        return float(np.sum(self.theta**2 * np.diff(self.knots)))


def bang_bang_family(band: GParams, T: float, n_intervals: int) -> list[VolControl]:
    """All ``2**n_intervals`` controls taking band endpoints on a uniform partition."""
    knots = np.linspace(0.0, T, n_intervals + 1)
    out = []
    for bits in itertools.product((0, 1), repeat=n_intervals):
        th = np.where(np.array(bits) == 1, band.sigma_hi, band.sigma_lo)
        out.append(VolControl(knots, th, band, name="bb-" + "".join(map(str, bits))))
    return out


@dataclass
class PathBundle:
    times: np.ndarray
    B: np.ndarray
    QV: np.ndarray
    seed: int
    control_id: str
    band: GParams

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.B, axis=1)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_id", "t", "B", "QV"])
            for p in range(self.B.shape[0]):
                for k, t in enumerate(self.times):
                    w.writerow([p, repr(float(t)), repr(float(self.B[p, k])), repr(float(self.QV[p, k]))])

    def summary(self) -> dict:
        bt = self.B[:, -1]
        qv = self.QV[:, -1]
        rep = quadratic_variation_stats(self)
        return {
            "control": self.control_id, "seed": self.seed, "n_paths": int(self.B.shape[0]),
            "n_steps": int(self.B.shape[1] - 1), "T": float(self.times[-1]),
            "B_T_mean": float(bt.mean()), "B_T_var": float(bt.var(ddof=1)) if bt.size > 1 else 0.0,
            "QV_T_mean": float(qv.mean()), "QV_T_min": float(qv.min()), "QV_T_max": float(qv.max()),
            "qv_band_violation_fraction": rep.violation_fraction,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def _normals(seed: int, n_paths: int, n_steps: int) -> np.ndarray:
    """Standard normals via inverse CDF; block ``b`` of ``BLOCK`` paths draws from
    ``SeedSequence(seed, spawn_key=(b,))`` so results do not depend on how the
    work is split."""
    out = np.empty((n_paths, n_steps))
    for b, start in enumerate(range(0, n_paths, BLOCK)):
        stop = min(start + BLOCK, n_paths)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(b,))))
        u = rng.random((BLOCK, n_steps))[: stop - start]
        out[start:stop] = ndtri(np.where(u == 0.0, np.finfo(float).tiny, u))
    return out


def sample_paths(control: VolControl, n_paths: int, n_steps: int, seed: int = 0) -> PathBundle:
    """Simulate ``dB_k = theta_k sqrt(dt) eps_k`` on a uniform grid over ``[0, T]``."""
    if n_steps < control.theta.size:
        raise ValueError("n_steps must resolve the control partition")
    T = control.T
    times = np.linspace(0.0, T, n_steps + 1)
    dt = T / n_steps
    eps = _normals(seed, n_paths, n_steps)
    B = np.zeros((n_paths, n_steps + 1))
    if control.feedback is None:
        th = control.theta_at(times[:-1])
        dB = eps * (th * math.sqrt(dt))[None, :]
        B[:, 1:] = np.cumsum(dB, axis=1)
        QV = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(dB**2, axis=1)], axis=1)
    else:
        QV = np.zeros_like(B)
        for k in range(n_steps):
            th = np.broadcast_to(np.asarray(control.feedback(times[k], B[:, k], QV[:, k]), dtype=float),
                                 (n_paths,))
            control._check(th)
            dB = th * math.sqrt(dt) * eps[:, k]
            B[:, k + 1] = B[:, k] + dB
            QV[:, k + 1] = QV[:, k] + dB**2
    return PathBundle(times, B, QV, seed, control.name, control.band)


def gaussian_payoff_mean(phi: Callable, var: float) -> float:
    """``E[phi(N(0, var))]`` by adaptive quadrature."""
    if var <= 0:
        return float(np.asarray(phi(np.zeros(1)), dtype=float)[0])
    sd = math.sqrt(var)
    f = lambda z: float(np.asarray(phi(np.array([sd * z])), dtype=float)[0]) \
        * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    pts = np.linspace(-12, 12, 49)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        v, _ = integrate.quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-12)
        total += v
    return total


@dataclass
class ScenarioBound:
    lower_bound: float
    argmax: str
    values: dict = field(default_factory=dict)


def scenario_sup(phi: Callable, controls: Sequence[VolControl], estimator: str = "exact_gauss",
                 n_paths: int = 100_000, n_steps: int = 64, seed: int = 0) -> ScenarioBound:
    """Best expected payoff ``phi(B_T)`` over the scenario set (a lower bound
    on ``E[phi(B_T)]``). Ties go to the first control listed."""
    if not controls:
        raise ValueError("empty control list")
    vals = {}
    best, arg = -math.inf, None
    for c in controls:
        if estimator == "exact_gauss":
            v = gaussian_payoff_mean(phi, c.integrated_variance())
        elif estimator == "mc":
            bundle = sample_paths(c, n_paths, max(n_steps, c.theta.size), seed)
            v = float(np.mean(phi(bundle.B[:, -1])))
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        vals[c.name] = v
        if v > best:
            best, arg = v, c.name
    return ScenarioBound(best, arg, vals)


@dataclass
class QVReport:
    violation_fraction: float
    max_excess: float
    qv_T_mean: float
    qv_T_std: float
    qv_T_quantiles: dict


def quadratic_variation_stats(bundle: PathBundle) -> QVReport:
    """Check ``s_lo^2 t - tol <= QV_t <= s_hi^2 t + tol`` per path with
    ``tol = 6 s_hi^2 sqrt(dt t)``."""
    g = bundle.band
    t = bundle.times[None, :]
    tol = 6.0 * g.var_hi * np.sqrt(bundle.dt * t)
    lo_gap = g.var_lo * t - tol - bundle.QV
    hi_gap = bundle.QV - g.var_hi * t - tol
    excess = np.maximum(lo_gap, hi_gap)
    bad = np.any(excess > 0, axis=1)
    qv = bundle.QV[:, -1]
    qs = {str(q): float(np.quantile(qv, q)) for q in (0.01, 0.25, 0.5, 0.75, 0.99)}
    return QVReport(float(bad.mean()), float(max(0.0, excess.max())), float(qv.mean()),
                    float(qv.std(ddof=1)) if qv.size > 1 else 0.0, qs)


def pathwise_ito(bundle: PathBundle, eta: Callable) -> np.ndarray:
    """Left-point sums ``sum_k eta(t_k, B[:, :k+1]) dB_k`` per path.

    ``eta(t, prefix)`` sees the path only up to ``t`` (``prefix`` has shape
    ``(n_paths, k+1)``).
    """
    dB = bundle.increments
    out = np.zeros(bundle.B.shape[0])
    for k in range(dB.shape[1]):
        e = np.broadcast_to(np.asarray(eta(bundle.times[k], bundle.B[:, : k + 1]), dtype=float),
                            out.shape)
        out += e * dB[:, k]
    return out
