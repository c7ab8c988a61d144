"""Acceptance criteria, one test each.

Every test prints a single PASS/FAIL line (also collected in the terminal
summary) and asserts the criterion at its stated tolerance and runtime.
"""

import math
import time

import numpy as np
import pytest

from conftest import bs_call
from gbrownian import discrete_gexp as dg
from gbrownian import gbm_sim, gnormal, gsde, pde_engine
from gbrownian.params import GParams, GridSpec, MeanParams
from gbrownian.sublinear_core import ScenarioSpace, represent

G = GParams(0.5, 1.0)


def test_criterion_01_gnormal_moments_via_pde(record):
    t0 = time.perf_counter()
    grid = GridSpec(-8.0, 8.0, 801, 1.0)
    sq = pde_engine.solve_gheat(lambda x: x**2, G, grid).at(0.0)
    neg = pde_engine.solve_gheat(lambda x: -x**2, G, grid).at(0.0)
    quart = pde_engine.solve_gheat(lambda x: x**4, G, grid, growth=4).at(0.0)
    dt = time.perf_counter() - t0
    checks = [abs(sq - 1.0) <= 5e-4, abs(neg + 0.25) <= 5e-4, abs(quart - 6.0) <= 5e-3, dt < 5]
    ok = record(1, "G-normal moments via PDE", all(checks),
                f"x^2 -> {sq:.6f} (1.0), -x^2 -> {neg:.6f} (-0.25), x^4 -> {quart:.6f} (target 6.0)", dt)
    assert ok


def test_criterion_02_convex_concave_dispatch(record):
    t0 = time.perf_counter()
    convex = [lambda x: x**2, lambda x: np.abs(x), lambda x: np.maximum(x - 0.3, 0.0),
              lambda x: np.exp(0.5 * x), lambda x: np.maximum(-x - 0.5, 0.0) + 0.2 * x**2]
    concave = [lambda x: -x**2, lambda x: -np.abs(x - 0.1), lambda x: np.minimum(x, 0.2),
               lambda x: -np.cosh(0.4 * x), lambda x: np.minimum(0.0, 1 - x**2 / 4) - np.abs(x)]
    grid = GridSpec.centered(G, 1.0, nx=801)
    law = gnormal.GNormalLaw(G, 1.0)
    worst = 0.0
    for hint, battery in (("convex", convex), ("concave", concave)):
        for phi in battery:
            pde = pde_engine.solve_gheat(phi, G, grid).at(0.0)
            fast = gnormal.gnormal_expect(phi, hint, law)
            worst = max(worst, abs(pde - fast) / (5e-4 * (1 + abs(fast))))
    dt = time.perf_counter() - t0
    ok = record(2, "convex/concave dispatch", worst <= 1.0 and dt < 30,
                f"worst gap / (5e-4(1+|v|)) = {worst:.3f} over 10 payoffs", dt)
    assert ok


def test_criterion_03_quadratic_variation_law(record):
    t0 = time.perf_counter()
    m = MeanParams(0.25, 1.0)
    law = gnormal.ULaw(m, 1.0)
    cases = [(lambda v: v, 1.0), (lambda v: -v, -0.25), (lambda v: v**2, 1.0)]
    exact = [abs(gnormal.u_expect(phi, law) - target) for phi, target in cases]
    grid = GridSpec(-4.0, 4.0, 801, 1.0)
    pde = [abs(pde_engine.solve_gdrift(phi, m, grid).at(0.0) - target) for phi, target in cases]
    dt = time.perf_counter() - t0
    ok = record(3, "quadratic-variation law", max(exact) <= 1e-12 and max(pde) <= 2 * grid.dx and dt < 2,
                f"closed-form max err {max(exact):.1e}, drift PDE max err {max(pde):.2e} (2dx = {2 * grid.dx:.2e})",
                dt)
    assert ok


def test_criterion_04_sublinear_clt(record):
    t0 = time.perf_counter()
    fam = dg.IncrementFamily.ball(np.linspace(0.4, 0.5, 11))
    phi = lambda x: np.minimum(np.abs(x), 2.0)
    band = GParams(math.sqrt(0.4), math.sqrt(0.5))
    ref = gnormal.gnormal_expect(phi, "general", gnormal.GNormalLaw(band, 1.0))
    rows = dg.clt_table(fam, phi, [4, 16, 64, 256], backend="grid_dp", reference=ref)
    errs = [r.abs_error for r in rows]
    dt = time.perf_counter() - t0
    decreasing = all(a > b for a, b in zip(errs, errs[1:]))
    ok = record(4, "sublinear CLT", decreasing and errs[-1] < 0.02 and dt < 60,
                "errors " + ", ".join(f"{e:.2e}" for e in errs), dt)
    assert ok


def _adapted_battery(seed: int = 7):
    """Five bounded adapted integrands on the step grid."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=6)

    def rand_fn(j, prefix):
        return np.tanh(w[j] + prefix.sum(axis=1) * (1 + w[j])) if j else np.full(prefix.shape[0], w[0])

    return [
        dg.SimpleProcess.constant(1.0),
        dg.SimpleProcess(lambda j, p: np.full(p.shape[0], (-1.0) ** j * (1 + j)), knots=list(range(6))),
        dg.SimpleProcess(lambda j, p: np.sign(p.sum(axis=1))),
        dg.SimpleProcess(lambda j, p: np.cos(3 * p.sum(axis=1)) + (p[:, -1] if j else 0.0)),
        dg.SimpleProcess(rand_fn),
    ]


def test_criterion_05_ito_identities(record):
    t0 = time.perf_counter()
    tree = dg.GTree(dg.IncrementFamily.binomial([0.5, 1.0]), 6, 1.0 / 6)
    battery = _adapted_battery()
    mean_gap = iso_gap = mart_gap = 0.0
    for eta in battery:
        I = dg.discrete_ito(tree, eta)
        mean_gap = max(mean_gap, abs(tree.expect(I)), abs(tree.expect(-I)))
        iso_gap = max(iso_gap, dg.isometry_check(tree, eta)[2])
    for Z, eta in zip(battery, battery[::-1]):
        mart_gap = max(mart_gap, dg.gmartingale_check(tree, Z, eta, 0.3))
    dt = time.perf_counter() - t0
    ok = record(5, "Ito identities on the tree",
                max(mean_gap, iso_gap, mart_gap) <= 1e-12 and dt < 5,
                f"mean {mean_gap:.1e}, isometry {iso_gap:.1e}, G-martingale {mart_gap:.1e}", dt)
    assert ok


def test_criterion_06_conditional_expectation_laws(record):
    t0 = time.perf_counter()
    tree = dg.GTree(dg.IncrementFamily.binomial([0.5, 1.0]), 5, 0.2)
    rng = np.random.default_rng(2024)
    n_leaf = tree.K**tree.n_steps
    cond = tree.conditional
    worst = 0.0
    for _ in range(100):
        X = rng.normal(size=n_leaf)
        Y = X - np.abs(rng.normal(size=n_leaf))
        s, t = sorted(rng.integers(0, tree.n_steps + 1, size=2))
        cx_t = cond(X, t)
        # tower
        worst = max(worst, np.max(np.abs(cond(tree.broadcast(cx_t, t), s) - cond(X, s))))
        # (a') monotonicity
        worst = max(worst, np.max(np.maximum(cond(Y, t) - cx_t, 0.0)))
        # (b') measurable part passes through
        eta_lvl = rng.normal(size=tree.K**t)
        eta = tree.broadcast(eta_lvl, t)
        worst = max(worst, np.max(np.abs(cond(eta, t) - eta_lvl)))
        worst = max(worst, np.max(np.abs(cond(X + eta, t) - cx_t - eta_lvl)))
        # (c') subadditivity
        Z = rng.normal(size=n_leaf)
        worst = max(worst, np.max(np.maximum(cond(X + Z, t) - cx_t - cond(Z, t), 0.0)))
        # (d') multiplication by a measurable factor
        rhs = np.maximum(eta_lvl, 0) * cx_t + np.maximum(-eta_lvl, 0) * cond(-X, t)
        worst = max(worst, np.max(np.abs(cond(eta * X, t) - rhs)))
    dt = time.perf_counter() - t0
    ok = record(6, "conditional-expectation laws", worst <= 1e-12 and dt < 10,
                f"max gap {worst:.1e} over 100 random payoffs", dt)
    assert ok


def test_criterion_07_scenario_lower_bound(record):
    t0 = time.perf_counter()
    phi = lambda x: np.minimum(np.abs(x), 1.0)
    fam = gbm_sim.bang_bang_family(G, 1.0, 6)
    bound = gbm_sim.scenario_sup(phi, fam).lower_bound
    pde = pde_engine.solve_gheat(phi, G, GridSpec.centered(G, 1.0, nx=801)).at(0.0)
    law = gnormal.GNormalLaw(G, 1.0)
    call = lambda x: np.maximum(x - 0.2, 0.0)
    cap = lambda x: -np.abs(x)
    g_convex = abs(gbm_sim.scenario_sup(call, fam).lower_bound - gnormal.gnormal_expect(call, "convex", law))
    g_concave = abs(gbm_sim.scenario_sup(cap, fam).lower_bound - gnormal.gnormal_expect(cap, "concave", law))
    dt = time.perf_counter() - t0
    ok = record(7, "scenario lower bound",
                bound <= pde + 2e-3 and max(g_convex, g_concave) <= 1e-6 and dt < 20,
                f"bound {bound:.6f} <= PDE {pde:.6f}; convex gap {g_convex:.1e}, concave gap {g_concave:.1e}", dt)
    assert ok


def test_criterion_08_sde_picard(record):
    t0 = time.perf_counter()
    spec = gsde.SdeSpec(sigma=lambda x: x, K=1.0, x0=1.0, T=1.0)
    bundle = gbm_sim.sample_paths(gbm_sim.VolControl.constant(1.0, G, 1.0), 4000, 50, seed=3)
    backend = gsde.PathBackend(bundle)
    tol = 1e-8
    a = gsde.sde_picard(spec, backend, tol=tol)
    b = gsde.sde_picard(spec, backend, tol=tol, init=np.exp(bundle.B))
    ratios = a.ratios + b.ratios
    dist = gsde.picard_distance(a, b, backend)
    dt = time.perf_counter() - t0
    ok = record(8, "SDE Picard", max(ratios) <= 0.6 and dist <= 2 * tol and dt < 30,
                f"max ratio {max(ratios):.3f}, distance between starts {dist:.1e}", dt)
    assert ok


def test_criterion_09_bid_ask(record):
    t0 = time.perf_counter()
    sde = gsde.SdeSpec(sigma=lambda x: x, K=1.0, x0=1.0, T=1.0)
    quote = gsde.bid_ask(lambda x: np.maximum(x - 1.0, 0.0), sde, (0.25, 1.0))
    ask_ref, bid_ref = bs_call(1.0, 1.0, 1.0, 1.0), bs_call(1.0, 1.0, 1.0, 0.5)
    mid = bs_call(1.0, 1.0, 1.0, 0.75)
    rel_a, rel_b = abs(quote.ask / ask_ref - 1), abs(quote.bid / bid_ref - 1)
    dt = time.perf_counter() - t0
    ok = record(9, "bid-ask", rel_a <= 1e-3 and rel_b <= 1e-3 and quote.bid <= mid <= quote.ask and dt < 10,
                f"[{quote.bid:.6f}, {quote.ask:.6f}] vs BS [{bid_ref:.6f}, {ask_ref:.6f}], mid {mid:.6f}", dt)
    assert ok


def test_criterion_10_comparison_domination(record):
    t0 = time.perf_counter()
    grid = GridSpec(-6.0, 6.0, 241, 1.0)
    pairs = [
        (lambda x: np.maximum(x, 0.0), lambda x: np.maximum(x, 0.0), GParams(0.2, 1.0), GParams(0.4, 0.8)),
        (lambda x: x**2 + 0.1, lambda x: x**2, GParams(0.3, 1.0), GParams(0.5, 0.9)),
        (lambda x: np.abs(x), lambda x: np.minimum(np.abs(x), 1.0), GParams(0.0, 1.2), GParams(0.5, 1.0)),
        (lambda x: np.sin(x) + 1.0, lambda x: np.sin(x), GParams(0.5, 1.0), GParams(0.5, 1.0)),
        (lambda x: -np.abs(x) + 0.5, lambda x: -x**2 / 8 - np.abs(x), GParams(0.1, 0.9), GParams(0.6, 0.7)),
    ]
    order = max(pde_engine.comparison_check(p1, p2, g1, g2, grid) for p1, p2, g1, g2 in pairs)
    rng = np.random.default_rng(11)
    dom, slack = 0.0, math.inf
    phi1 = lambda x: np.minimum(np.abs(x), 2.0)
    for _ in range(5):
        knots = np.sort(rng.uniform(-4, 4, size=4))
        vals = rng.normal(size=4)
        psi = lambda x, k=knots, v=vals: np.interp(x, k, v)
        rep = pde_engine.domination_check(G, G, psi, phi1, lambda x, p=psi: phi1(x) + p(x), grid)
        dom = max(dom, rep.violation)
        slack = min(slack, rep.slack_interior)
    dt = time.perf_counter() - t0
    ok = record(10, "comparison/domination harness",
                order <= 1e-12 and dom <= grid.dx and slack >= -grid.dx and dt < 30,
                f"ordering violation {order:.1e}, domination violation {dom:.1e}, min slack {slack:.1e}", dt)
    assert ok


def test_criterion_11_representation_roundtrip(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    space = ScenarioSpace(6, rng.dirichlet(np.ones(6), size=4))
    rec = represent(space.expect, 6, direction_count=200, rng_seed=1)
    fresh = rng.normal(size=(1000, 6))
    err = max(abs(rec.expect(x) - space.expect(x)) for x in fresh)
    dt = time.perf_counter() - t0
    ok = record(11, "representation round-trip", err <= 1e-6 and dt < 5,
                f"sup error {err:.1e} on 1000 fresh vectors, {rec.n_measures} measures", dt)
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
