import json
import math

import numpy as np
import pytest

from conftest import bs_call
from gbrownian import discrete_gexp as dg
from gbrownian import gbm_sim, gsde
from gbrownian.params import GParams, GridSpec

G = GParams(0.5, 1.0)


def _paths(theta=1.0, n_paths=4000, n_steps=50, seed=0):
    return gbm_sim.sample_paths(gbm_sim.VolControl.constant(theta, G), n_paths, n_steps, seed)


def test_zero_coefficients_one_iteration():
    res = gsde.sde_picard(gsde.SdeSpec(x0=2.0), gsde.PathBackend(_paths(n_paths=10)))
    assert len(res.norms) == 1 and res.norms[0] == 0.0
    assert np.all(res.X == 2.0)


def test_linear_sde_is_euler_product():
    bundle = _paths(theta=0.8, n_paths=20_000, n_steps=40, seed=1)
    res = gsde.sde_picard(gsde.SdeSpec(sigma=lambda x: x, K=1.0, x0=1.5), gsde.PathBackend(bundle), tol=1e-28)
    euler = 1.5 * np.prod(1 + bundle.increments, axis=1)
    np.testing.assert_allclose(res.X[:, -1], euler, rtol=1e-8)
    # scenario oracle: E[X_T^2] = x0^2 (1 + theta^2 dt)^n for Euler, e^{theta^2 T} in the limit
    m2 = res.X[:, -1] ** 2
    euler_m2 = 1.5**2 * (1 + 0.64 / 40) ** 40
    assert abs(m2.mean() - euler_m2) <= 3 * m2.std(ddof=1) / math.sqrt(m2.size)
    assert abs(euler_m2 - 1.5**2 * math.exp(0.64)) <= 1.5**2 * 0.64**2 / 40 * math.exp(0.64)


def test_picard_ratios_and_uniqueness():
    spec = gsde.SdeSpec(b=lambda x: 0.2 * np.sin(x), h=lambda x: 0.3 * x, sigma=lambda x: 0.5 * x + 0.1,
                        K=1.0, x0=1.0)
    backend = gsde.PathBackend(_paths(seed=2))
    a = gsde.sde_picard(spec, backend, tol=1e-8)
    b = gsde.sde_picard(spec, backend, tol=1e-8, init=3.0)
    assert max(a.ratios) <= 0.6 and max(b.ratios) <= 0.6
    assert gsde.picard_distance(a, b, backend) <= 2e-8


def test_picard_tree_backend():
    tree = dg.GTree(dg.IncrementFamily.binomial([0.5, 1.0]), 6, 1 / 6)
    spec = gsde.SdeSpec(sigma=lambda x: x, h=lambda x: 0.5 * x, K=1.0, x0=1.0)
    res = gsde.sde_picard(spec, gsde.TreeBackend(tree), tol=1e-10)
    assert max(res.ratios) <= 0.6
    assert res.X.shape == (tree.K**6, 7)


def test_picard_max_iter():
    spec = gsde.SdeSpec(sigma=lambda x: x, K=1.0, x0=1.0)
    with pytest.raises(gsde.PicardDivergenceError):
        gsde.sde_picard(spec, gsde.PathBackend(_paths(n_paths=100)), tol=1e-30, max_iter=3)


def test_picard_log_csv():
    res = gsde.sde_picard(gsde.SdeSpec(sigma=lambda x: x, K=1.0, x0=1.0), gsde.PathBackend(_paths(n_paths=50)))
    lines = res.log_csv().splitlines()
    assert lines[0].startswith("iteration")
    assert len(lines) == 1 + len(res.norms)


TREE = dg.GTree(dg.IncrementFamily.binomial([0.5, 1.0]), 6, 1 / 6)
XI = lambda s: np.maximum(s - 0.2, 0.0) - 0.5 * np.abs(s)


def test_bsde_zero_driver_is_conditional():
    Y = gsde.bsde_solve(gsde.BsdeSpec(XI), TREE)
    for j in range(TREE.n_steps + 1):
        np.testing.assert_allclose(Y[j], TREE.conditional(XI, j), atol=1e-14)


def test_bsde_constant_driver_translates():
    c = 0.7
    Y = gsde.bsde_solve(gsde.BsdeSpec(XI, lambda t, y: c + 0 * y), TREE)
    for j in range(TREE.n_steps + 1):
        np.testing.assert_allclose(Y[j], TREE.conditional(XI, j) + c * (TREE.T - j * TREE.dt), atol=1e-12)


def test_bsde_self_convergence():
    lam = 0.8
    spec = gsde.BsdeSpec(lambda s: np.minimum(np.abs(s), 1.0), lambda t, y: -lam * y, k=lam)
    fam = dg.IncrementFamily.binomial([0.5, 1.0])
    vals = [gsde.bsde_value(spec, dg.GTree(fam, n, 1 / n, backend="grid_dp")) for n in (16, 32, 64)]
    assert abs(vals[2] - vals[1]) <= 2 * abs(vals[1] - vals[0])


def test_bsde_driver_comparison(rng):
    for _ in range(5):
        a, b = rng.normal(size=2)
        f2 = lambda t, y, a=a: a * np.sin(y)
        f1 = lambda t, y, a=a, b=b: a * np.sin(y) + abs(b)
        y1 = gsde.bsde_value(gsde.BsdeSpec(XI, f1, k=abs(a)), TREE)
        y2 = gsde.bsde_value(gsde.BsdeSpec(XI, f2, k=abs(a)), TREE)
        assert y1 >= y2 - 1e-10


def test_bsde_non_contraction():
    with pytest.raises(ValueError):
        gsde.bsde_solve(gsde.BsdeSpec(XI, lambda t, y: -10 * y, k=10.0), TREE)


def test_fk_constant_payoff():
    sde = gsde.SdeSpec(b=lambda x: 0.1 * x, sigma=lambda x: 1 + 0 * x, K=1.0, x0=0.3)
    p = gsde.feynman_kac_price(sde, (0.25, 1.0), lambda x: 0 * x + 4.0)
    assert p.value == pytest.approx(4.0, abs=1e-12)
    assert p.gap <= 1e-12


def test_fk_scaled_volatility_call():
    sde = gsde.SdeSpec(sigma=lambda x: 0.8 * x, K=1.0, x0=1.0)
    p = gsde.feynman_kac_price(sde, (0.25, 1.0), lambda x: np.maximum(x - 1.0, 0.0), tree_levels=None)
    assert p.value == pytest.approx(bs_call(1.0, 1.0, 1.0, 0.8), rel=1e-3)


@pytest.mark.parametrize("payoff", [np.sin, np.cos, np.tanh, lambda x: np.exp(-x**2)],
                         ids=["sin", "cos", "tanh", "gauss"])
def test_fk_pde_tree_gap(payoff):
    sde = gsde.SdeSpec(b=lambda x: 0.1 * np.cos(x), sigma=lambda x: 0.8 + 0.2 * np.sin(x), K=1.0, x0=0.2)
    grid = GridSpec(-7.0, 7.0, 401, 1.0)
    p = gsde.feynman_kac_price(sde, (0.25, 1.0), payoff, grid=grid, tree_levels=10)
    assert p.gap <= 5e-3


LOGNORMAL = gsde.SdeSpec(sigma=lambda x: x, K=1.0, x0=1.0)
CALL = lambda x: np.maximum(x - 1.0, 0.0)


def test_bid_ask_linear_payoff():
    q = gsde.bid_ask(lambda x: x, LOGNORMAL, (0.25, 1.0))
    assert q.bid == pytest.approx(1.0, abs=1e-9) and q.ask == pytest.approx(1.0, abs=1e-9)


def test_bid_ask_call_and_probe():
    q = gsde.bid_ask(CALL, LOGNORMAL, (0.25, 1.0), probe_vols=[0.5, 0.75, 1.0])
    assert q.ask == pytest.approx(bs_call(1, 1, 1, 1.0), rel=1e-3)
    assert q.bid == pytest.approx(bs_call(1, 1, 1, 0.5), rel=1e-3)
    assert all(p["inside"] for p in q.probes.values())
    assert q.probes["0.75"]["price"] == pytest.approx(bs_call(1, 1, 1, 0.75), abs=5e-4)


def test_band_widening_widens_quote():
    narrow = gsde.bid_ask(CALL, LOGNORMAL, (0.36, 0.64))
    wide = gsde.bid_ask(CALL, LOGNORMAL, (0.16, 1.0))
    assert wide.bid <= narrow.bid + 1e-12 and wide.ask >= narrow.ask - 1e-12


def test_degenerate_band_is_classical():
    q = gsde.bid_ask(CALL, LOGNORMAL, (0.49, 0.49))
    ref = bs_call(1, 1, 1, 0.7)
    assert abs(q.ask - ref) <= 5e-4 and abs(q.bid - ref) <= 5e-4
    assert q.ask - q.bid <= 1e-12


def test_quote_json_and_order():
    q = gsde.bid_ask(CALL, LOGNORMAL, (0.25, 1.0))
    d = json.loads(q.to_json())
    assert {"bid", "ask", "method", "grid_meta"} <= set(d)
    with pytest.raises(ValueError):
        gsde.PriceQuote(1.0, 0.5, "x", {})
