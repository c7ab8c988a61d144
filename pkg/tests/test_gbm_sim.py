import json
import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from gbrownian import gbm_sim, gnormal, pde_engine
from gbrownian.params import GParams, GridSpec

G = GParams(0.5, 1.0)


def test_zero_vol_paths_are_flat():
    c = gbm_sim.VolControl.constant(0.0, GParams(0.0, 1.0))
    b = gbm_sim.sample_paths(c, 10, 8, 0)
    assert np.all(b.B == 0) and np.all(b.QV == 0)


def test_out_of_band_rejected():
    with pytest.raises(ValueError):
        gbm_sim.VolControl.constant(1.5, G)
    ctl = gbm_sim.VolControl.feedback_control(lambda t, b, q: np.full(b.shape, 2.0), G)
    with pytest.raises(ValueError):
        gbm_sim.sample_paths(ctl, 4, 4, 0)


def test_terminal_variance():
    b = gbm_sim.sample_paths(gbm_sim.VolControl.constant(1.0, G, 2.0), 100_000, 8, seed=1)
    bt = b.B[:, -1]
    se = 2.0 * math.sqrt(2 / (bt.size - 1))
    assert abs(bt.var(ddof=1) - 2.0) <= 3 * se


def test_bundle_invariants():
    b = gbm_sim.sample_paths(gbm_sim.VolControl.constant(0.7, G), 50, 16, seed=2)
    assert np.all(b.B[:, 0] == 0) and np.all(b.QV[:, 0] == 0)
    assert np.all(np.diff(b.QV, axis=1) >= 0)
    # equal up to the rounding of the running sums
    tol = 4 * np.finfo(float).eps * max(1.0, float(b.QV.max()))
    np.testing.assert_allclose(np.diff(b.QV, axis=1), b.increments**2, rtol=0, atol=tol)


def test_determinism_and_block_independence():
    c = gbm_sim.VolControl.constant(0.8, G)
    a = gbm_sim.sample_paths(c, 5000, 10, seed=9)
    b = gbm_sim.sample_paths(c, 5000, 10, seed=9)
    np.testing.assert_array_equal(a.B, b.B)
    head = gbm_sim.sample_paths(c, 100, 10, seed=9)
    np.testing.assert_array_equal(head.B, a.B[:100])
    assert not np.array_equal(gbm_sim.sample_paths(c, 100, 10, seed=10).B, head.B)


def test_feedback_control_stays_in_band():
    ctl = gbm_sim.VolControl.feedback_control(
        lambda t, b, q: np.where(b >= 0, G.sigma_hi, G.sigma_lo), G)
    b = gbm_sim.sample_paths(ctl, 2000, 64, seed=3)
    rep = gbm_sim.quadratic_variation_stats(b)
    assert rep.violation_fraction <= 0.05
    assert G.var_lo <= rep.qv_T_mean <= G.var_hi


def test_qv_concentrates():
    b = gbm_sim.sample_paths(gbm_sim.VolControl.constant(0.5, G), 20_000, 32, seed=4)
    qv = b.QV[:, -1]
    assert abs(qv.mean() - 0.25) <= 3 * qv.std(ddof=1) / math.sqrt(qv.size)
    ctl = gbm_sim.VolControl(np.array([0.0, 0.5, 1.0]), np.array([0.5, 1.0]), G)
    b = gbm_sim.sample_paths(ctl, 20_000, 32, seed=5)
    qv = b.QV[:, -1]
    assert abs(qv.mean() - ctl.integrated_variance()) <= 3 * qv.std(ddof=1) / math.sqrt(qv.size)


def test_qv_matches_u_law_for_monotone_payoff():
    phi = lambda v: np.sqrt(v) + v
    fam = gbm_sim.bang_bang_family(G, 1.0, 2)
    best = max(np.mean(phi(gbm_sim.sample_paths(c, 20_000, 32, seed=6).QV[:, -1])) for c in fam)
    law = gnormal.ULaw(G.mean_params(), 1.0)
    assert best == pytest.approx(gnormal.u_expect(phi, law), abs=0.02)


def test_scenario_sup_convex_concave():
    law = gnormal.GNormalLaw(G, 1.0)
    pair = [gbm_sim.VolControl.constant(0.5, G, name="lo"), gbm_sim.VolControl.constant(1.0, G, name="hi")]
    call = lambda x: np.maximum(x - 0.1, 0.0)
    r = gbm_sim.scenario_sup(call, pair)
    assert r.argmax == "hi"
    assert r.lower_bound == pytest.approx(gnormal.gnormal_expect(call, "convex", law), abs=1e-6)
    conc = lambda x: -np.abs(x)
    r = gbm_sim.scenario_sup(conc, pair)
    assert r.argmax == "lo"
    assert r.lower_bound == pytest.approx(gnormal.gnormal_expect(conc, "concave", law), abs=1e-6)


def test_scenario_sup_refinement_and_pde():
    phi = lambda x: np.minimum(np.abs(x), 1.0)
    pde = pde_engine.solve_gheat(phi, G, GridSpec.centered(G, 1.0, nx=801)).at(0.0)
    coarse = gbm_sim.scenario_sup(phi, gbm_sim.bang_bang_family(G, 1.0, 3)).lower_bound
    fine = gbm_sim.scenario_sup(phi, gbm_sim.bang_bang_family(G, 1.0, 6)).lower_bound
    assert coarse <= fine + 1e-12
    assert fine <= pde + 2e-3


def test_scenario_sup_mc_and_errors():
    pair = [gbm_sim.VolControl.constant(1.0, G)]
    r = gbm_sim.scenario_sup(lambda x: x**2, pair, estimator="mc", n_paths=50_000, n_steps=4, seed=1)
    assert r.lower_bound == pytest.approx(1.0, abs=0.03)
    with pytest.raises(ValueError):
        gbm_sim.scenario_sup(lambda x: x, [])
    with pytest.raises(ValueError):
        gbm_sim.scenario_sup(lambda x: x, pair, estimator="nope")


def test_pathwise_ito_examples():
    b = gbm_sim.sample_paths(gbm_sim.VolControl.constant(0.9, G), 500, 32, seed=7)
    np.testing.assert_allclose(gbm_sim.pathwise_ito(b, lambda t, p: 1.0), b.B[:, -1], atol=1e-12)
    ibdb = gbm_sim.pathwise_ito(b, lambda t, p: p[:, -1])
    np.testing.assert_allclose(ibdb, 0.5 * b.B[:, -1] ** 2 - 0.5 * b.QV[:, -1], atol=1e-12)


def test_pathwise_ito_mean_zero_per_scenario():
    eta = lambda t, p: np.sign(p[:, -1]) + 0.5 * np.cos(t)
    for c in gbm_sim.bang_bang_family(G, 1.0, 2):
        b = gbm_sim.sample_paths(c, 100_000, 16, seed=8)
        I = gbm_sim.pathwise_ito(b, eta)
        assert abs(I.mean()) <= 3 * I.std(ddof=1) / math.sqrt(I.size)


def test_scaling_property_ks():
    lam = 4.0
    base = gbm_sim.VolControl(np.array([0.0, 0.5, 1.0]), np.array([0.5, 1.0]), G)
    stretched = gbm_sim.VolControl(base.knots * lam, base.theta, G)
    a = gbm_sim.sample_paths(base, 20_000, 16, seed=11).B[:, -1]
    b = gbm_sim.sample_paths(stretched, 20_000, 16, seed=12).B[:, -1] / math.sqrt(lam)
    assert ks_2samp(a, b).pvalue > 0.01


def test_csv_and_summary(tmp_path):
    b = gbm_sim.sample_paths(gbm_sim.VolControl.constant(1.0, G), 3, 4, seed=0)
    p = tmp_path / "paths.csv"
    b.to_csv(p)
    lines = p.read_bytes().split(b"\n")
    assert lines[0] == b"path_id,t,B,QV"
    assert len([l for l in lines if l]) == 1 + 3 * 5
    s = json.loads(b.summary_json())
    assert s["n_paths"] == 3 and s["seed"] == 0
