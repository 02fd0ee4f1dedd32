import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURE_SHARES, all_specs, fixture_logit_market
from passmat.core import pricing_terms
from passmat.demand import CES, Linear, Logit, MixedLogit, LogNormal, NestedLogit, eval_demand, shares_of
from passmat.equilibrium import default_start, foc_residual, normalized_foc, soc_check, solve_bertrand
from passmat.exceptions import NoConvergence
from passmat.market import SimulationConfig, build_market, sample_market


def linear_monopoly():
    return build_market(1, np.array([1.0]), [[0]], Linear(np.array([10.0]), np.array([[2.0]])))


def test_linear_monopoly_foc_and_solution():
    m = linear_monopoly()
    for p in (2.0, 3.0, 4.0):
        assert foc_residual(m, np.array([p]))[0] == pytest.approx(10 - 2 * p - 2 * (p - 1))
    res = solve_bertrand(m)
    assert res.p_star[0] == pytest.approx(3.0, abs=1e-10)
    assert res.converged and res.soc_ok


def test_fixture_solves_to_calibrated_prices():
    m, p_cal = fixture_logit_market()
    res = solve_bertrand(m)
    np.testing.assert_allclose(res.p_star, p_cal, atol=1e-10)
    assert np.max(np.abs(foc_residual(m, res.p_star))) < 1e-8
    ev = eval_demand(m.demand, res.p_star)
    np.testing.assert_allclose(shares_of(m.demand, res.p_star, ev), FIXTURE_SHARES, atol=1e-10)


def test_normalized_foc_dual_path():
    m = sample_market(SimulationConfig(), 3)
    p = np.linspace(1.2, 1.9, 6)
    f = normalized_foc(m, p)
    ev = eval_demand(m.demand, p)
    alt = -foc_residual(m, p) / np.diag(ev.jac)
    np.testing.assert_allclose(f, alt, rtol=1e-12, atol=1e-12)


def test_normalized_foc_single_product_form():
    m, _ = fixture_logit_market()
    p = np.array([2.0, 2.1, 1.9])
    ev = eval_demand(m.demand, p)
    expected = -ev.q / np.diag(ev.jac) - (p - m.cost)
    np.testing.assert_allclose(normalized_foc(m, p), expected, rtol=1e-13)


def test_monopoly_lerner():
    m = build_market(2, np.array([0.5, 0.7]), [[0, 1]], Logit(1.0, np.array([1.0, 0.8])))
    res = solve_bertrand(m)
    assert np.max(np.abs(normalized_foc(m, res.p_star))) <= 1e-10
    # multiproduct logit monopoly: common markup 1/(alpha s_0)
    ev = eval_demand(m.demand, res.p_star)
    s0 = 1 - ev.q.sum()
    np.testing.assert_allclose(res.p_star - m.cost, 1 / s0, rtol=1e-9)


def test_ces_single_product_markup():
    # exact single-product CES Lerner condition: (p - c)/p = 1/(sigma - (sigma - 1) w)
    sigma = 4.0
    m = build_market(3, np.array([1.0, 1.2, 0.8]), [[0], [1], [2]], CES(sigma, np.array([0.0, 0.2, -0.1])))
    res = solve_bertrand(m)
    p = res.p_star
    w = shares_of(m.demand, p, eval_demand(m.demand, p))
    np.testing.assert_allclose((p - m.cost) / p, 1 / (sigma - (sigma - 1) * w), rtol=1e-9)


def test_ces_markup_tends_to_constant_markup():
    # p -> sigma/(sigma - 1) c as expenditure shares vanish
    sigma = 4.0
    gaps = []
    for shift in (0.0, -5.0, -10.0, -20.0):
        m = build_market(3, np.array([1.0, 1.2, 0.8]), [[0], [1], [2]], CES(sigma, np.array([0.0, 0.2, -0.1]) + shift))
        p = solve_bertrand(m).p_star
        gaps.append(np.max(np.abs(p - sigma / (sigma - 1) * m.cost)))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-9


@pytest.mark.parametrize("name", ["logit", "nested_logit", "ces", "mixed_lognormal", "mixed_gamma", "linear", "aids"])
def test_solver_every_family(name):
    spec, p = all_specs()[name]
    n = spec.n_products
    cost = 0.4 * p if name in ("linear", "aids") else 0.5 * np.ones(n)
    m = build_market(n, cost, [[0, 1], [2]], spec)
    res = solve_bertrand(m)
    f = normalized_foc(m, res.p_star)
    assert np.max(np.abs(f)) <= 1e-10
    ev = eval_demand(spec, res.p_star)
    F = foc_residual(m, res.p_star)
    assert np.max(np.abs(F)) <= 1e-10 * max(1.0, np.max(np.abs(np.diag(ev.jac))))
    assert np.all(res.p_star > cost)


def test_solver_deterministic():
    m = sample_market(SimulationConfig(), 7)
    a, b = solve_bertrand(m), solve_bertrand(m)
    np.testing.assert_array_equal(a.p_star, b.p_star)
    assert a.iterations == b.iterations


def test_no_convergence_reports_result():
    m = sample_market(SimulationConfig(), 0)
    with pytest.raises(NoConvergence) as exc:
        solve_bertrand(m, max_iter=1, tol=1e-300)
    res = exc.value.args[1]
    assert not res.converged and res.iterations == 1


def test_default_start():
    m, _ = fixture_logit_market()
    np.testing.assert_allclose(default_start(m), 1.0 + 1.0 / (1.0 - 0.25))
    c = build_market(1, np.array([2.0]), [[0]], CES(3.0, np.zeros(1)))
    assert default_start(c)[0] == pytest.approx(3.0)
    assert default_start(linear_monopoly())[0] == pytest.approx(1.5)


def test_soc_linear_monopoly_margin():
    m = linear_monopoly()
    rep = soc_check(m, np.array([3.0]))
    assert rep.ok
    # kappa = 0 for linear demand so 2R - kappa = 2
    assert rep.min_directional_margin == pytest.approx(2.0)


def test_soc_complements_direction_fails():
    # q1 = 1 - p1 + 2 p2, q2 = 1 - p2 + 2 p1: v = (1, 1) raises both demands
    spec = Linear(np.array([1.0, 1.0]), np.array([[1.0, -2.0], [-2.0, 1.0]]))
    m = build_market(2, np.zeros(2), [[0, 1]], spec)
    ev = eval_demand(spec, np.array([1.0, 1.0]))
    v = np.ones(2)
    assert v @ ev.jac @ v == pytest.approx(2.0)
    rep = soc_check(m, np.array([1.0, 1.0]))
    assert not rep.ok


def test_soc_sampled_markets():
    cfg = SimulationConfig()
    for i in range(0, 100, 9):
        m = sample_market(cfg, i)
        assert solve_bertrand(m).soc_ok


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-4.0, 0.5))
def test_property_equilibrium_invariants(seed, shift):
    cfg = SimulationConfig(base_seed=seed, n_markets=1)
    m = sample_market(cfg, 0)
    m = m.with_demand(Logit(1.0, m.demand.delta + shift))
    res = solve_bertrand(m)
    assert res.converged and res.residual_norm <= 1e-10
    assert np.all(res.p_star > m.cost)
    t = pricing_terms(m.demand, m.cost, m.omega, res.p_star)
    assert np.all(t.margin / res.p_star < 1)


def test_nested_and_mixed_markup_single_product():
    for spec in (
        NestedLogit(1.0, 0.4, np.array([0, 0, 1]), np.array([1.0, 0.5, 0.2])),
        MixedLogit(LogNormal(0.0, 0.5), np.array([1.0, 0.5, 0.2]), quad_nodes=32),
    ):
        m = build_market(3, 0.5 * np.ones(3), [[0], [1], [2]], spec)
        p = solve_bertrand(m).p_star
        ev = eval_demand(spec, p)
        np.testing.assert_allclose(p - m.cost, -ev.q / np.diag(ev.jac), atol=1e-10)
