import math

import numpy as np
import pytest

from regime_harvest.errors import GridTooCoarse, ParameterMismatch
from regime_harvest.hjb_oracle import compare_policies, solve_hjb
from regime_harvest.model_core import MarketParams, ResourceParams, derive_constants
from regime_harvest.policy import build_policy


@pytest.fixture(scope="module")
def surface_solution():
    market = MarketParams(5.0, 0.75, 1.25, 0.5, 0.02)
    resource = ResourceParams(6.0, 3.25, 10.0)
    return solve_hjb(market, resource, 0.0, 10.0, 40.0, 401, 1000)


def test_residual_and_shape(surface_solution):
    sol = surface_solution
    assert sol.pde_residual < 1e-4
    assert np.all(sol.V[:, 0] == 0.0)
    assert np.all(np.diff(sol.V, axis=1) >= -1e-12)
    assert np.all(sol.V >= 0)
    assert np.all(sol.V[-1] == 0.0)


def test_policy_consistent_with_value_gradient(surface_solution):
    sol = surface_solution
    m = sol.market
    vx = sol.value_gradient()
    lo = (m.a - np.max(vx)) / m.slope
    assert np.all(sol.q >= 0)
    assert np.all(sol.q <= m.a / m.slope + abs(min(vx.min(), 0.0)) / m.slope + 1e-12)
    # every interior q is the clamped maximizer for one of the one-sided gradients
    h = sol.x_grid[1]
    dB = np.diff(sol.V, axis=1) / h
    dF = np.concatenate([dB[:, 1:], np.zeros((dB.shape[0], 1))], axis=1)
    qB = np.maximum((m.a - dB) / m.slope, 0)
    qF = np.maximum((m.a - dF) / m.slope, 0)
    q = sol.q[:, 1:]
    drift = sol.drift
    match = np.isclose(q, qB) | np.isclose(q, qF) | np.isclose(q, max(drift, 0.0))
    assert match.all()
    assert lo <= np.max(sol.q)


def test_far_field_matches_stock_free_value(surface_solution):
    sol = surface_solution
    m = sol.market
    profit = float(m.profit(m.qm))
    tau = sol.horizon - sol.t_grid
    stock_free = profit * (-np.expm1(-m.rho * tau)) / m.rho
    np.testing.assert_allclose(sol.V[:, -1], stock_free, rtol=2e-3, atol=1e-6)
    far = sol.q[0, sol.x_grid > 30]
    assert np.max(np.abs(far - m.qm)) < 1e-3


def test_interior_q_near_monopoly_where_rent_vanishes(surface_solution):
    sol = surface_solution
    m = sol.market
    vx = sol.value_gradient()[0]
    interior = (sol.x_grid > 0.1 * sol.x_grid[-1]) & (sol.x_grid < 0.9 * sol.x_grid[-1])
    flat = interior & (np.abs(vx) < 1e-3 * m.slope)
    assert flat.any()
    assert np.max(np.abs(sol.q[0, flat] - m.qm)) < 1e-3


def test_refinement_converges():
    market = MarketParams(5.0, 0.75, 1.25, 0.5, 0.02)
    resource = ResourceParams(6.0, 3.25, 10.0)
    vals = []
    for nx, nt in ((51, 50), (101, 100), (201, 200)):
        sol = solve_hjb(market, resource, 0.0, 5.0, 20.0, nx, nt)
        vals.append(np.interp(5.0, sol.x_grid, sol.V[0]))
    assert abs(vals[2] - vals[1]) < 0.6 * abs(vals[1] - vals[0])


def test_unprofitable_market_with_shutdown():
    market = MarketParams(1.0, 0.75, 1.25, 5.0, 0.02)
    sol = solve_hjb(market, ResourceParams(2.0, 1.0), 0.0, 5.0, 20.0, 41, 40, shutdown=True)
    assert np.all(sol.V == 0.0)
    assert np.all(sol.q == 0.0)


def test_comparison_principle():
    market = MarketParams(5.0, 0.75, 1.25, 0.5, 0.02)
    resource = ResourceParams(6.0, 3.25, 10.0)
    low = solve_hjb(market, resource, 0.0, 3.0, 20.0, 81, 60)
    high = solve_hjb(market, resource, 0.0, 3.0, 20.0, 81, 60, terminal=lambda x: 0.5 * np.sqrt(x))
    assert np.all(high.V >= low.V - 1e-10)


def test_grid_errors():
    market = MarketParams(5.0, 0.75, 1.25, 0.5, 0.02)
    with pytest.raises(GridTooCoarse):
        solve_hjb(market, ResourceParams(6.0, 3.25), 0.0, 3.0, 20.0, 8, 60)
    with pytest.raises(GridTooCoarse):
        solve_hjb(market, ResourceParams(6.0, 3.25), 0.0, 3.0, 20.0, 60, 8)


def test_interpolated_policy(surface_solution):
    sol = surface_solution
    i, j = 200, 100
    assert sol.extraction(sol.t_grid[i], sol.x_grid[j]) == pytest.approx(sol.q[i, j], abs=1e-12)
    assert sol.extraction(0.0, 1e3) == pytest.approx(sol.q[0, -1])
    q, q_x, q_t, q_xx = sol.extraction_jet(1.0, np.array([5.0, 50.0]))
    assert q_x[1] == 0.0 and np.all(q_xx == 0.0)


def test_compare_policies(surface_solution):
    sol = surface_solution
    closed = build_policy(sol.market, ResourceParams(6.0, 3.25), 0.0, 10.0)
    rep = compare_policies(closed, sol)
    assert rep["points"] > 0 and rep["skipped_x"] == 0
    assert 0 <= rep["l2_gap"] <= rep["sup_gap"]
    k = derive_constants(sol.market, ResourceParams(6.0, 3.25))
    assert rep["far_field_oracle"] == pytest.approx(sol.market.qm, abs=1e-3)
    assert rep["far_field_closed"] <= sol.market.qm - 3.25 ** 2 * k.alpha1 + 1e-12
    self_rep = compare_policies(sol, sol)
    assert self_rep["sup_gap"] == 0.0 and self_rep["l2_gap"] == 0.0


def test_compare_policies_mismatch(surface_solution):
    sol = surface_solution
    other = build_policy(sol.market, ResourceParams(6.0, 3.0), 0.0, 10.0)
    with pytest.raises(ParameterMismatch, match="sigma"):
        compare_policies(other, sol)
    other = build_policy(sol.market, ResourceParams(6.0, 3.25), 0.0, 9.0)
    with pytest.raises(ParameterMismatch, match="horizon"):
        compare_policies(other, sol)
