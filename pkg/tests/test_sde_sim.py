import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.stats import ks_2samp

from regime_harvest.catastrophe import hitting_cdf
from regime_harvest.errors import NonPositiveDt
from regime_harvest.model_core import RegimeState
from regime_harvest.policy import build_policy
from regime_harvest.sde_sim import (EULER, SHOJI_OZAKI, ControlledDrift, Scenario, SimConfig,
                                    euler_step, monte_carlo, shoji_ozaki_step, simulate_period)


class ConstantPolicy:
    def __init__(self, q, horizon=1e9):
        self.q, self.horizon = q, horizon

    def extraction(self, t, x):
        return np.full(np.shape(x), self.q) if np.ndim(x) else self.q

    def extraction_jet(self, t, x):
        z = np.zeros(np.shape(x)) if np.ndim(x) else 0.0
        return self.extraction(t, x), z, z, z


def test_euler_step():
    x, absorbed = euler_step(10.0, 0.0, lambda t, x: 3.0, 2.0, 0.01, 0.0)
    assert x == pytest.approx(10.03) and not absorbed
    x, absorbed = euler_step(0.05, 0.0, lambda t, x: 0.0, 2.0, 0.01, -5.0)
    assert x == 0.0 and absorbed
    with pytest.raises(NonPositiveDt):
        euler_step(1.0, 0.0, lambda t, x: 0.0, 1.0, 0.0, 0.0)


def test_shoji_ozaki_constant_drift_equals_euler():
    for z in (-1.3, 0.0, 0.7):
        so = shoji_ozaki_step(5.0, 0.0, lambda t, x: (2.5, 0.0, 0.0, 0.0), 1.5, 0.01, z)
        eu = euler_step(5.0, 0.0, lambda t, x: 2.5, 1.5, 0.01, z)
        assert so[0] == eu[0]


@pytest.mark.parametrize("b", [-0.8, 0.3, 1e-9])
def test_shoji_ozaki_is_exact_for_linear_drift(b):
    a, sigma, x, dt = 1.2, 0.9, 4.0, 0.37
    jet = lambda t, y: (a + b * y, b, 0.0, 0.0)
    mean = shoji_ozaki_step(x, 0.0, jet, sigma, dt, 0.0)[0]
    sd = shoji_ozaki_step(x, 0.0, jet, sigma, dt, 1.0)[0] - mean
    exact_mean = x * math.exp(b * dt) + a * math.expm1(b * dt) / b
    exact_var = sigma ** 2 * math.expm1(2 * b * dt) / (2 * b)
    assert mean == pytest.approx(exact_mean, abs=1e-12)
    assert sd ** 2 == pytest.approx(exact_var, abs=1e-12)


def test_shoji_ozaki_mean_with_time_dependent_linear_drift():
    a, b, c, sigma, x, dt = 0.5, -0.6, 0.8, 1.0, 3.0, 0.5
    jet = lambda t, y: (a + b * y + c * t, b, c, 0.0)
    mean = shoji_ozaki_step(x, 0.0, jet, sigma, dt, 0.0)[0]
    ode = solve_ivp(lambda t, m: a + b * m + c * t, (0, dt), [x], rtol=1e-12, atol=1e-14)
    assert mean == pytest.approx(ode.y[0, -1], abs=1e-10)


def test_deterministic_limit_stock_increases(surface_market):
    regime = RegimeState(6.0, period_start_stock=5.0)
    q = ConstantPolicy(surface_market.qm)
    tr = simulate_period(q, regime, 5.0, None, 0.0, SimConfig(dt=0.01, seed=1), sigma=1e-9)
    assert np.all(np.diff(tr.stock) > 0)
    assert tr.absorbed_at is None and tr.regime_marks == []
    assert tr.stock[-1] == pytest.approx(5.0 + (6.0 - surface_market.qm) * 5.0, rel=1e-6)


def test_trajectory_invariants_and_absorption(surface_market, surface_resource):
    regime = RegimeState(-4.0, period_start_stock=2.0)
    policy = build_policy(surface_market, surface_resource, -10.0, 20.0)
    tr = simulate_period(policy, regime, 20.0, None, 0.0, SimConfig(dt=0.01, seed=4), sigma=3.25)
    assert tr.absorbed_at is not None
    assert np.all(tr.stock >= 0)
    assert tr.stock[-1] == 0.0 and tr.extraction[-1] == 0.0
    steps = np.diff(tr.times)
    np.testing.assert_allclose(steps, 0.01, rtol=1e-6)


def test_period_end_and_regime_mark(surface_market, surface_resource):
    regime = RegimeState(6.0, period_start_stock=10.0)
    policy = build_policy(surface_market, surface_resource, 0.0, 3.005)
    tr = simulate_period(policy, regime, 3.005, 1.0, -2.0, SimConfig(dt=0.01, seed=2), sigma=3.25)
    assert tr.end_time == pytest.approx(3.005)
    assert tr.regime_marks == [(1.0, -2.0)]
    # every step is dt except the last partial one
    np.testing.assert_allclose(np.diff(tr.times)[:-1], 0.01)
    assert np.diff(tr.times)[-1] == pytest.approx(0.005)


def test_simulate_period_is_deterministic(surface_market, surface_resource):
    regime = RegimeState(6.0, period_start_stock=10.0)
    policy = build_policy(surface_market, surface_resource, 0.0, 5.0)
    cfg = SimConfig(dt=0.01, seed=9)
    a = simulate_period(policy, regime, 5.0, 2.0, -1.0, cfg, sigma=3.25)
    b = simulate_period(policy, regime, 5.0, 2.0, -1.0, cfg, sigma=3.25)
    assert np.array_equal(a.stock, b.stock) and np.array_equal(a.extraction, b.extraction)


def test_ensemble_mean_matches_drifted_brownian_motion():
    sc = Scenario(x0=100.0, drift=2.0, sigma=3.0, duration=5.0)
    n = 4000
    s = monte_carlo(sc, SimConfig(dt=0.01, seed=5, n_paths=n, stepper=EULER))
    se = math.sqrt(9.0 * 5.0 / n)
    assert abs(s.mean[-1] - (100 + 2.0 * 5.0)) < 3 * se
    assert s.absorption_frequency == 0.0


def test_increment_normality():
    n = 100_000
    sc = Scenario(x0=1e3, drift=-2.0, sigma=3.0, duration=0.01)
    s = monte_carlo(sc, SimConfig(dt=0.01, seed=6, n_paths=n, stepper=EULER))
    inc = s.final_stock - 1e3
    assert abs(inc.mean() + 0.02) < 3 * math.sqrt(0.09 / n)
    assert abs(inc.var(ddof=1) - 0.09) < 3 * 0.09 * math.sqrt(2 / n)


def test_absorption_frequency_matches_hitting_law():
    n, H = 4000, 5.0
    sc = Scenario(x0=10.0, drift=-1.0, sigma=3.0, duration=H)
    s = monte_carlo(sc, SimConfig(dt=1e-3, seed=7, n_paths=n))
    p = float(hitting_cdf(10.0, -1.0, 3.0, H))
    assert abs(s.absorption_frequency - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_monte_carlo_is_deterministic_and_needs_two_paths():
    sc = Scenario(x0=10.0, drift=-1.0, sigma=3.0, duration=2.0, theta="uniform",
                  tolerance_T=50.0, post_change_lambda=-1.0)
    cfg = SimConfig(dt=0.01, seed=8, n_paths=50)
    a, b = monte_carlo(sc, cfg), monte_carlo(sc, cfg)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.final_stock, b.final_stock)
    np.testing.assert_array_equal(a.absorbed_at, b.absorbed_at)
    assert np.all(a.theta <= 2.0)
    with pytest.raises(ValueError):
        monte_carlo(sc, SimConfig(n_paths=1))


def test_first_passage_mean():
    n = 4000
    sc = Scenario(x0=10.0, drift=-2.0, sigma=3.0, duration=40.0, stop_at_event=True,
                  record_every=10_000)
    s = monte_carlo(sc, SimConfig(dt=1e-2, seed=10, n_paths=n))
    hits = s.absorbed_at
    assert not np.isnan(hits).any()
    se = hits.std(ddof=1) / math.sqrt(n)
    assert abs(hits.mean() - 5.0) < 0.03 * 5.0 + 3 * se


def _strong_error(stepper, dts, ref_factor, policy, n=200, horizon=2.0):
    rng = np.random.default_rng(12)
    fine = min(dts) / ref_factor
    steps = int(round(horizon / fine))
    dW = rng.standard_normal((n, steps)) * math.sqrt(fine)
    drift = ControlledDrift(policy, 6.0)

    def run(dt, method):
        k = int(round(dt / fine))
        x = np.full(n, 20.0)
        t = 0.0
        for j in range(steps // k):
            z = dW[:, j * k:(j + 1) * k].sum(axis=1) / math.sqrt(dt)
            if method == EULER:
                x, _ = euler_step(x, t, drift.value, 3.25, dt, z)
            else:
                x, _ = shoji_ozaki_step(x, t, drift.jet, 3.25, dt, z)
            t += dt
        return x

    ref = run(fine, stepper)
    return [float(np.sqrt(np.mean((run(dt, stepper) - ref) ** 2))) for dt in dts]


@pytest.mark.parametrize("stepper", [SHOJI_OZAKI, EULER])
def test_strong_self_convergence(surface_market, surface_resource, stepper):
    policy = build_policy(surface_market, surface_resource, 0.0, 2.0)
    dts = [0.04, 0.02, 0.01]
    errs = _strong_error(stepper, dts, 64, policy)
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    # additive noise: both schemes are strong order 1
    assert min(rates) > 0.8


def test_steppers_agree_in_distribution(surface_market, surface_resource):
    policy = build_policy(surface_market, surface_resource, 0.0, 2.0)
    base = dict(x0=10.0, drift=6.0, sigma=3.25, duration=2.0, policy=policy, record_every=10_000)
    so = monte_carlo(Scenario(**base), SimConfig(dt=1e-3, seed=13, n_paths=10_000))
    eu = monte_carlo(Scenario(**base), SimConfig(dt=1e-3, seed=14, n_paths=10_000, stepper=EULER))
    assert ks_2samp(so.final_stock, eu.final_stock).statistic < 0.05
