"""Catastrophe risk: drift tests, first passage of the stock to zero, and the
absorbing-barrier equation for the hitting probability under a policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import log_ndtr, ndtr

from .errors import GridTooCoarse, NonNegativeDrift, OutOfDomain
from .model_core import RegimeState

NONE = "none"
REVERSIBLE = "reversible"
IRREVERSIBLE = "irreversible"


@dataclass(frozen=True)
class InverseGaussian:
    """IG(mean, shape) law of a first-passage time."""

    mean: float
    shape: float

    @property
    def variance(self) -> float:
        return self.mean ** 3 / self.shape

    @property
    def mode(self) -> float:
        r = 1.5 * self.mean / self.shape
        return self.mean * (math.sqrt(1.0 + r * r) - r)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        safe = np.where(t > 0, t, 1.0)
        val = np.sqrt(self.shape / (2 * np.pi * safe ** 3)) * np.exp(
            -self.shape * (safe - self.mean) ** 2 / (2 * self.mean ** 2 * safe))
        return np.where(t > 0, val, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        safe = np.where(t > 0, t, 1.0)
        root = np.sqrt(self.shape / safe)
        first = ndtr(root * (safe / self.mean - 1.0))
        # e^{2 shape/mean} Phi(-...) overflows separately for large shape
        second = np.exp(2 * self.shape / self.mean + log_ndtr(-root * (safe / self.mean + 1.0)))
        return np.where(t > 0, np.minimum(first + second, 1.0), 0.0)


def hitting_cdf(x0, drift, sigma, t):
    """P(min_{s<=t} X_s <= 0) for X = x0 + drift s + sigma W, any sign of drift."""
    x0 = np.asarray(x0, dtype=float)
    t = np.asarray(t, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    sd = sigma * np.sqrt(safe)
    first = ndtr((-x0 - drift * safe) / sd)
    second = np.exp(-2 * drift * x0 / sigma ** 2 + log_ndtr((-x0 + drift * safe) / sd))
    val = np.minimum(first + second, 1.0)
    return np.where(t > 0, val, (x0 <= 0).astype(float))


def natural_drift(regime: RegimeState, pending_lambda: float = 0.0) -> float:
    return regime.cumulative_drift + pending_lambda


def at_risk(regime: RegimeState, policy, t, x, pending_lambda: float = 0.0) -> bool:
    """True iff the controlled drift mu + sum(lambda) - q*(t, x) is strictly negative."""
    q = 0.0 if policy is None else float(policy.extraction(t, _policy_x(policy, x)))
    return natural_drift(regime, pending_lambda) - q < 0


def integral_risk_statistic(regime: RegimeState, policy, times, stock, pending_lambda=0.0):
    """Running value of mu + sum(lambda) - qm + int_0^t q^v(s, X_s) ds along a path.

    This is the time-accumulated form of the drift test; q^v is the variable
    part of the policy (qm - q* for policies without a closed form).
    """
    times = np.asarray(times, dtype=float)
    stock = np.asarray(stock, dtype=float)
    qm = policy.market.qm
    if hasattr(policy, "variable_part"):
        qv = np.asarray(policy.variable_part(times, stock))
    else:
        qv = qm - np.asarray(policy.extraction(times, stock))
    acc = np.concatenate([[0.0], np.cumsum(qv[:-1] * np.diff(times))])
    return natural_drift(regime, pending_lambda) - qm + acc


def expected_time_to_catastrophe(x0: float, net_drift: float) -> float:
    """x0 / |drift| for a net pull towards zero, with no extraction."""
    if net_drift >= 0:
        raise NonNegativeDrift("expected hitting time is infinite for drift >= 0")
    if x0 < 0:
        raise OutOfDomain("x0 must be >= 0")
    return x0 / abs(net_drift)


def extinction_probability(x0: float, net_drift: float, sigma: float) -> float:
    """Probability that a drifted Brownian motion from x0 ever reaches 0."""
    if x0 <= 0 or net_drift <= 0:
        return 1.0
    return math.exp(-2.0 * net_drift * x0 / sigma ** 2)


def ig_first_passage(x0: float, net_drift: float, sigma: float) -> InverseGaussian:
    if net_drift >= 0:
        raise NonNegativeDrift("first passage is not certain for drift >= 0")
    if not x0 > 0 or not sigma > 0:
        raise OutOfDomain("x0 and sigma must be > 0")
    return InverseGaussian(mean=x0 / abs(net_drift), shape=(x0 / sigma) ** 2)


def default_x_max(x0: float, drift: float, sigma: float, horizon: float) -> float:
    """Far-field truncation wide enough for the no-extraction law."""
    return x0 + 6.0 * sigma * math.sqrt(horizon) + abs(drift) * horizon


# -- absorbing-barrier equation ----------------------------------------------------

@dataclass
class KfeSolution:
    """Hitting probability phi[t, x] of zero before the horizon, plus the
    first-passage law started from ``x0`` at time 0."""

    x_grid: np.ndarray
    t_grid: np.ndarray
    phi: np.ndarray
    first_passage_cdf: np.ndarray
    first_passage_density: np.ndarray
    numeric_mean_hit_time: float
    x0: float

    @property
    def hit_probability(self) -> float:
        return float(self.first_passage_cdf[-1])

    def phi_at(self, x, n: int = 0):
        return np.interp(x, self.x_grid, self.phi[n])


def _coefficients(drift, sigma, h):
    """Off-diagonals of the generator: central where the cell Peclet number
    allows it (|drift| h <= sigma^2), upwind elsewhere; both are monotone."""
    diff = 0.5 * sigma * sigma / (h * h)
    central = np.abs(drift) * h <= sigma * sigma
    up = np.where(central, diff + drift / (2 * h), diff + np.maximum(drift, 0.0) / h)
    lo = np.where(central, diff - drift / (2 * h), diff + np.maximum(-drift, 0.0) / h)
    return lo, up


def solve_kfe(policy, regime: RegimeState, horizon: float, x_max: float, nx: int, nt: int,
              x0: float | None = None, pending_lambda: float = 0.0,
              scheme: str = "implicit", sigma: float | None = None) -> KfeSolution:
    """Solve phi_t + (m - q*) phi_x + sigma^2/2 phi_xx = 0 backward from the horizon.

    phi(x, horizon) = 1{x <= 0}, phi(0, t) = 1, phi(x_max, t) = 0, with
    m = mu + sum(lambda) + pending_lambda. ``policy=None`` means no extraction.
    The first-passage cdf from x0 comes from the discrete adjoint of the same
    operator, so it agrees exactly with the backward surface.
    """
    if nx < 16 or nt < 16:
        raise GridTooCoarse("nx and nt must be >= 16")
    if scheme not in ("implicit", "explicit"):
        raise ValueError("scheme must be 'implicit' or 'explicit'")
    if sigma is None:
        sigma = policy.sigma
    x0 = regime.period_start_stock if x0 is None else x0
    if not 0 < x0 < x_max:
        raise OutOfDomain("x0 must lie inside (0, x_max)")
    m = natural_drift(regime, pending_lambda)
    if m < 0 and hitting_cdf(x_max, m, sigma, horizon) > 1e-6:
        raise OutOfDomain("x_max too small: far-field hitting probability above 1e-6")
    x = np.linspace(0.0, x_max, nx)
    t = np.linspace(0.0, horizon, nt + 1)
    h, dt = x[1] - x[0], t[1] - t[0]
    xi = x[1:-1]

    bands = []
    for n in range(nt):
        q = 0.0 if policy is None else np.asarray(policy.extraction(t[n], _policy_x(policy, xi)))
        lo, up = _coefficients(np.broadcast_to(m - q, xi.shape), sigma, h)
        if scheme == "explicit" and np.any(dt * (lo + up) > 1.0):
            raise GridTooCoarse("explicit step violates the monotonicity (CFL) condition")
        bands.append((lo, up))

    phi = np.zeros((nt + 1, nx))
    phi[:, 0] = 1.0
    for n in range(nt - 1, -1, -1):
        lo, up = bands[n]
        nxt = phi[n + 1, 1:-1]
        if scheme == "explicit":
            left = np.concatenate([[1.0], nxt[:-1]])
            right = np.concatenate([nxt[1:], [0.0]])
            phi[n, 1:-1] = nxt + dt * (lo * left + up * right - (lo + up) * nxt)
        else:
            rhs = nxt.copy()
            rhs[0] += dt * lo[0]
            phi[n, 1:-1] = solve_banded((1, 1), _implicit_bands(lo, up, dt), rhs)

    # adjoint pass: mass started at x0, absorbed at 0 step by step
    mass = np.zeros(nx - 2)
    j = min(int(x0 / h), nx - 2)
    w = x0 / h - j
    if j >= 1:
        mass[j - 1] += 1.0 - w
    if j < nx - 2:
        mass[j] += w
    cdf = np.zeros(nt + 1)
    absorbed = 0.0
    for n in range(nt):
        lo, up = bands[n]
        if scheme == "explicit":
            out = mass * (1.0 - dt * (lo + up))
            out[1:] += dt * up[:-1] * mass[:-1]
            out[:-1] += dt * lo[1:] * mass[1:]
            absorbed += dt * lo[0] * mass[0]
            mass = out
        else:
            ab = _implicit_bands(lo, up, dt)
            abT = np.zeros_like(ab)
            abT[1] = ab[1]
            abT[0, 1:] = ab[2, :-1]
            abT[2, :-1] = ab[0, 1:]
            mass = solve_banded((1, 1), abT, mass)
            absorbed += dt * lo[0] * mass[0]
        cdf[n + 1] = absorbed
    density = np.gradient(cdf, t)
    increments = np.diff(cdf)
    mids = 0.5 * (t[1:] + t[:-1])
    mean = float(np.sum(mids * increments) / cdf[-1]) if cdf[-1] > 0 else math.inf
    return KfeSolution(x_grid=x, t_grid=t, phi=phi, first_passage_cdf=cdf,
                       first_passage_density=density, numeric_mean_hit_time=mean, x0=x0)


def _policy_x(policy, x):
    # keep the evaluation inside the closed form's domain; beyond it the far-field value is held
    limit = getattr(policy, "x_limit", math.inf)
    return np.minimum(x, limit * (1 - 1e-9)) if math.isfinite(limit) else x


def _implicit_bands(lo, up, dt):
    n = lo.size
    ab = np.zeros((3, n))
    ab[1] = 1.0 + dt * (lo + up)
    ab[0, 1:] = -dt * up[:-1]
    ab[2, :-1] = -dt * lo[1:]
    return ab


# -- classification ------------------------------------------------------------------

@dataclass
class CatastropheReport:
    natural_drift: float
    at_risk: bool
    expected_hit_time: float
    extinction_probability: float
    hit_probability: float
    ig_mean: float
    ig_shape: float
    classification: str
    kfe: KfeSolution | None = None


def classify(regime: RegimeState, x0: float, next_horizon: float, policy,
             pending_lambda: float = 0.0, sigma: float | None = None,
             nx: int = 200, nt: int = 400) -> CatastropheReport:
    """none / irreversible / reversible, comparing the no-extraction hitting time with the horizon.

    ``hit_probability`` is the chance of reaching zero within ``next_horizon``:
    under no extraction for none/irreversible, under the policy (numerically)
    for reversible.
    """
    if sigma is None:
        sigma = policy.sigma
    m = natural_drift(regime, pending_lambda)
    risk = at_risk(regime, policy, 0.0, x0, pending_lambda) if x0 > 0 else True
    if m >= 0 or x0 <= 0:
        hit = float(hitting_cdf(x0, m, sigma, next_horizon))
        return CatastropheReport(m, risk, math.inf if x0 > 0 else 0.0,
                                 extinction_probability(x0, m, sigma), hit,
                                 math.nan, math.nan, NONE)
    law = ig_first_passage(x0, m, sigma)
    eta = expected_time_to_catastrophe(x0, m)
    if eta <= next_horizon:
        return CatastropheReport(m, risk, eta, 1.0, float(law.cdf(next_horizon)),
                                 law.mean, law.shape, IRREVERSIBLE)
    x_max = default_x_max(x0, m, sigma, next_horizon)
    sol = solve_kfe(policy, regime, next_horizon, x_max, nx, nt, x0=x0,
                    pending_lambda=pending_lambda, sigma=sigma)
    return CatastropheReport(m, risk, eta, 1.0, sol.hit_probability, law.mean, law.shape,
                             REVERSIBLE, kfe=sol)
