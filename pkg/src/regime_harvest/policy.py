"""Closed-form extraction policy, resource rent and marginal-revenue drift.

The value function is linearized through V_x = (2b+c) sigma^2 psi'/psi e^{-rho(tau-t)},
which turns the stationary HJB into the linear ODE

    psi'' + (2A/sigma^2) psi' + (4BC/sigma^4) psi = 0.

Depending on the sign of A^2 - 4BC the real solution is a sum of two
exponentials, a repeated-root exponential or a damped oscillation. The two
constants are pinned by psi(0) = 1 and q*(horizon, 0) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DiscriminantNegative, OutOfDomain
from .model_core import (DerivedConstants, MarketParams, ResourceParams,
                         derive_constants, hamiltonian_coefficients)

EXPONENTIAL = "exponential"
REPEATED = "repeated"
OSCILLATORY = "oscillatory"

# relative size of A^2 - 4BC below which the roots are treated as repeated
_REPEATED_TOL = 1e-14


@dataclass(frozen=True)
class PolicySpec:
    """Closed-form period policy q*(t, x) = [qm - sigma^2 psi'/psi e^{-rho(horizon - t)}]_+.

    For the exponential branch psi = c1 e^{alpha1 x} + c2 e^{alpha2 x}; for the
    repeated branch psi = (c1 + c2 x) e^{alpha1 x}; for the oscillatory branch
    psi = e^{alpha1 x} (c1 cos(alpha2 x) + c2 sin(alpha2 x)), i.e. alpha1 is the
    decay rate and alpha2 the angular frequency.
    """

    constants: DerivedConstants
    market: MarketParams
    drift: float
    horizon: float
    kind: str
    c1: float
    c2: float
    alpha1: float
    alpha2: float

    @property
    def sigma(self) -> float:
        return self.constants.sigma

    @property
    def rho(self) -> float:
        return self.market.rho

    @property
    def qm(self) -> float:
        return self.constants.qm

    @property
    def x_limit(self) -> float:
        """First positive zero of psi; the policy is defined on [0, x_limit)."""
        if self.kind == EXPONENTIAL:
            if self.c1 < 0 < self.c2 and -self.c1 <= self.c2:
                return math.log(-self.c1 / self.c2) / (self.alpha2 - self.alpha1)
            return math.inf
        if self.kind == REPEATED:
            return -self.c1 / self.c2 if self.c2 < 0 else math.inf
        phase = math.atan2(self.c1, self.c2)
        return (math.pi - phase) / self.alpha2

    # -- psi and its log-derivative -------------------------------------------------

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(x >= self.x_limit) or np.any(np.isnan(x)):
            raise OutOfDomain(f"stock outside [0, {self.x_limit:.6g})")
        return x

    def psi(self, x):
        x = self._check_x(x)
        if self.kind == EXPONENTIAL:
            return self.c1 * np.exp(self.alpha1 * x) + self.c2 * np.exp(self.alpha2 * x)
        if self.kind == REPEATED:
            return (self.c1 + self.c2 * x) * np.exp(self.alpha1 * x)
        w = self.alpha2 * x
        return np.exp(self.alpha1 * x) * (self.c1 * np.cos(w) + self.c2 * np.sin(w))

    def log_derivative(self, x, order: int = 0):
        """d^order/dx^order of psi'/psi, for order 0, 1 or 2."""
        x = self._check_x(x)
        if self.kind == EXPONENTIAL:
            # factor out e^{alpha1 x} so nothing overflows for large x
            e = np.exp((self.alpha2 - self.alpha1) * x)
            den = self.c1 + self.c2 * e
            m1 = (self.c1 * self.alpha1 + self.c2 * self.alpha2 * e) / den
            if order == 0:
                return m1
            m2 = (self.c1 * self.alpha1 ** 2 + self.alpha2 ** 2 * self.c2 * e) / den
            if order == 1:
                return m2 - m1 * m1
            m3 = (self.c1 * self.alpha1 ** 3 + self.alpha2 ** 3 * self.c2 * e) / den
            return m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1
        if self.kind == REPEATED:
            g = self.c2 / (self.c1 + self.c2 * x)
            return (self.alpha1 + g, -g * g, 2.0 * g ** 3)[order]
        w = self.alpha2
        u = w * x + math.atan2(self.c1, self.c2)
        cot = np.cos(u) / np.sin(u)
        if order == 0:
            return self.alpha1 + w * cot
        csc2 = 1.0 + cot * cot
        if order == 1:
            return -w * w * csc2
        return 2.0 * w ** 3 * csc2 * cot

    # -- policy evaluation -------------------------------------------------------

    def discount(self, t):
        t = np.asarray(t, dtype=float)
        slack = 1e-12 * max(1.0, self.horizon)
        if np.any(t < -slack) or np.any(t > self.horizon + slack):
            raise OutOfDomain(f"time outside [0, {self.horizon:.6g}]")
        return np.exp(-self.rho * (self.horizon - t))

    def variable_part(self, t, x):
        """q^v = sigma^2 psi'/psi e^{-rho(horizon - t)}, before clamping."""
        return self.sigma ** 2 * self.log_derivative(x) * self.discount(t)

    def log_derivative_gap(self, x):
        """psi'/psi(x) - psi'/psi(0), written so that it is exactly 0 at x = 0."""
        x = self._check_x(x)
        if self.kind == EXPONENTIAL:
            gap = self.alpha2 - self.alpha1
            e = np.expm1(gap * x)
            return self.c1 * self.c2 * gap * e / (self.c1 + self.c2 * (1.0 + e))
        if self.kind == REPEATED:
            return -self.c2 ** 2 * x / (self.c1 + self.c2 * x)
        w = self.alpha2
        phase = math.atan2(self.c1, self.c2)
        return -w * np.sin(w * x) / (np.sin(w * x + phase) * math.sin(phase))

    def _raw(self, t, x):
        # qm - sigma^2 psi'/psi d, using sigma^2 psi'/psi(0) = qm so that the
        # boundary value q(horizon, 0) = 0 holds without rounding
        d = self.discount(t)
        lead = -np.expm1(-self.rho * (self.horizon - np.asarray(t, dtype=float)))
        return self.qm * lead - self.sigma ** 2 * self.log_derivative_gap(x) * d, d

    def extraction(self, t, x):
        q = np.maximum(self._raw(t, x)[0], 0.0)
        return q if q.ndim else float(q)

    def extraction_jet(self, t, x):
        """(q, q_x, q_t, q_xx); derivatives vanish where the clamp binds."""
        raw, d = self._raw(t, x)
        s2 = self.sigma ** 2
        r = self.log_derivative(x)
        live = raw > 0
        q = np.where(live, raw, 0.0)
        q_x = np.where(live, -s2 * self.log_derivative(x, 1) * d, 0.0)
        q_xx = np.where(live, -s2 * self.log_derivative(x, 2) * d, 0.0)
        q_t = np.where(live, -s2 * r * self.rho * d, 0.0)
        return q, q_x, q_t, q_xx


def _oscillatory_constants(market, resource, drift_offset):
    A, B, C = hamiltonian_coefficients(market, resource.mu + drift_offset)
    s2 = resource.sigma ** 2
    decay = -A / s2
    freq = math.sqrt(4.0 * B * C - A * A) / s2
    consts = DerivedConstants(A=A, B=B, C=C, alpha1=math.nan, alpha2=math.nan,
                              qm=market.qm, sigma=resource.sigma)
    return consts, decay, freq


def build_policy(market: MarketParams, resource: ResourceParams, drift_offset: float,
                 horizon: float, allow_oscillatory: bool = False) -> PolicySpec:
    """Closed-form policy for one period of length ``horizon``.

    With ``allow_oscillatory`` a negative discriminant yields the damped
    oscillatory solution, which is only defined up to ``x_limit``; otherwise
    DiscriminantNegative propagates.
    """
    if not horizon > 0:
        raise OutOfDomain("horizon must be > 0")
    drift = resource.mu + drift_offset
    target = market.qm / resource.sigma ** 2  # psi'(0)/psi(0), forces q*(horizon, 0) = 0
    try:
        k = derive_constants(market, resource, drift_offset)
    except DiscriminantNegative:
        if not allow_oscillatory:
            raise
        k, decay, freq = _oscillatory_constants(market, resource, drift_offset)
        # psi(0) = c1 = 1, psi'(0) = decay + c2 freq
        return PolicySpec(k, market, drift, horizon, OSCILLATORY,
                          1.0, (target - decay) / freq, decay, freq)
    if k.discriminant <= _REPEATED_TOL * k.A * k.A:
        alpha = -k.A / resource.sigma ** 2
        return PolicySpec(k, market, drift, horizon, REPEATED, 1.0, target - alpha, alpha, alpha)
    c1 = (target - k.alpha2) / (k.alpha1 - k.alpha2)
    return PolicySpec(k, market, drift, horizon, EXPONENTIAL, c1, 1.0 - c1, k.alpha1, k.alpha2)


def optimal_extraction(spec: PolicySpec, t, x):
    return spec.extraction(t, x)


def resource_rent(spec: PolicySpec, t, x):
    """Marginal in-situ value V_x = (qm - q*)(2b + c); equals a where q* is clamped to 0."""
    v = (spec.qm - np.asarray(spec.extraction(t, x))) * spec.market.slope
    return v if v.ndim else float(v)


def expected_mr_drift(spec: PolicySpec, t, x):
    """Expected drift of marginal revenue, (1/dt) E_t dMR, from Ito's lemma on p(q*)."""
    b = spec.market.b
    q, q_x, _, q_xx = spec.extraction_jet(t, x)
    qv = spec.variable_part(t, x)
    v = (2 * b * q_x * q - 2 * b * q_x * spec.drift - spec.sigma ** 2 * b * q_xx
         + 2 * spec.rho * b * qv)
    return v if np.ndim(v) else float(v)
