"""Model parameters, derived constants and validation.

Units follow the thousand-tonnes / years convention throughout: stock in
thousand tonnes, rates per year, money in thousands of currency units.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from .errors import DiscriminantNegative, InvalidParams


@dataclass(frozen=True)
class MarketParams:
    """Inverse demand p(q) = a - b q, harvest cost c q^2 / 2 + F, discount rho."""

    a: float
    b: float
    c: float = 0.0
    F: float = 0.0
    rho: float = 0.02

    @property
    def slope(self) -> float:
        """2b + c, the curvature of profit in q."""
        return 2.0 * self.b + self.c

    @property
    def qm(self) -> float:
        return self.a / self.slope

    def profit(self, q):
        return (self.a - self.b * q) * q - 0.5 * self.c * q * q - self.F


@dataclass(frozen=True)
class ResourceParams:
    mu: float
    sigma: float
    x0: float = 10.0


@dataclass(frozen=True)
class DetectionConfig:
    tolerance_T: float = 50.0
    prior: str = "uniform"


@dataclass(frozen=True)
class DerivedConstants:
    A: float
    B: float
    C: float
    alpha1: float
    alpha2: float
    qm: float
    sigma: float

    @property
    def discriminant(self) -> float:
        return self.A * self.A - 4.0 * self.B * self.C


@dataclass(frozen=True)
class RegimeState:
    """Per-period bookkeeping of the cumulative drift.

    ``lambdas`` holds the shifts detected so far, so the drift the firm plans
    with in the current period is ``base_drift + sum(lambdas)``.
    """

    base_drift: float
    period_index: int = 0
    lambdas: tuple[float, ...] = ()
    period_start_stock: float = 0.0
    horizons: tuple[float, ...] = ()
    cumulative_drift: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "cumulative_drift", self.base_drift + math.fsum(self.lambdas))

    @property
    def drift_offset(self) -> float:
        return self.cumulative_drift - self.base_drift

    def advance(self, lam: float, horizon: float, stock: float) -> RegimeState:
        """Close the current period: record its horizon and the detected shift."""
        return replace(
            self,
            period_index=self.period_index + 1,
            lambdas=self.lambdas + (float(lam),),
            period_start_stock=float(stock),
            horizons=self.horizons + (float(horizon),),
        )


class Violation(enum.Enum):
    DemandInterceptNonPositive = "a must be > 0"
    DemandSlopeNonPositive = "b must be > 0"
    CostNegative = "c must be >= 0"
    FixedCostNegative = "F must be >= 0"
    DiscountNonPositive = "rho must be > 0"
    SigmaNonPositive = "sigma must be > 0"
    InitialStockNegative = "x0 must be >= 0"
    DriftNotFinite = "mu must be finite"
    ToleranceNonPositive = "tolerance_T must be > 0"
    UnknownPrior = "prior must be 'uniform'"


def _bad(value, ok) -> bool:
    # NaN fails every comparison, so it is reported as a violation too
    try:
        return not ok(float(value))
    except (TypeError, ValueError):
        return True


def validate(market: MarketParams, resource: ResourceParams | None = None,
             detection: DetectionConfig | None = None) -> list[Violation]:
    """Return every violated invariant; an empty list means the inputs are usable."""
    out = []
    checks = [
        (market.a, lambda v: v > 0, Violation.DemandInterceptNonPositive),
        (market.b, lambda v: v > 0, Violation.DemandSlopeNonPositive),
        (market.c, lambda v: v >= 0, Violation.CostNegative),
        (market.F, lambda v: v >= 0, Violation.FixedCostNegative),
        (market.rho, lambda v: v > 0, Violation.DiscountNonPositive),
    ]
    if resource is not None:
        checks += [
            (resource.sigma, lambda v: v > 0, Violation.SigmaNonPositive),
            (resource.x0, lambda v: v >= 0, Violation.InitialStockNegative),
            (resource.mu, math.isfinite, Violation.DriftNotFinite),
        ]
    if detection is not None:
        checks.append((detection.tolerance_T, lambda v: v > 0, Violation.ToleranceNonPositive))
        if detection.prior != "uniform":
            out.append(Violation.UnknownPrior)
    for value, ok, violation in checks:
        if _bad(value, ok):
            out.append(violation)
    return out


def hamiltonian_coefficients(market: MarketParams, drift: float) -> tuple[float, float, float]:
    """(A, B, C) of 0 = V_t - rho V + A V_x + B V_x^2 + sigma^2/2 V_xx + C."""
    k = market.slope
    return drift - market.a / k, 1.0 / (2.0 * k), market.a ** 2 / (2.0 * k) - market.F


def derive_constants(market: MarketParams, resource: ResourceParams,
                     drift_offset: float = 0.0) -> DerivedConstants:
    """Constants of the closed-form policy for a period with drift mu + drift_offset.

    Raises DiscriminantNegative when the exponents alpha_{1,2} are complex.
    """
    violations = validate(market, resource)
    if not math.isfinite(drift_offset):
        violations.append(Violation.DriftNotFinite)
    if violations:
        raise InvalidParams(violations)
    A, B, C = hamiltonian_coefficients(market, resource.mu + drift_offset)
    disc = A * A - 4.0 * B * C
    if disc < 0:
        raise DiscriminantNegative(A, B, C)
    s2 = resource.sigma ** 2
    root = math.sqrt(disc)
    return DerivedConstants(
        A=A, B=B, C=C,
        alpha1=(-A + root) / s2,
        alpha2=(-A - root) / s2,
        qm=market.qm,
        sigma=resource.sigma,
    )
