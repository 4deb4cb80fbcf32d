"""Multi-period episodes: plan, harvest, detect the shift, update it, repeat.

Period i starts with planning drift mu + lambda_0 + ... + lambda_{i-1} and a
pending shift lambda_i that strikes at a uniformly distributed time. The
period's horizon is the expected detection horizon of lambda_i. When the period
closes, lambda_{i+1} is computed from the realized relative change of the stock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import catastrophe
from .detection import CusumDetector, expected_detection_horizon, solve_threshold
from .errors import DiscriminantNegative, HarvestError, OutOfDomain, StartStockNonPositive
from .hjb_oracle import solve_hjb
from .model_core import DetectionConfig, MarketParams, RegimeState, ResourceParams
from .policy import build_policy
from .sde_sim import SimConfig, Trajectory, _stream_seeds, sample_change_times, simulate_period

EXPECTED_HORIZON = "expected_horizon"
REAL_TIME = "real_time"
CONTINUE = "continue"
HALT = "halt"

COMPLETED = "completed"
EXTINCT = "extinct"
HALTED = "halted"
ERROR = "error"

CLOSED_FORM = "closed_form"
NUMERICAL = "numerical"
AUTO = "auto"


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode settings.

    ``policy_source`` picks the period policy: the closed form, the
    finite-difference HJB solution, or ``auto`` (closed form when it is defined
    on all of [0, x_max], numerical otherwise).
    """

    n_periods: int = 4
    lambda0: float = -1.5
    mode: str = EXPECTED_HORIZON
    on_irreversible: str = CONTINUE
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    policy_source: str = AUTO
    x_max: float = 100.0
    hjb_nx: int = 201
    hjb_dt: float = 0.1
    corrected_threshold: bool = True

    def __post_init__(self):
        if self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")
        if self.mode not in (EXPECTED_HORIZON, REAL_TIME):
            raise ValueError(f"mode must be {EXPECTED_HORIZON!r} or {REAL_TIME!r}")
        if self.on_irreversible not in (CONTINUE, HALT):
            raise ValueError(f"on_irreversible must be {CONTINUE!r} or {HALT!r}")
        if self.policy_source not in (CLOSED_FORM, NUMERICAL, AUTO):
            raise ValueError("policy_source must be closed_form, numerical or auto")


@dataclass
class PeriodRecord:
    index: int
    lam: float
    planning_drift: float
    horizon: float
    detection_time: float
    start_time: float
    start_stock: float
    end_stock: float
    theta: float | None
    alarm_time: float | None
    next_lambda: float | None
    policy_kind: str
    catastrophe: catastrophe.CatastropheReport | None


@dataclass
class EpisodeResult:
    records: list
    trajectory: Trajectory
    termination: str
    message: str = ""

    @property
    def horizons(self):
        return [r.horizon for r in self.records]


def lambda_update(x_start: float, x_end: float, coefficient: float) -> float:
    """Shift implied by the realized relative stock change over a period.

    coefficient * delta for a decline, coefficient * sqrt(delta) for growth,
    with delta = (x_end - x_start) / x_start.
    """
    if not x_start > 0:
        raise StartStockNonPositive("x_start must be > 0")
    delta = (x_end - x_start) / x_start
    if delta < 0:
        return coefficient * delta
    if delta > 0:
        return coefficient * math.sqrt(delta)
    return 0.0


def post_horizon_policy(policy, t: float, x: float, tolerance_T: float) -> float:
    """Extraction for t in [horizon, T]: same psi, discount anchored at T."""
    if t < policy.horizon - 1e-12 or t > tolerance_T + 1e-12:
        raise OutOfDomain(f"t must lie in [{policy.horizon:.6g}, {tolerance_T:.6g}]")
    shifted = t - (tolerance_T - policy.horizon)
    return float(policy.extraction(max(shifted, 0.0), x))


def reanchoring_jump(policy, x: float, tolerance_T: float) -> float:
    """q just after the horizon minus q just before it, unclamped:
    sigma^2 psi'/psi (1 - e^{-rho (T - horizon)})."""
    r = float(policy.log_derivative(x))
    return policy.sigma ** 2 * r * (1.0 - math.exp(-policy.rho * (tolerance_T - policy.horizon)))


def _closed_form(market, resource, offset, horizon):
    try:
        return build_policy(market, resource, offset, horizon)
    except DiscriminantNegative:
        return build_policy(market, resource, offset, horizon, allow_oscillatory=True)


def period_policy(market: MarketParams, resource: ResourceParams, offset: float,
                  horizon: float, cfg: EpisodeConfig):
    """Returns (policy, kind)."""
    if cfg.policy_source != NUMERICAL:
        closed = _closed_form(market, resource, offset, horizon)
        if cfg.policy_source == CLOSED_FORM or closed.x_limit > cfg.x_max:
            return closed, closed.kind
    nt = max(16, int(math.ceil(horizon / cfg.hjb_dt)))
    sol = solve_hjb(market, resource, offset, horizon, cfg.x_max, cfg.hjb_nx, nt, shutdown=True)
    return sol, NUMERICAL


def _stitch(parts, dt):
    times, stock, q, rid = [], [], [], []
    offset = 0.0
    for k, tr in enumerate(parts):
        last = k == len(parts) - 1
        sl = slice(None) if last else slice(None, -1)
        times.append(tr.times[sl] + offset)
        stock.append(tr.stock[sl])
        q.append(tr.extraction[sl])
        rid.append(tr.regime_id[sl])
        offset += tr.end_time
    marks = []
    start = 0.0
    for tr in parts:
        marks += [(start + th, lam) for th, lam in tr.regime_marks]
        start += tr.end_time
    absorbed = None
    if parts and parts[-1].absorbed_at is not None:
        absorbed = offset - parts[-1].end_time + parts[-1].absorbed_at
    return Trajectory(dt=dt, times=np.concatenate(times), stock=np.concatenate(stock),
                      extraction=np.concatenate(q), regime_id=np.concatenate(rid),
                      regime_marks=marks, absorbed_at=absorbed)


def run_episode(market: MarketParams, resource: ResourceParams, cfg: EpisodeConfig) -> EpisodeResult:
    """Run up to ``cfg.n_periods`` periods; deterministic in ``cfg.sim.seed``."""
    T = cfg.detection.tolerance_T
    seeds = np.random.SeedSequence(cfg.sim.seed).spawn(cfg.n_periods)
    regime = RegimeState(resource.mu, period_start_stock=resource.x0)
    lam = cfg.lambda0
    records, parts = [], []
    clock = 0.0
    termination, message = COMPLETED, ""
    for i in range(cfg.n_periods):
        x0 = regime.period_start_stock
        try:
            horizon = expected_detection_horizon(lam, cfg.detection)
            policy, kind = period_policy(market, resource, regime.drift_offset, horizon, cfg)
            report = catastrophe.classify(regime, x0, horizon, policy, pending_lambda=lam,
                                          sigma=resource.sigma)
            if report.classification == catastrophe.IRREVERSIBLE and cfg.on_irreversible == HALT:
                records.append(PeriodRecord(i, lam, regime.cumulative_drift, horizon, 0.0, clock,
                                            x0, x0, None, None, None, kind, report))
                termination = HALTED
                break
            noise_seq, event_seq = _stream_seeds(seeds[i])
            detector = None
            window = horizon
            if cfg.mode == REAL_TIME and lam != 0:
                nu = solve_threshold(lam, T)
                detector = CusumDetector.for_sampling(lam, nu, cfg.sim.dt, cfg.corrected_threshold)
                window = max(T, horizon)
            theta = float(sample_change_times(event_seq, 1, T, window)[0]) if lam != 0 else None
            tr = simulate_period(policy, regime, horizon, theta, lam, cfg.sim, resource.sigma,
                                 seed=noise_seq, detector=detector, tolerance_T=T, x0=x0,
                                 regime_id=i)
        except HarvestError as exc:
            termination, message = ERROR, f"period {i}: {exc}"
            break
        parts.append(tr)
        x_end = float(tr.stock[-1])
        extinct = tr.absorbed_at is not None
        last = i == cfg.n_periods - 1
        nxt = None if (extinct or last) else lambda_update(x0, x_end, regime.cumulative_drift)
        records.append(PeriodRecord(i, lam, regime.cumulative_drift, horizon, tr.end_time, clock,
                                    x0, x_end, theta, tr.alarm_time, nxt, kind, report))
        clock += tr.end_time
        if extinct:
            termination = EXTINCT
            break
        regime = regime.advance(lam, tr.end_time, x_end)
        lam = nxt
    if parts:
        traj = _stitch(parts, cfg.sim.dt)
    else:
        x0 = regime.period_start_stock
        traj = Trajectory(cfg.sim.dt, np.array([0.0]), np.array([x0]), np.array([0.0]),
                          np.array([0]))
    return EpisodeResult(records, traj, termination, message)
