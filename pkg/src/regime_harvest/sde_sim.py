"""Simulation of the controlled, regime-switching stock SDE

    dX = (m + lam 1{t >= theta} - q(t, X)) dt + sigma dW,    X absorbed at 0.

Two steppers are provided: Euler-Maruyama and the Shoji-Ozaki local
linearization, which solves the drift-linearized SDE exactly over a step.
Both accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detection import CusumDetector, standardized_residual
from .errors import NonPositiveDt, OutOfDomain
from .model_core import RegimeState

EULER = "euler"
SHOJI_OZAKI = "shoji_ozaki"
STEPPERS = (EULER, SHOJI_OZAKI)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-2
    seed: int = 0
    n_paths: int = 1
    stepper: str = SHOJI_OZAKI

    def __post_init__(self):
        if not self.dt > 0:
            raise NonPositiveDt("dt must be > 0")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.stepper not in STEPPERS:
            raise ValueError(f"stepper must be one of {STEPPERS}")


@dataclass
class Trajectory:
    """A sampled path. Samples are dt apart except possibly the last step of a period."""

    dt: float
    times: np.ndarray
    stock: np.ndarray
    extraction: np.ndarray
    regime_id: np.ndarray
    regime_marks: list = field(default_factory=list)
    absorbed_at: float | None = None
    alarm_time: float | None = None

    @property
    def end_time(self) -> float:
        return float(self.times[-1])


# -- steppers -------------------------------------------------------------------

def _phi1(y):
    """expm1(y) / y, stable near 0."""
    if np.ndim(y) == 0:
        y = float(y)
        return 1.0 + y / 2 + y * y / 6 + y ** 3 / 24 if abs(y) < 1e-3 else math.expm1(y) / y
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < 1e-3
    safe = np.where(small, 1.0, y)
    return np.where(small, 1.0 + y * (0.5 + y * (1 / 6 + y / 24)), np.expm1(safe) / safe)


def _phi2(y):
    """(expm1(y) - y) / y^2, stable near 0."""
    if np.ndim(y) == 0:
        y = float(y)
        if abs(y) < 1e-3:
            return 0.5 + y / 6 + y * y / 24 + y ** 3 / 120
        return (math.expm1(y) - y) / (y * y)
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < 1e-3
    safe = np.where(small, 1.0, y)
    return np.where(small, 0.5 + y * (1 / 6 + y * (1 / 24 + y / 120)),
                    (np.expm1(safe) - safe) / (safe * safe))


def _absorb(x_new):
    absorbed = x_new <= 0
    return np.where(absorbed, 0.0, x_new), absorbed


def euler_step(x, t, drift_fn, sigma, dt, z):
    """x + f(t, x) dt + sigma sqrt(dt) z, absorbed at 0. Returns (x_new, absorbed)."""
    if not dt > 0:
        raise NonPositiveDt("dt must be > 0")
    f = drift_fn(t, x)
    return _absorb(x + f * dt + sigma * math.sqrt(dt) * z)


def shoji_ozaki_step(x, t, jet_fn, sigma, dt, z):
    """Local-linearization step. ``jet_fn(t, x)`` returns (f, f_x, f_t, f_xx).

    The drift is replaced by f + L (y - x) + M (s - t) with L = f_x and
    M = f_t + sigma^2/2 f_xx; that linear SDE is then solved exactly over dt.
    """
    if not dt > 0:
        raise NonPositiveDt("dt must be > 0")
    f, f_x, f_t, f_xx = jet_fn(t, x)
    L = np.asarray(f_x, dtype=float)
    M = f_t + 0.5 * sigma * sigma * f_xx
    y = L * dt
    mean = x + f * dt * _phi1(y) + M * dt * dt * _phi2(y)
    sd = sigma * np.sqrt(dt * _phi1(2.0 * y))
    return _absorb(mean + sd * z)


# -- controlled drift -------------------------------------------------------------

class ControlledDrift:
    """f(t, x) = natural drift - q(t, x); a None policy means no extraction."""

    def __init__(self, policy, natural_drift):
        self.policy = policy
        self.natural_drift = natural_drift

    def extraction(self, t, x):
        if self.policy is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return np.asarray(self.policy.extraction(t, x), dtype=float)

    def value(self, t, x):
        return self.natural_drift - self.extraction(t, x)

    def jet(self, t, x):
        if self.policy is None:
            zero = np.zeros_like(np.asarray(x, dtype=float))
            return self.natural_drift + zero, zero, zero, zero
        q, q_x, q_t, q_xx = self.policy.extraction_jet(t, x)
        return self.natural_drift - q, -q_x, -q_t, -q_xx


class ReanchoredPolicy:
    """Period policy re-anchored to a later horizon.

    The closed form depends on time only through horizon - t, so anchoring the
    discount at ``anchor`` instead of ``base.horizon`` is a pure time shift.
    """

    def __init__(self, base, anchor: float):
        self.base = base
        self.horizon = anchor
        self.shift = anchor - base.horizon

    def extraction(self, t, x):
        return self.base.extraction(np.asarray(t) - self.shift, x)

    def extraction_jet(self, t, x):
        return self.base.extraction_jet(np.asarray(t) - self.shift, x)


# -- random numbers -----------------------------------------------------------------

class NoiseSource:
    """Standard normal draws with one independent substream per path.

    Path k sees the same draws regardless of the ensemble size, and draws are
    generated in blocks for speed.
    """

    def __init__(self, seed_seq: np.random.SeedSequence, n_paths: int, block: int = 512):
        self._gens = [np.random.Generator(np.random.PCG64(s)) for s in seed_seq.spawn(n_paths)]
        self._block = block
        self._buf = np.zeros((n_paths, block))
        self._pos = block

    def draw(self, active=None):
        if self._pos == self._block:
            idx = range(len(self._gens)) if active is None else np.flatnonzero(active)
            self._buf[:] = 0.0
            for k in idx:
                self._buf[k] = self._gens[k].standard_normal(self._block)
            self._pos = 0
        z = self._buf[:, self._pos]
        self._pos += 1
        return z


def _stream_seeds(seed):
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    noise, events = root.spawn(2)
    return noise, events


def sample_change_times(seed_seq, n, tolerance_T, duration):
    """theta ~ U[0, T] per path, clipped to the period."""
    gen = np.random.Generator(np.random.PCG64(seed_seq))
    return np.minimum(gen.uniform(0.0, tolerance_T, size=n), duration)


# -- single period ----------------------------------------------------------------

def _step_grid(duration, dt):
    n = max(1, int(math.ceil(duration / dt - 1e-9)))
    steps = np.full(n, dt)
    steps[-1] = duration - dt * (n - 1)
    return steps


def simulate_period(policy, regime: RegimeState, duration: float, theta: float | None,
                    post_change_lambda: float, cfg: SimConfig, sigma: float,
                    seed=None, detector: CusumDetector | None = None,
                    tolerance_T: float | None = None, x0: float | None = None,
                    regime_id: int = 0) -> Trajectory:
    """One controlled path over a period that starts at stock ``x0``.

    Without a detector the period lasts exactly ``duration``. With a detector
    (real-time mode) the period ends at the first alarm; if none has fired by
    ``duration`` the policy is re-anchored at ``tolerance_T`` and the path
    continues until an alarm or T.
    """
    if not duration > 0:
        raise OutOfDomain("duration must be > 0")
    x = regime.period_start_stock if x0 is None else x0
    noise = NoiseSource(_stream_seeds(cfg.seed if seed is None else seed)[0], 1)
    end = duration
    if detector is not None and tolerance_T is not None and tolerance_T > duration:
        end = tolerance_T
    steps = _step_grid(end, cfg.dt)
    late = ReanchoredPolicy(policy, end) if (policy is not None and end > duration) else None
    natural = regime.cumulative_drift
    times, stock, qs = [0.0], [x], []
    marks = []
    absorbed_at = None
    t = 0.0
    for h in steps:
        if theta is not None and t >= theta and not marks:
            marks.append((theta, post_change_lambda))
        shifted = natural + (post_change_lambda if marks else 0.0)
        active = policy if (late is None or t <= duration) else late
        drift = ControlledDrift(active, shifted)
        z = noise.draw()[0]
        if cfg.stepper == EULER:
            q = float(drift.extraction(t, x))
            x_new, absorbed = euler_step(x, t, lambda s, y, q=q: shifted - q, sigma, h, z)
        else:
            jet = drift.jet(t, x)
            q = float(shifted - jet[0])
            x_new, absorbed = shoji_ozaki_step(x, t, lambda s, y, j=jet: j, sigma, h, z)
        x_new = float(x_new)
        qs.append(q)
        t += h
        times.append(t)
        stock.append(x_new)
        if detector is not None and not absorbed:
            r = standardized_residual(x_new, x, natural, q, sigma, h)
            if detector.update(r, h):
                x = x_new
                break
        x = x_new
        if absorbed:
            absorbed_at = t
            break
    if absorbed_at is not None:
        qs.append(0.0)
    else:
        active = policy if (late is None or t <= duration) else late
        qs.append(float(ControlledDrift(active, 0.0).extraction(min(t, end), x)))
    if theta is not None and not marks and theta <= t:
        marks.append((theta, post_change_lambda))
    return Trajectory(
        dt=cfg.dt,
        times=np.array(times),
        stock=np.array(stock),
        extraction=np.array(qs),
        regime_id=np.full(len(times), regime_id, dtype=int),
        regime_marks=marks,
        absorbed_at=absorbed_at,
        alarm_time=detector.alarm_time if detector is not None else None,
    )


# -- ensembles --------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """An ensemble experiment for ``monte_carlo``.

    ``theta`` is None (no change), a fixed change time, or "uniform" for
    U[0, tolerance_T] clipped to the duration. With ``detect_lambda`` and
    ``nu`` a CUSUM runs on every path's residuals.
    """

    x0: float
    drift: float
    sigma: float
    duration: float
    policy: object = None
    post_change_lambda: float = 0.0
    theta: float | str | None = None
    tolerance_T: float | None = None
    detect_lambda: float | None = None
    nu: float | None = None
    corrected_threshold: bool = True
    stop_at_event: bool = False
    record_every: int = 1


@dataclass
class EnsembleSummary:
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    absorption_frequency: float
    absorbed_at: np.ndarray
    alarm_times: np.ndarray
    theta: np.ndarray
    final_stock: np.ndarray


def monte_carlo(scenario: Scenario, cfg: SimConfig) -> EnsembleSummary:
    """Vectorized ensemble of ``cfg.n_paths`` paths; deterministic in ``cfg.seed``.

    Event arrays hold NaN for paths where the event did not happen.
    """
    if cfg.n_paths < 2:
        raise ValueError("monte_carlo needs n_paths >= 2")
    sc = scenario
    n = cfg.n_paths
    noise_seq, event_seq = _stream_seeds(cfg.seed)
    noise = NoiseSource(noise_seq, n)
    if sc.theta == "uniform":
        theta = sample_change_times(event_seq, n, sc.tolerance_T, sc.duration)
    elif sc.theta is None:
        theta = np.full(n, np.inf)
    else:
        theta = np.full(n, float(sc.theta))
    detecting = sc.detect_lambda is not None
    if detecting:
        lam = sc.detect_lambda
        det = CusumDetector.for_sampling(lam, sc.nu, cfg.dt, sc.corrected_threshold)
        threshold = det.threshold
        u = np.zeros(n)
        umin = np.zeros(n)
    x = np.full(n, float(sc.x0))
    alive = np.ones(n, dtype=bool)
    running = np.ones(n, dtype=bool)
    absorbed_at = np.full(n, np.nan)
    alarm = np.full(n, np.nan)
    steps = _step_grid(sc.duration, cfg.dt)
    rec_t, rec_mean, rec_var = [0.0], [float(x.mean())], [float(x.var(ddof=1))]
    t = 0.0
    for k, h in enumerate(steps):
        z = noise.draw(running)
        natural = sc.drift + np.where(t >= theta, sc.post_change_lambda, 0.0)
        drift = ControlledDrift(sc.policy, natural)
        q = drift.extraction(t, x)
        if cfg.stepper == EULER:
            x_new, hit = euler_step(x, t, lambda s, y: natural - q, sc.sigma, h, z)
        else:
            x_new, hit = shoji_ozaki_step(x, t, drift.jet, sc.sigma, h, z)
        x_new = np.where(running, x_new, x)
        hit &= running
        if detecting:
            r = standardized_residual(x_new, x, sc.drift, q, sc.sigma, h)
            u = np.where(running & alive & ~hit, u + lam * r * math.sqrt(h) - 0.5 * lam * lam * h, u)
            umin = np.minimum(umin, u)
            fired = running & np.isnan(alarm) & (u - umin >= threshold)
            alarm[fired] = t + h
        t += h
        newly = hit & alive
        absorbed_at[newly] = t
        alive &= ~hit
        x = np.where(alive, x_new, 0.0)
        if sc.stop_at_event:
            running = alive & (np.isnan(alarm) if detecting else True)
            if not running.any():
                rec_t.append(t)
                rec_mean.append(float(x.mean()))
                rec_var.append(float(x.var(ddof=1)))
                break
        if (k + 1) % sc.record_every == 0 or k == len(steps) - 1:
            rec_t.append(t)
            rec_mean.append(float(x.mean()))
            rec_var.append(float(x.var(ddof=1)))
    return EnsembleSummary(
        times=np.array(rec_t),
        mean=np.array(rec_mean),
        variance=np.array(rec_var),
        absorption_frequency=float(np.mean(~np.isnan(absorbed_at))),
        absorbed_at=absorbed_at,
        alarm_times=alarm,
        theta=np.where(np.isfinite(theta), theta, np.nan),
        final_stock=x,
    )
