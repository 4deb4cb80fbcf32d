"""Finite-difference solver for the period HJB problem

    0 = V_t - rho V + max_q {(a - b q) q - c q^2/2 - F - q V_x} + m V_x + sigma^2/2 V_xx

on [0, x_max] with V(t, 0) = 0 and V(horizon, x) = terminal(x) (zero by default).

Time stepping is fully implicit; the first-order term is upwinded by the sign
of the controlled drift m - q, so the discrete operator is an M-matrix and the
scheme is monotone. The maximization is done pointwise in closed form and
iterated with the linear solve (policy iteration) at every time step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import GridTooCoarse, NonConvergence, ParameterMismatch
from .model_core import MarketParams, ResourceParams

MAX_SWEEPS = 200

_FORWARD, _BACKWARD, _NONE = 1, -1, 0


@dataclass
class HjbSolution:
    """Value and policy surfaces, indexed [time, stock]. Also usable as a policy."""

    x_grid: np.ndarray
    t_grid: np.ndarray
    V: np.ndarray
    q: np.ndarray
    pde_residual: float
    market: MarketParams
    sigma: float
    drift: float
    sweeps: int = 0

    @property
    def horizon(self) -> float:
        return float(self.t_grid[-1])

    @property
    def rho(self) -> float:
        return self.market.rho

    x_limit = math.inf

    def value_gradient(self):
        """Backward-difference V_x, zero at x = 0."""
        vx = np.zeros_like(self.V)
        vx[:, 1:] = np.diff(self.V, axis=1) / np.diff(self.x_grid)
        return vx

    def _locate(self, t, x):
        h = self.x_grid[1] - self.x_grid[0] if self.x_grid.size > 1 else 1.0
        k = self.t_grid[1] - self.t_grid[0]
        tt = np.clip(np.asarray(t, dtype=float), 0.0, self.horizon)
        xx = np.clip(np.asarray(x, dtype=float), 0.0, self.x_grid[-1])
        i = np.minimum((tt / k).astype(int), self.t_grid.size - 2)
        j = np.minimum((xx / h).astype(int), self.x_grid.size - 2)
        return i, j, tt / k - i, xx / h - j, h, k

    def extraction(self, t, x):
        """Bilinear interpolation of the policy surface; constant beyond x_max."""
        i, j, s, w, _, _ = self._locate(t, x)
        q = self.q
        out = ((1 - s) * ((1 - w) * q[i, j] + w * q[i, j + 1])
               + s * ((1 - w) * q[i + 1, j] + w * q[i + 1, j + 1]))
        return out if np.ndim(out) else float(out)

    def extraction_jet(self, t, x):
        i, j, s, w, h, k = self._locate(t, x)
        q = self.q
        lo = (1 - w) * q[i, j] + w * q[i, j + 1]
        hi = (1 - w) * q[i + 1, j] + w * q[i + 1, j + 1]
        val = (1 - s) * lo + s * hi
        q_t = (hi - lo) / k
        q_x = ((1 - s) * (q[i, j + 1] - q[i, j]) + s * (q[i + 1, j + 1] - q[i + 1, j])) / h
        beyond = np.asarray(x) >= self.x_grid[-1]
        q_x = np.where(beyond, 0.0, q_x)
        return val, q_x, q_t, np.zeros_like(val)


def _policy(V, h, m, market, shutdown):
    """Upwind policy from the current V (full vector, V[0] = 0).

    Returns (q, direction, profit) on interior nodes 1..N.
    """
    a, k = market.a, market.slope
    n = V.size - 1
    dF = np.empty(n)
    dF[:-1] = (V[2:] - V[1:-1]) / h
    dF[-1] = 0.0  # reflecting far field: ghost V[N+1] = V[N]
    dB = (V[1:] - V[:-1]) / h
    qF = np.maximum((a - dF) / k, 0.0)
    qB = np.maximum((a - dB) / k, 0.0)
    driftF, driftB = m - qF, m - qB
    HF = market.profit(qF) + driftF * dF
    HB = market.profit(qB) + driftB * dB
    useF = driftF > 0
    useB = driftB < 0
    both = useF & useB
    useF = np.where(both, HF >= HB, useF)
    useB = useB & ~useF
    q = np.where(useF, qF, np.where(useB, qB, max(m, 0.0)))
    direction = np.where(useF, _FORWARD, np.where(useB, _BACKWARD, _NONE))
    profit = market.profit(q)
    if shutdown:
        # idle option: no extraction and no fixed cost
        d_idle = np.where(m > 0, dF, np.where(m < 0, dB, 0.0))
        H = profit + np.where(direction == _FORWARD, driftF * dF,
                              np.where(direction == _BACKWARD, driftB * dB, 0.0))
        idle = m * d_idle > H
        q = np.where(idle, 0.0, q)
        profit = np.where(idle, 0.0, profit)
        direction = np.where(idle, int(np.sign(m)), direction)
    return q, direction, profit


def _bands(q, direction, m, sigma, h):
    diff = 0.5 * sigma * sigma / (h * h)
    drift = m - q
    up = diff + np.where(direction == _FORWARD, drift, 0.0) / h
    lo = diff + np.where(direction == _BACKWARD, -drift, 0.0) / h
    if np.any(up < 0) or np.any(lo < 0):
        raise GridTooCoarse("negative off-diagonal coefficient in the HJB operator")
    return lo, up


def _assemble(lo, up, diag_extra):
    n = lo.size
    ab = np.zeros((3, n))
    diag = lo + up + diag_extra
    diag[-1] -= up[-1]  # ghost node folds the upward flux back
    ab[1] = diag
    ab[0, 1:] = -up[:-1]
    ab[2, :-1] = -lo[1:]
    return ab


def _apply(ab, v):
    out = ab[1] * v
    out[:-1] += ab[0, 1:] * v[1:]
    out[1:] += ab[2, :-1] * v[:-1]
    return out


def solve_hjb(market: MarketParams, resource: ResourceParams, drift_offset: float,
              horizon: float, x_max: float, nx: int, nt: int, terminal=None,
              shutdown: bool = False, tol: float = 1e-11) -> HjbSolution:
    """Backward time-march of the HJB on an (nt + 1) x nx grid.

    ``terminal`` is an optional callable giving V(horizon, x). With
    ``shutdown`` the firm may idle (q = 0, no fixed cost) when operating at
    a loss, which keeps V >= 0 for any F.
    """
    if nx < 16 or nt < 16:
        raise GridTooCoarse("nx and nt must be >= 16")
    x = np.linspace(0.0, x_max, nx)
    t = np.linspace(0.0, horizon, nt + 1)
    h = x[1] - x[0]
    dt = t[1] - t[0]
    m = resource.mu + drift_offset
    sigma = resource.sigma
    V = np.zeros((nt + 1, nx))
    Q = np.zeros((nt + 1, nx))
    if terminal is not None:
        V[-1] = np.asarray(terminal(x), dtype=float)
        V[-1, 0] = 0.0
    Q[-1, 1:] = _policy(V[-1], h, m, market, shutdown)[0]
    diag_extra = np.full(nx - 1, 1.0 / dt + market.rho)
    residual = 0.0
    total_sweeps = 0
    for n in range(nt - 1, -1, -1):
        nxt = V[n + 1, 1:]
        guess = V[n + 1].copy()
        prev = None
        for sweep in range(MAX_SWEEPS):
            q, direction, profit = _policy(guess, h, m, market, shutdown)
            lo, up = _bands(q, direction, m, sigma, h)
            ab = _assemble(lo, up, diag_extra)
            rhs = nxt / dt + profit
            sol = solve_banded((1, 1), ab, rhs)
            change = np.max(np.abs(sol - guess[1:]))
            guess[1:] = sol
            key = (q, direction)
            same = prev is not None and np.array_equal(prev[1], direction) and np.allclose(
                prev[0], q, rtol=0, atol=1e-13)
            prev = key
            if same or change <= tol * (1.0 + np.max(np.abs(sol))):
                break
        else:
            raise NonConvergence(f"policy iteration did not converge at t={t[n]:.6g}")
        total_sweeps += sweep + 1
        V[n] = guess
        q, direction, profit = _policy(guess, h, m, market, shutdown)
        Q[n, 1:] = q
        lo, up = _bands(q, direction, m, sigma, h)
        ab = _assemble(lo, up, diag_extra)
        res = _apply(ab, guess[1:]) - (nxt / dt + profit)
        residual = max(residual, float(np.max(np.abs(res[:-1]))) if res.size > 1 else 0.0)
    return HjbSolution(x_grid=x, t_grid=t, V=V, q=Q, pde_residual=residual,
                       market=market, sigma=sigma, drift=m, sweeps=total_sweeps)


def _same(u, v):
    return math.isclose(u, v, rel_tol=1e-12, abs_tol=1e-14)


def compare_policies(closed, oracle: HjbSolution, nx: int = 81, nt: int = 41) -> dict:
    """Sup and RMS gaps between two policies on x in [0.1, 0.9] x_max, t in [0, 0.9] horizon.

    Points outside the closed form's domain are skipped and counted.
    """
    fields = [
        ("sigma", closed.sigma, oracle.sigma),
        ("drift", closed.drift, oracle.drift),
        ("horizon", closed.horizon, oracle.horizon),
        ("rho", closed.market.rho, oracle.market.rho),
    ]
    fields += [(name, getattr(closed.market, name), getattr(oracle.market, name))
               for name in ("a", "b", "c", "F")]
    bad = [name for name, u, v in fields if not _same(u, v)]
    if bad:
        raise ParameterMismatch("parameters differ: " + ", ".join(bad))
    x_max = oracle.x_grid[-1]
    xs = np.linspace(0.1 * x_max, 0.9 * x_max, nx)
    ts = np.linspace(0.0, 0.9 * oracle.horizon, nt)
    inside = xs < getattr(closed, "x_limit", math.inf)
    T, X = np.meshgrid(ts, xs[inside], indexing="ij")
    gap = np.asarray(closed.extraction(T, X)) - np.asarray(oracle.extraction(T, X))
    return {
        "sup_gap": float(np.max(np.abs(gap))) if gap.size else math.nan,
        "l2_gap": float(np.sqrt(np.mean(gap ** 2))) if gap.size else math.nan,
        "points": int(gap.size),
        "skipped_x": int(np.count_nonzero(~inside)),
        "far_field_closed": float(np.asarray(closed.extraction(0.0, xs[inside][-1]))) if inside.any() else math.nan,
        "far_field_oracle": float(oracle.extraction(0.0, xs[-1])),
    }
