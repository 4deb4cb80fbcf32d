"""Command-line scenario runner.

    regime-harvest simulate --config cfg.json [--seed N] [--out DIR] [--format csv|svg]
    regime-harvest policy-surface --config cfg.json
    regime-harvest catastrophe --config cfg.json
    regime-harvest detect --config cfg.json --data obs.csv

Exit codes: 0 success, 2 configuration or input error, 1 runtime error.
The output directory defaults to $REGIME_HARVEST_OUT, then output.dir in the
config, then ./out.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import catastrophe as cat
from . import config as cfgmod
from .detection import CusumDetector, cusum_path, solve_threshold, standardized_residual
from .errors import ConfigError, HarvestError
from .model_core import RegimeState, ResourceParams
from .policy import resource_rent
from .sequential import _closed_form, run_episode

OUT_ENV = "REGIME_HARVEST_OUT"
SCHEMA_VERSION = 1


# -- output helpers -------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return format(v, ".12g")
    return str(v)


def write_csv(path: Path, name: str, header, rows, seed, digest, extra: dict | None = None):
    """CSV with a '#' metadata line: schema name/version, seed and config digest."""
    meta = f"# schema=regime_harvest.{name}/{SCHEMA_VERSION} seed={seed} config={digest}"
    if extra:
        meta += "".join(f" {k}={_fmt(v)}" for k, v in extra.items())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(meta + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _svg(path: Path, draw):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "regime-harvest"
    fig, ax = plt.subplots(figsize=(7, 4))
    draw(ax)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# -- subcommands ------------------------------------------------------------------------

def cmd_simulate(cfg, out: Path, seed: int, fmt: str):
    traj_rows, event_rows, paths = [], [], []
    for k in range(cfg.episode.n_episodes):
        res = run_episode(cfg.market, cfg.resource, cfg.episode_config(seed + k))
        tr = res.trajectory
        paths.append((k, tr))
        for t, x, q, r in zip(tr.times, tr.stock, tr.extraction, tr.regime_id):
            traj_rows.append((k, t, x, q, r))
        for rec in res.records:
            rep = rec.catastrophe
            event_rows.append((
                k, rec.index, rec.start_time, rec.detection_time, rec.horizon, rec.lam,
                rec.planning_drift, rec.theta, rec.alarm_time, rec.start_stock, rec.end_stock,
                rec.next_lambda, rec.policy_kind,
                rep.classification if rep else None, rep.at_risk if rep else None,
                rep.expected_hit_time if rep else None, res.termination,
            ))
        if not res.records:
            event_rows.append((k, None, None, None, None, None, None, None, None, None, None,
                               None, None, None, None, None, res.termination))
    write_csv(out / "trajectory.csv", "trajectory", ["episode", "t", "X", "q", "regime_id"],
              traj_rows, seed, cfg.digest())
    write_csv(out / "events.csv", "events",
              ["episode", "period", "start_time", "detection_time", "horizon", "lambda",
               "planning_drift", "theta", "alarm_time", "start_stock", "end_stock",
               "next_lambda", "policy", "classification", "at_risk", "expected_hit_time",
               "termination"], event_rows, seed, cfg.digest())
    if fmt == "svg":
        def draw(ax):
            for k, tr in paths:
                ax.plot(tr.times, tr.stock, lw=0.8, label=f"episode {k}")
            ax.set_xlabel("t")
            ax.set_ylabel("X")
            ax.legend(fontsize="small")
        _svg(out / "trajectory.svg", draw)


def cmd_policy_surface(cfg, out: Path, seed: int, fmt: str):
    s = cfg.surface
    xs = np.linspace(s.x_min, s.x_max, s.nx) if s.nx > 1 else np.array([float(s.x_min)])
    rows, curves = [], []
    for lam in s.lambdas:
        for horizon in s.horizons:
            policy = _closed_form(cfg.market, cfg.resource, float(lam), float(horizon))
            ok = xs < policy.x_limit
            q = np.full(xs.size, np.nan)
            rent = np.full(xs.size, np.nan)
            if ok.any():
                q[ok] = policy.extraction(s.t, xs[ok])
                rent[ok] = resource_rent(policy, s.t, xs[ok])
            curves.append((lam, horizon, q))
            rows += [(lam, horizon, x, qq, vv) for x, qq, vv in zip(xs, q, rent)]
    write_csv(out / "surface.csv", "surface", ["lambda", "horizon", "x", "q", "rent"],
              rows, seed, cfg.digest(), {"t": s.t})
    if fmt == "svg":
        def draw(ax):
            for lam, horizon, q in curves:
                ax.plot(xs, q, lw=0.9, label=f"lambda={lam:g}, horizon={horizon:g}")
            ax.set_xlabel("x")
            ax.set_ylabel("q*")
            ax.legend(fontsize="x-small")
        _svg(out / "surface.svg", draw)


def cmd_catastrophe(cfg, out: Path, seed: int, fmt: str):
    c = cfg.catastrophe
    if not c.scenarios:
        raise ConfigError("catastrophe.scenarios is empty")
    if c.extraction not in ("none", "optimal"):
        raise ConfigError("catastrophe.extraction must be 'none' or 'optimal'")
    ts = np.linspace(0.0, c.t_max, c.n_t)
    horizon = c.next_horizon if c.next_horizon is not None else c.t_max
    sigma = cfg.resource.sigma
    dens_rows, slice_rows, report_rows, curves = [], [], [], []
    for sc in c.scenarios:
        name, x0, drift = sc["name"], float(sc["x0"]), float(sc["drift"])
        regime = RegimeState(drift, period_start_stock=x0)
        policy = None
        if c.extraction == "optimal":
            res = ResourceParams(cfg.resource.mu, sigma, x0)
            policy = _closed_form(cfg.market, res, drift - cfg.resource.mu, horizon)
        rep = cat.classify(regime, x0, horizon, policy, sigma=sigma) if policy else _report_free(
            regime, x0, horizon, sigma)
        law = cat.ig_first_passage(x0, drift, sigma) if drift < 0 else None
        kfe = None
        if drift < 0:
            x_max = cat.default_x_max(x0, drift, sigma, c.t_max)
            kfe = cat.solve_kfe(policy, regime, c.t_max, x_max, c.nx, c.nt, x0=x0, sigma=sigma)
        for t in ts:
            row = [name, x0, drift, t, None, None, None, None]
            if law is not None:
                row[4], row[5] = float(law.pdf(t)), float(law.cdf(t))
                row[6] = float(np.interp(t, kfe.t_grid, kfe.first_passage_density))
                row[7] = float(np.interp(t, kfe.t_grid, kfe.first_passage_cdf))
            dens_rows.append(row)
        if kfe is not None:
            curves.append((name, law))
            for n in sorted({0, c.nt // 2}):
                for x, p in zip(kfe.x_grid, kfe.phi[n]):
                    slice_rows.append((name, kfe.t_grid[n], x, p))
        report_rows.append((name, x0, drift, horizon, rep.classification, rep.at_risk,
                            rep.expected_hit_time, rep.extinction_probability, rep.hit_probability,
                            rep.ig_mean, rep.ig_shape,
                            kfe.numeric_mean_hit_time if kfe is not None else None))
    d = cfg.digest()
    write_csv(out / "first_passage.csv", "first_passage",
              ["scenario", "x0", "drift", "t", "ig_density", "ig_cdf", "kfe_density", "kfe_cdf"],
              dens_rows, seed, d, {"extraction": c.extraction})
    write_csv(out / "kfe_slices.csv", "kfe_slices", ["scenario", "t", "x", "phi"],
              slice_rows, seed, d, {"extraction": c.extraction})
    write_csv(out / "catastrophe_report.csv", "catastrophe_report",
              ["scenario", "x0", "drift", "next_horizon", "classification", "at_risk",
               "expected_hit_time", "extinction_probability", "hit_probability", "ig_mean",
               "ig_shape", "kfe_mean_hit_time"], report_rows, seed, d,
              {"extraction": c.extraction})
    if fmt == "svg":
        def draw(ax):
            for name, law in curves:
                ax.plot(ts, law.pdf(ts), lw=0.9, label=name)
            ax.set_xlabel("time to catastrophe")
            ax.set_ylabel("density")
            ax.legend(fontsize="small")
        _svg(out / "first_passage.svg", draw)


def _report_free(regime, x0, horizon, sigma):
    """Classification with no extraction at all (q = 0)."""
    m = regime.cumulative_drift
    hit = float(cat.hitting_cdf(x0, m, sigma, horizon))
    if m >= 0:
        return cat.CatastropheReport(m, False, math.inf, cat.extinction_probability(x0, m, sigma),
                                     hit, math.nan, math.nan, cat.NONE)
    law = cat.ig_first_passage(x0, m, sigma)
    kind = cat.IRREVERSIBLE if law.mean <= horizon else cat.REVERSIBLE
    return cat.CatastropheReport(m, True, law.mean, 1.0, hit, law.mean, law.shape, kind)


def read_observations(path):
    """Columns t and X (q optional, defaulting to 0); '#' lines are skipped."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read data: {exc}") from None
    reader = csv.DictReader(lines)
    cols = reader.fieldnames or []
    for need in ("t", "X"):
        if need not in cols:
            raise ConfigError(f"data file is missing column {need!r}")
    t, x, q = [], [], []
    for k, row in enumerate(reader, start=1):
        try:
            t.append(float(row["t"]))
            x.append(float(row["X"]))
            q.append(float(row["q"]) if row.get("q") not in (None, "") else 0.0)
        except ValueError:
            raise ConfigError(f"data row {k}: non-numeric value") from None
    t, x, q = np.array(t), np.array(x), np.array(q)
    if t.size < 2:
        raise ConfigError("data file needs at least two rows")
    steps = np.diff(t)
    bad = np.flatnonzero(~np.isclose(steps, steps[0], rtol=1e-6, atol=1e-12) | (steps <= 0))
    if bad.size:
        rows = ", ".join(str(i + 2) for i in bad[:20])
        raise ConfigError(f"non-uniform time spacing at data rows {rows}")
    return t, x, q


def cmd_detect(cfg, out: Path, seed: int, fmt: str, data):
    if data is None:
        raise ConfigError("detect needs --data")
    t, x, q = read_observations(data)
    d = cfg.detect
    dt = float(t[1] - t[0])
    drift = cfg.resource.mu if d.drift is None else d.drift
    lam = d.lambda_target
    nu = solve_threshold(lam, cfg.detection.tolerance_T)
    det = CusumDetector.for_sampling(lam, nu, dt, d.corrected_threshold)
    z = standardized_residual(x[1:], x[:-1], drift, q[:-1], cfg.resource.sigma, dt)
    cs = cusum_path(z, lam, dt)
    hit = np.flatnonzero(cs >= det.threshold)
    alarm = float(t[hit[0] + 1] - t[0]) if hit.size else None
    rows = [(t[0], x[0], None, 0.0)] + list(zip(t[1:], x[1:], z, cs))
    meta = {"lambda": lam, "nu": nu, "threshold": det.threshold}
    write_csv(out / "detect.csv", "detect", ["t", "X", "residual", "cusum"], rows, seed,
              cfg.digest(), meta)
    write_csv(out / "detect_summary.csv", "detect_summary",
              ["lambda", "nu", "threshold", "alarm_time", "n_obs"],
              [(lam, nu, det.threshold, alarm, t.size)], seed, cfg.digest())
    if fmt == "svg":
        def draw(ax):
            ax.plot(t[1:], cs, lw=0.8)
            ax.axhline(det.threshold, ls="--", lw=0.8)
            ax.set_xlabel("t")
            ax.set_ylabel("CUSUM")
        _svg(out / "detect.svg", draw)


COMMANDS = {
    "simulate": cmd_simulate,
    "policy-surface": cmd_policy_surface,
    "catastrophe": cmd_catastrophe,
    "detect": cmd_detect,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regime-harvest",
                                description="Resource extraction under detected regime shifts.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON scenario file")
        sp.add_argument("--seed", type=int, default=None, help="overrides sim.seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--format", choices=("csv", "svg"), default="csv",
                        help="svg also writes a figure next to the CSVs")
        if name == "detect":
            sp.add_argument("--data", required=True, help="CSV with columns t, X[, q]")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config)
    except ConfigError as exc:
        print(f"config error: {args.config}: {exc}", file=sys.stderr)
        return 2
    seed = cfg.sim.seed if args.seed is None else args.seed
    out = Path(args.out or os.environ.get(OUT_ENV) or cfg.output.dir or "out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "detect":
            cmd_detect(cfg, out, seed, args.format, args.data)
        else:
            COMMANDS[args.command](cfg, out, seed, args.format)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HarvestError, ValueError, OSError) as exc:
        print(f"error in {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
