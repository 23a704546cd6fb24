"""Command-line entry point.

Subcommands write CSV files (and optionally matplotlib scripts) into the
output directory.  Every file starts with ``#`` header lines carrying the
config hash, seed, tool version and CPI length.

Exit codes: 0 success, 1 oracle check failed, 2 configuration error,
3 infeasible at every point, 4 a solve hit its iteration budget.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .benchmarks import (Scheme, applicable_schemes, benchmark_boundary, benchmark_rate_at,
                         default_knob_grid)
from .boundary import SweepSpec, feasibility_range, pareto_sweep, solve
from .channel import rician_channel
from .config import ConfigError, RunConfig, load_config
from .corner import crb_min, rate_max_waterfill
from .metrics import Metric
from .oracle import grid_oracle_diagonal, grid_oracle_hermitian
from .outcome import InfeasibleError, Status

log = logging.getLogger("crbrate")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_MAXITER = 0, 1, 2, 3, 4


def fmt(x) -> str:
    """17 significant digits, locale independent; infinities as ``inf``."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def write_csv(path: Path, cfg: RunConfig, command: str, columns: Sequence[str],
              rows: Iterable[Sequence], notes: Sequence[str] = ()) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# tool: crbrate {__version__}\n")
        fh.write(f"# command: {command}\n")
        fh.write(f"# config_hash: {cfg.config_hash()}\n")
        fh.write(f"# seed: {cfg.params.seed}\n")
        fh.write(f"# cpi_len: {cfg.params.cpi_len}\n")
        for note in notes:
            fh.write(f"# {note}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _channel(cfg: RunConfig, params=None):
    return rician_channel(params or cfg.params, cfg.theta_rx, cfg.theta_tx)


# ---------------------------------------------------------------- corner

def cmd_corner(cfg: RunConfig) -> int:
    ch = _channel(cfg)
    p = cfg.params
    rows = []
    wf = rate_max_waterfill(ch, p)
    for met in cfg.scenarios:
        cm = crb_min(ch, p, met, eps=cfg.eps)
        rows.append([met.label, "rate_max", wf.crb[met], wf.rate, None,
                     float(np.real(np.trace(wf.q)))])
        rows.append([met.label, "crb_min", cm.crb[met], cm.rate, cm.eta,
                     float(np.real(np.trace(cm.q)))])
    write_csv(cfg.out_dir / "corners.csv", cfg, "corner",
              ["scenario", "kind", "gamma", "rate", "eta", "trace_q"], rows,
              ["logdet gamma values are natural logarithms"])
    return EXIT_OK


# ---------------------------------------------------------------- boundary

PLOT_TEMPLATE = '''\
"""Plot {csv_name}; generated by crbrate {version}."""
import csv
import matplotlib.pyplot as plt

rows = {{}}
with open({csv_name!r}) as fh:
    lines = [ln for ln in fh if not ln.startswith("#")]
for rec in csv.DictReader(lines):
    g = float(rec["crb_achieved"])
    if g != float("inf"):
        rows.setdefault(rec["scheme"], []).append((g, float(rec["rate"])))
fig, ax = plt.subplots()
for scheme, pts in rows.items():
    pts.sort()
    ax.plot([p[0] for p in pts], [p[1] for p in pts], marker=".", label=scheme)
ax.set_xscale({xscale!r})
ax.set_xlabel({xlabel!r})
ax.set_ylabel("rate (bits/s/Hz)")
ax.grid(True, which="both", alpha=0.3)
ax.legend()
fig.savefig({png!r}, dpi=150)
'''


def cmd_boundary(cfg: RunConfig) -> int:
    ch = _channel(cfg)
    p = cfg.params
    any_points, any_maxiter = False, False
    knobs = default_knob_grid(cfg.knob_points)
    for met in cfg.scenarios:
        spec = SweepSpec(met, cfg.n_points, cfg.spacing, cfg.gamma_lo, cfg.gamma_hi)
        pts = pareto_sweep(spec, ch, p, eps=cfg.eps)
        any_points |= bool(pts)
        any_maxiter |= any(pt.status is Status.MAX_ITERATIONS for pt in pts)
        rows = [[pt.gamma, pt.rate, pt.crb_achieved, pt.constraint_active, "optimal"]
                for pt in pts]
        usable = applicable_schemes(ch, p, met)
        for scheme in cfg.schemes:
            if scheme not in usable:
                continue
            for b in benchmark_boundary(scheme, ch, p, met, knobs, eps=cfg.eps):
                rows.append([b.crb, b.rate, b.crb, None, scheme.value])
        name = f"boundary_{met.label}.csv"
        notes = [f"scenario: {met.label}",
                 "time_switch crb evaluated at the time-averaged covariance"]
        lo, hi = feasibility_range(met, ch, p)
        if not math.isfinite(hi):
            notes.append("sweep capped: rate-optimal crb is unbounded")
        write_csv(cfg.out_dir / name, cfg, "boundary",
                  ["gamma", "rate", "crb_achieved", "active", "scheme"], rows, notes)
        if cfg.plot:
            script = PLOT_TEMPLATE.format(
                csv_name=name, version=__version__,
                xscale="linear" if met is Metric.LOG_DET else "log",
                xlabel="ln CRB" if met is Metric.LOG_DET else "CRB",
                png=name.replace(".csv", ".png"))
            (cfg.out_dir / name.replace(".csv", "_plot.py")).write_text(script)
    if not any_points:
        return EXIT_INFEASIBLE
    return EXIT_MAXITER if any_maxiter else EXIT_OK


# ---------------------------------------------------------------- rate vs snr

def cmd_rate_vs_snr(cfg: RunConfig) -> int:
    met = cfg.scenarios[0]
    gamma = cfg.gammas[met]
    ch = _channel(cfg)
    grid = np.linspace(cfg.snr_lo, cfg.snr_hi, cfg.snr_points)
    rows, feasible, maxiter = [], 0, False
    for snr in grid:
        p = cfg.params.replace(power=cfg.params.noise_comm * 10.0 ** (snr / 10.0))
        rows.append([snr, "crb_min", crb_min(ch, p, met, eps=cfg.eps).rate, "reference"])
        rows.append([snr, "rate_max", rate_max_waterfill(ch, p).rate, "reference"])
        try:
            res = solve(ch, p, met, gamma, eps=cfg.eps)
            rows.append([snr, "optimal", res.rate, res.status.value])
            feasible += 1
            maxiter |= res.status is Status.MAX_ITERATIONS
        except InfeasibleError:
            rows.append([snr, "optimal", math.nan, "infeasible"])
        usable = applicable_schemes(ch, p, met)
        for scheme in cfg.schemes:
            if scheme not in usable:
                continue
            r = benchmark_rate_at(scheme, ch, p, met, gamma,
                                  default_knob_grid(cfg.knob_points), eps=cfg.eps)
            rows.append([snr, scheme.value, r, "infeasible" if math.isnan(r) else "ok"])
    write_csv(cfg.out_dir / "rate_vs_snr.csv", cfg, "rate-vs-snr",
              ["snr_db", "scheme", "rate", "status"], rows,
              [f"scenario: {met.label}", f"gamma: {fmt(gamma)}"])
    if feasible == 0:
        return EXIT_INFEASIBLE
    return EXIT_MAXITER if maxiter else EXIT_OK


# ---------------------------------------------------------------- power alloc

def cmd_power_alloc(cfg: RunConfig) -> int:
    ch = _channel(cfg)
    p = cfg.params
    wf = rate_max_waterfill(ch, p).power_alloc
    eq = np.full(p.m_tx, p.power / p.m_tx)
    rows, solved, maxiter = [], 0, False
    for met in cfg.scenarios:
        if not met.extended:
            log.info("power allocation is reported for extended-target scenarios only")
            continue
        try:
            res = solve(ch, p, met, cfg.gammas[met])
        except InfeasibleError as exc:
            log.warning("%s: %s", met.label, exc)
            continue
        solved += 1
        maxiter |= res.status is Status.MAX_ITERATIONS
        for k in range(p.m_tx):
            rows.append([met.label, k + 1, res.power_alloc[k], wf[k], eq[k]])
    write_csv(cfg.out_dir / "power_alloc.csv", cfg, "power-alloc",
              ["scenario", "subchannel", "p_optimal", "p_waterfill", "p_equal"], rows,
              [f"rank_r: {ch.rank_r}"])
    if solved == 0:
        return EXIT_INFEASIBLE
    return EXIT_MAXITER if maxiter else EXIT_OK


# ---------------------------------------------------------------- oracle check

def _mid_gamma(met, lo, hi, params):
    if met is Metric.LOG_DET:
        if not math.isfinite(hi):
            hi = lo + params.m_tx * params.n_rx_sense * math.log(10.0)
        return lo + 0.5 * (hi - lo)
    if not math.isfinite(hi):
        hi = lo * 10.0
    return math.sqrt(lo * hi)


def cmd_oracle_check(cfg: RunConfig) -> int:
    base = cfg.params
    if base.m_tx > 3:
        raise ConfigError(f"oracle-check needs m_tx <= 3, got {base.m_tx}")
    rows, worst, ok_all = [], 0.0, True
    for k in range(cfg.oracle_instances):
        p = base.replace(seed=base.seed + k)
        ch = _channel(cfg, p)
        for met in cfg.scenarios:
            if met is Metric.POINT_ANGLE and p.m_tx != 2:
                continue
            lo, hi = feasibility_range(met, ch, p)
            gamma = _mid_gamma(met, lo, hi, p)
            res = solve(ch, p, met, gamma, eps=cfg.eps)
            solver_rate = res.rate - cfg.oracle_perturb
            if met is Metric.POINT_ANGLE:
                rep = grid_oracle_hermitian(ch, p, gamma, steps=cfg.oracle_steps)
            else:
                rep = grid_oracle_diagonal(ch, p, met, gamma)
            dev = abs(rep.best_rate - solver_rate)
            passed = dev <= cfg.oracle_tolerance
            ok_all &= passed
            worst = max(worst, dev)
            rows.append([met.label, k, p.seed, gamma, solver_rate, rep.best_rate, dev,
                         "PASS" if passed else "FAIL"])
    verdict = "PASS" if ok_all else "FAIL"
    write_csv(cfg.out_dir / "oracle_report.csv", cfg, "oracle-check",
              ["scenario", "instance", "seed", "gamma", "solver_rate", "oracle_rate",
               "deviation", "result"], rows,
              [f"tolerance: {fmt(cfg.oracle_tolerance)}", f"max_deviation: {fmt(worst)}",
               f"verdict: {verdict}"])
    print(f"oracle-check {verdict}: max deviation {worst:.3e} bits over {len(rows)} solves")
    return EXIT_OK if ok_all else EXIT_CHECK_FAILED


COMMANDS = {
    "corner": cmd_corner,
    "boundary": cmd_boundary,
    "rate-vs-snr": cmd_rate_vs_snr,
    "power-alloc": cmd_power_alloc,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crbrate",
                                 description="CRB-rate tradeoff of MIMO sensing and communication")
    ap.add_argument("--version", action="version", version=f"crbrate {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--scenario", help="point, trace, maxeig or logdet (comma list)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--points", type=int, help="sweep / SNR grid size")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.scenario is not None:
        overrides["scenario.scenarios"] = args.scenario
    if args.seed is not None:
        overrides["system.seed"] = str(args.seed)
    if args.points is not None:
        overrides["sweep.n_points"] = str(args.points)
        overrides["snr.n_points"] = str(args.points)
    if args.out is not None:
        overrides["output.out_dir"] = args.out
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"crbrate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
