"""Command-line scenario runner.

``diffcp KIND [--config PATH] [--out DIR] [--seedless] [--dry-run] [key=value ...]``

Exit codes: 0 when every check passes, 1 on a failed check or numerical
failure, 2 on a configuration or usage error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import checks as ck
from . import gaussian_tails as gt
from .config import (KINDS, ConfigError, ScenarioConfig, apply_overrides, build_init, load_config,
                     validate)
from .trajectory import write_csv

log = logging.getLogger("diffcp")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class _Outputs:
    """Write-once CSV sink rooted at one run directory."""

    def __init__(self, root: Path):
        self.root = root
        self.written = []

    def write(self, name, header, rows):
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        write_csv(header, rows, path)
        self.written.append(path)
        return path


def _numerical_errors():
    from .classical import ClassicalError
    from .exitcost import CoverageError
    from .gaussian_tails import RiccatiBlowupError
    from .halfline import HalfLineError
    from .measures import DensityError, TailExhaustedError
    from .wholeline import WholeLineError

    return (ClassicalError, CoverageError, RiccatiBlowupError, HalfLineError, DensityError,
            TailExhaustedError, WholeLineError, ArithmeticError)


def _run_appendix(cfg, out):
    z = np.arange(-6.0, 6.0 + 1e-9, 0.5)
    rows = [(v, gt.conditional_mean(v), gt.second_moment(v), gt.second_moment_identity(v),
             gt.scaled_ks_to_exponential(v)) for v in z]
    out.write("conditional_tails.csv", ["z", "m", "second_moment", "identity_residual", "ks_exp"],
              rows)
    return ck.appendix_checks(cfg.tol)


def _run_classical(cfg, out):
    from .classical import evolve_classical

    init = build_init(cfg.init, "classical")
    traj = evolve_classical(init, cfg.t_end, cfg.dt, record_every=cfg.record_every)
    out.write("trajectory.csv", *_traj_table(traj, ("t", "Lambda", "dLambda_dt", "beta_at_0",
                                                     "ks_exp", "residual")))
    beta = cfg.init.params[0] if cfg.init.family == "selfsimilar" else None
    return ck.classical_checks(traj, beta, cfg.tol)


def _traj_table(traj, columns):
    return list(columns), list(zip(*(traj.array(c) for c in columns)))


def _wholeline(cfg, stop_ratio=None):
    from .wholeline import evolve_wholeline

    init = build_init(cfg.init, "wholeline")
    t_end = cfg.t_end if cfg.t_end is not None else math.inf
    return evolve_wholeline(init, cfg.eps, t_end, cfg.dt,
                            dt_factor=cfg.dt_factor or 0.01,
                            stop_ratio=stop_ratio or cfg.stop_ratio,
                            record_every=cfg.record_every)


def _run_wholeline(cfg, out):
    from .wholeline import TRAJECTORY_COLUMNS, asymptotic_conditions

    traj = _wholeline(cfg)
    out.write("trajectory.csv", *_traj_table(traj, TRAJECTORY_COLUMNS + ("residual",)))
    try:
        cond = asymptotic_conditions(traj)
        out.write("conditions.csv", ["condition", "value"],
                  [(k, float(v)) for k, v in cond.rows()])
    except ValueError as e:
        log.warning("kernel-moment conditions skipped: %s", e)
    return ck.wholeline_checks(traj, cfg.tol)


def _grid(cfg):
    from .halfline import GridConfig

    return GridConfig(h0=cfg.min_spacing, alpha=cfg.grading, dt_factor=cfg.dt_factor,
                      x_max=cfg.x_max)


def _halfline(cfg, grid=None, t_end=None, stop_ratio=None):
    from .halfline import evolve_halfline

    init = build_init(cfg.init, "halfline")
    if t_end is None:
        t_end = cfg.t_end if cfg.t_end is not None else math.inf
        stop_ratio = cfg.stop_ratio
    return evolve_halfline(init, cfg.eps, t_end, grid or _grid(cfg), stop_ratio=stop_ratio,
                           record_every=cfg.record_every)


def _bounds(cfg, traj, grid, out=None):
    from .halfline import coarsening_bounds_check

    rep = coarsening_bounds_check(traj, lemma_eps=cfg.eps, grid=grid)
    if out is not None:
        out.write("bounds.csv", ["quantity", "value"], [("t0", rep.t0)] + rep.rows())
    return rep


def _run_halfline(cfg, out):
    from .halfline import TRAJECTORY_COLUMNS

    grid = _grid(cfg)
    traj = _halfline(cfg, grid)
    out.write("trajectory.csv", *_traj_table(traj, TRAJECTORY_COLUMNS))
    res = ck.halfline_checks(traj, cfg.tol)
    rep = _bounds(cfg, traj, grid, out)
    res += ck.bounds_checks(rep, cfg.tol)
    if cfg.refine:
        fine = _halfline(cfg, grid.refined(cfg.eps), t_end=traj.times[-1])
        change = abs(fine.lam[-1] / traj.lam[-1] - 1.0)
        res.append(ck.check("refinement_change_of_final_lambda", change, "<",
                            cfg.tol.get("refine", 0.005)))
        fine_rep = _bounds(cfg, fine, grid.refined(cfg.eps))
        res.append(ck.check("refinement_change_of_beta_ceiling",
                            abs(fine_rep.beta_ceiling / rep.beta_ceiling - 1.0), "<",
                            cfg.tol.get("beta_ceiling_refine", 0.05)))
    return res


def _run_oracle(cfg, out):
    res, rows = ck.oracle_checks(cfg.eps, 1.0, cfg.tol)
    out.write("green_const_drift.csv", ["x", "finite_volume", "closed_form"], rows)
    return res


def _run_qcost(cfg, out):
    res, const_rows, hist_rows = ck.qcost_checks(cfg.x_values, cfg.horizon, cfg.tol)
    out.write("exit_cost_constant_drift.csv",
              ["x", "q_bruteforce", "q_characteristics", "q_exact"], const_rows)
    out.write("exit_cost.csv", ["x", "q_bruteforce", "q_characteristics", "q_lower", "q_upper"],
              hist_rows)
    return res


def _run_report(cfg, out):
    from .halfline import TRAJECTORY_COLUMNS, q_limit_check
    from .wholeline import TRAJECTORY_COLUMNS as WL_COLUMNS, log_rate_check

    grid = _grid(cfg)
    traj = _halfline(cfg, grid)
    out.write("halfline_trajectory.csv", *_traj_table(traj, TRAJECTORY_COLUMNS))
    rep = _bounds(cfg, traj, grid, out)
    res = ck.bounds_checks(rep, cfg.tol)
    q = q_limit_check(traj, cfg.eps, cfg.y, cfg.x_values)
    rows = []
    for i, T in enumerate(q.horizons):
        for j, x in enumerate(q.x):
            rows.append((T, x, q.q[i, j], q.q_over_2x[i, j], q.lower[i, j], q.upper[i, j]))
    out.write("exit_cost_limit.csv", ["T", "x", "q", "q_over_2x", "lower", "upper"], rows)
    res += ck.qlimit_checks(q, tol=cfg.tol)
    wl_cfg = ScenarioConfig(kind="wholeline", eps=cfg.eps, init=_wholeline_init(cfg),
                            dt_factor=0.01, record_every=cfg.record_every)
    wl = _wholeline(wl_cfg, stop_ratio=cfg.tol.get("log_rate_ratio", 2000.0))
    out.write("wholeline_trajectory.csv", *_traj_table(wl, WL_COLUMNS))
    lr = log_rate_check(wl)
    out.write("log_rate.csv", ["T", "deviation", "an2_ratio"], zip(lr.t, lr.deviation,
                                                                  lr.an2_ratio))
    # report only: printed, not gated
    print(f"REPORT  log-rate deviation over final decade: {lr.decade_start:.6g} -> "
          f"{lr.decade_end:.6g} ({'shrinking' if lr.shrinking else 'not shrinking'})")
    return res


def _wholeline_init(cfg):
    from .config import InitSpec

    if cfg.init.family == "lemma":
        return InitSpec("uniform", (0.0, 1.0))
    return cfg.init


_RUNNERS = {"appendix": _run_appendix, "classical": _run_classical,
            "wholeline": _run_wholeline, "halfline": _run_halfline, "oracle": _run_oracle,
            "qcost": _run_qcost, "report": _run_report}


def run_scenario(cfg: ScenarioConfig, out_dir) -> tuple[int, list]:
    """Run ``cfg`` writing CSVs into ``out_dir``; returns ``(exit_code, checks)``."""
    root = Path(out_dir)
    if root.exists() and any(root.iterdir()):
        raise FileExistsError(f"output directory {root} is not empty")
    out = _Outputs(root)
    try:
        res = _RUNNERS[cfg.kind](cfg, out)
    except _numerical_errors() as e:
        log.error("numerical failure: %s", e)
        res = [ck.check(f"numerical_failure: {type(e).__name__}", math.nan, "<", 0.0)]
        out.write("summary.csv", ["check", "value", "relation", "bound", "result"],
                  [(c.name, c.value, c.relation, c.bound, "fail") for c in res])
        return EXIT_FAIL, res
    ck.summary_csv(res, root / "summary.csv")
    return (EXIT_OK if all(c.passed for c in res) else EXIT_FAIL), res


def _parser():
    p = argparse.ArgumentParser(prog="diffcp", description=__doc__.splitlines()[0])
    p.add_argument("kind", choices=KINDS)
    p.add_argument("overrides", nargs="*", metavar="key=value")
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--out", type=Path, help="run directory (default runs/KIND)")
    p.add_argument("--seedless", action="store_true",
                   help="no-op: every algorithm is deterministic")
    p.add_argument("--dry-run", action="store_true",
                   help="resolve grids and estimate cost without computing")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.config is not None:
            cfg = load_config(args.config, args.overrides)
            if cfg.kind != args.kind:
                raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand "
                                  f"{args.kind!r}")
        else:
            cfg = apply_overrides(args.kind, args.overrides)
        diag = validate(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for w in diag.warnings:
        print(w, file=sys.stderr)
    if args.dry_run:
        print("\n".join(diag.lines))
        return EXIT_OK
    out_dir = args.out or (Path(cfg.out) if cfg.out else Path("runs") / cfg.kind)
    try:
        code, res = run_scenario(cfg, out_dir)
    except FileExistsError as e:
        print(f"output error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for c in res:
        print(c.line())
    print(f"{sum(c.passed for c in res)}/{len(res)} checks passed; outputs in {out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
