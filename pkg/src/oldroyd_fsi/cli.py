"""Command line entry point: ``oldroyd-fsi <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 degeneracy, 4 solver
failure, 5 failed check. Failures print one ``error:`` line to stderr with
``key=value`` fields.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import selfcheck
from .analysis import decay_report, eps_sweep
from .config import ConfigError, initial_state, load_config
from .coupling import run_trajectory
from .fluid import SolverError
from .geometry import DegeneracyError
from .kinetic import (KineticError, QGrid, closure_oracle, extra_stress, gaussian_state,
                      run_kinetic)
from .algebra import frobenius
from .records import write_csv

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4, 5

TIMESERIES_COLUMNS = ["t", "norm_T_L2", "norm_u_L2", "norm_etadot_L2", "norm_eta_W22",
                      "energy_total", "dissipation_cum", "lq2_T", "lq4_T", "lq8_T", "lqinf_T",
                      "interface_residual", "area_J"]
DECAY_COLUMNS = TIMESERIES_COLUMNS + ["env_T", "env_etadot", "env_u",
                                      "pass_T", "pass_etadot", "pass_u"]
SWEEP_COLUMNS = ["eps", "dist_T_LinfL2", "dist_u_LinfL2", "dist_gradu_L2L2", "dist_eta_W22",
                 "slope_T", "slope_u"]
CLOSURE_COLUMNS = ["t", "res_frob_rel", "T11", "T12", "T22",
                   "oracle_T11", "oracle_T12", "oracle_T22"]


class CommandFailed(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code, self.kind = code, kind


def _fail_line(kind, code, message):
    message = " ".join(str(message).split())
    return f"error: kind={kind} code={code} message={message!r}"


def _out(cfg, args, name):
    folder = args.output or cfg.output
    os.makedirs(folder, exist_ok=True)
    return os.path.join(folder, name)


def _trajectory(cfg, eps=None, keep_snapshots=False):
    state = initial_state(cfg)
    traj = run_trajectory(state, cfg.params(eps), cfg.t_max, sample_every=cfg.sample_every,
                          keep_snapshots=keep_snapshots)
    return traj


def _timeseries_rows(traj):
    return [[s[c] for c in TIMESERIES_COLUMNS] for s in traj.samples]


def _raise_if_degenerate(traj, written):
    if traj.status == "degenerate":
        raise CommandFailed(EXIT_DEGENERATE, "degeneracy",
                            f"{traj.message}; partial output in {written}")


# --- subcommands -----------------------------------------------------------------

def cmd_self_check(args):
    checks = selfcheck.run_all(seed=args.seed)
    for c in checks:
        print(c.line())
    bad = [c.name for c in checks if not c.ok]
    if bad:
        raise CommandFailed(EXIT_CHECK, "check", "failed: " + ", ".join(bad))


def cmd_simulate(args):
    cfg = load_config(args.config)
    traj = _trajectory(cfg)
    path = _out(cfg, args, "timeseries.csv")
    write_csv(path, TIMESERIES_COLUMNS, _timeseries_rows(traj), cfg.echo())
    _raise_if_degenerate(traj, path)
    print(f"wrote {path} ({len(traj.samples)} samples)")


def cmd_decay(args):
    cfg = load_config(args.config)
    traj = _trajectory(cfg, keep_snapshots=True)
    if traj.status == "degenerate" and len(traj.samples) < 2:
        raise CommandFailed(EXIT_DEGENERATE, "degeneracy", traj.message)
    rep = decay_report(traj, cfg.params(), tol=cfg.envelope_tol)
    rows = []
    for k, row in enumerate(_timeseries_rows(traj)):
        rows.append(row + [rep.envelopes["T"][k], rep.envelopes["etadot"][k],
                           rep.envelopes["u"][k], int(rep.passed["T"][k]),
                           int(rep.passed["etadot"][k]), int(rep.passed["u"][k])])
    path = _out(cfg, args, "decay.csv")
    write_csv(path, DECAY_COLUMNS, rows, cfg.echo())
    lines = [
        f"stress envelope: {'PASS' if rep.passed['T'].all() else 'FAIL'}",
        f"shell velocity envelope (report only): {'PASS' if rep.passed['etadot'].all() else 'FAIL'}",
        f"velocity envelope (report only): {'PASS' if rep.passed['u'].all() else 'FAIL'}",
        f"c1 = {rep.c1!r}",
        f"c2 interval = {tuple(float(c) for c in rep.c2_interval)!r}",
        f"inf area = {rep.inf_area!r} (crosses 1: {rep.area_crosses_one})",
    ]
    lines += [f"fitted rate {k} = {r[0]!r} (R^2 = {r[1]!r})" for k, r in rep.rates.items()]
    with open(_out(cfg, args, "verdict.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    _raise_if_degenerate(traj, path)
    if not rep.passed["T"].all():
        raise CommandFailed(EXIT_CHECK, "check", "stress exceeds the decay envelope")


def _parse_eps_list(text):
    try:
        vals = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"bad --eps-list {text!r}") from None
    if not vals:
        raise ConfigError("--eps-list is empty")
    return sorted(vals, reverse=True)


def cmd_sweep_eps(args):
    cfg = load_config(args.config)
    eps_list = _parse_eps_list(args.eps_list)
    res = eps_sweep(initial_state(cfg), cfg.params(), eps_list, cfg.t_max,
                    sample_every=cfg.sample_every, workers=args.workers or cfg.workers)
    rows = []
    for k, e in enumerate(res.eps):
        last = k == len(res.eps) - 1
        rows.append([e, res.dist_T[k], res.dist_u[k], res.dist_gradu[k], res.dist_eta[k],
                     res.slope_T if last else None, res.slope_u if last else None])
    path = _out(cfg, args, "sweep.csv")
    write_csv(path, SWEEP_COLUMNS, rows, cfg.echo() + [f"eps_list = {', '.join(map(repr, eps_list))}"])
    if res.slope_T is None:
        print("slope unavailable (fewer than two eps values)")
    else:
        print(f"slope_T = {res.slope_T:.4f} slope_u = {res.slope_u:.4f} "
              f"monotone_T = {res.monotone_T} monotone_u = {res.monotone_u}")
    if not res.complete:
        raise CommandFailed(EXIT_DEGENERATE, "degeneracy", res.message)
    print(f"wrote {path}")


def closure_table(cfg):
    """Rows of ``closure.csv`` for the configured kinetic run."""
    grid = QGrid(cfg.Rq, cfg.Nq)
    W = np.array([[0.0, cfg.spin], [-cfg.spin, 0.0]])
    t11, t12, t22 = cfg.stress
    T0 = np.array([[t11, t12], [t12, t22]])
    state = gaussian_state(grid, T0, cfg.lam, W)
    T0 = extra_stress(state)
    every = max(1, int(round(0.01 / cfg.kinetic_dt)))
    times, stresses, _, _ = run_kinetic(state, cfg.kinetic_dt, cfg.t_max, every)
    oracle = closure_oracle(T0, W, cfg.lam, times)
    res = frobenius(stresses - oracle) / frobenius(oracle)
    return [[t, r, S[0, 0], S[0, 1], S[1, 1], O[0, 0], O[0, 1], O[1, 1]]
            for t, r, S, O in zip(times, res, stresses, oracle)]


def cmd_closure_check(args):
    cfg = load_config(args.config)
    if not np.isfinite(cfg.lam):
        raise ConfigError("closure-check needs eps > 0 (finite lambda)")
    rows = closure_table(cfg)
    path = _out(cfg, args, "closure.csv")
    write_csv(path, CLOSURE_COLUMNS, rows, cfg.echo())
    worst = max(r[1] for r in rows)
    print(f"max relative Frobenius deviation = {worst:.3e} (tol {cfg.envelope_tol:g})")
    if worst > cfg.envelope_tol:
        raise CommandFailed(EXIT_CHECK, "check", f"closure deviation {worst:.3e}")


# --- entry point -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="oldroyd-fsi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("self-check", help="algebra and geometry identity suites")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_self_check)

    for name, func, helptext in (
            ("simulate", cmd_simulate, "one coupled trajectory -> timeseries.csv"),
            ("decay", cmd_decay, "trajectory and decay envelopes -> decay.csv"),
            ("sweep-eps", cmd_sweep_eps, "vanishing-diffusion sweep -> sweep.csv"),
            ("closure-check", cmd_closure_check, "kinetic moment closure -> closure.csv")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--output", help="output directory (overrides the config)")
        if name == "sweep-eps":
            s.add_argument("--eps-list", required=True, help="comma separated eps values")
            s.add_argument("--workers", type=int, default=None)
        s.set_defaults(func=func)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CommandFailed as exc:
        print(_fail_line(exc.kind, exc.code, exc), file=sys.stderr)
        return exc.code
    except (ConfigError, OSError) as exc:
        print(_fail_line("config", EXIT_CONFIG, exc), file=sys.stderr)
        return EXIT_CONFIG
    except DegeneracyError as exc:
        print(_fail_line("degeneracy", EXIT_DEGENERATE, exc), file=sys.stderr)
        return EXIT_DEGENERATE
    except (SolverError, KineticError) as exc:
        print(_fail_line("solver", EXIT_SOLVER, exc), file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
