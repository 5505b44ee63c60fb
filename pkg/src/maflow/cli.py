"""Command-line interface: run, verify, oracle, compare, restart.

Exit codes: 0 ok, 2 configuration error, 3 solver failure (failure time in
the report), 4 verification failure (advisory checks never affect the
code).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import io as mio
from . import oracles, verify as ver
from .config import load_config
from .elliptic import solve_ma
from .errors import ConfigError, InvalidSpec, MaflowError
from .flow import continue_run, limit_potential, run
from .geometry import TorusGrid
from .initial import approximation_sequence, default_center, sample_potential


def _build_levels(setup):
    spec = setup.spec
    if spec.kind == "smooth" or spec.kind == "from_file":
        phi0 = sample_potential(spec, setup.grid)
        return [("level_00", phi0, spec.data_class)], None
    seq = approximation_sequence(spec, setup.grid, max(setup.levels, 1),
                                 K=setup.trunc_depth, delta0=setup.delta0,
                                 ratio=setup.ratio)
    return [(f"level_{lev.j - 1:02d}", lev, spec.data_class) for lev in seq.levels], seq


def _run_one(task):
    source, flow, data_class, center = task
    return run(source, flow, data_class=data_class,
               meta_extra={"center": list(center)})


def cmd_run(args):
    setup = load_config(args.config)
    os.makedirs(setup.outdir, exist_ok=True)
    entries, _ = _build_levels(setup)
    center = setup.spec.center or default_center(setup.grid)
    tasks = [(source, setup.flow, data_class, center)
             for _, source, data_class in entries]
    if args.workers > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            trajs = list(pool.map(_run_one, tasks))
    else:
        trajs = [_run_one(t) for t in tasks]
    for (name, _, _), traj in zip(entries, trajs):
        mio.save_run(traj, os.path.join(setup.outdir, name), setup.flow)
        print(f"{name}: {len(traj.times)} rows, "
              f"min_eig {traj.column('min_eig').min():.4g}")
    if len(trajs) >= 3:
        _, rep = limit_potential(trajs, t=setup.flow.T)
        with open(os.path.join(setup.outdir, "limit.json"), "w") as fh:
            json.dump({"t": rep.t, "decrements": rep.decrements,
                       "ratios": rep.ratios, "converged": rep.converged,
                       "monotone": rep.monotone}, fh, indent=1)
        print(f"limit: decrements {['%.3g' % d for d in rep.decrements]} "
              f"converged={rep.converged}")
    with open(os.path.join(setup.outdir, "config_echo.ini"), "w") as fh:
        with open(args.config) as src:
            fh.write(src.read())
    return 0


def _load_levels(rundir):
    dirs = mio.level_dirs(rundir)
    if not dirs:
        raise ConfigError(f"{rundir}: no level_* subdirectories")
    return [mio.load_trajectory(d) for d in dirs]


def cmd_verify(args):
    trajs = _load_levels(args.rundir)
    checks = args.checks.replace(",", " ").split() if args.checks else None
    reports = []
    deep = trajs[-1]
    single = checks or list(ver.SINGLE_RUN_CHECKS)
    for name in single:
        if name in ver.SINGLE_RUN_CHECKS:
            reports.append(ver.SINGLE_RUN_CHECKS[name](deep))
        elif name not in ("comparison", "oscillation_levels"):
            print(f"unknown check {name!r}", file=sys.stderr)
            return 2
    if len(trajs) >= 2 and (checks is None or "comparison" in checks):
        for lo, hi in zip(trajs[1:], trajs[:-1]):
            reports.append(ver.verify_comparison(lo, hi))
    if len(trajs) >= 2 and (checks is None or "oscillation_levels" in checks):
        reports.append(ver.verify_oscillation_levels(trajs))
    if args.restart_dir:
        restarted = mio.load_trajectory(args.restart_dir)
        reports.append(ver.verify_minodot(deep, restarted))
    out = args.out or os.path.join(args.rundir, "verdicts.json")
    mio.write_verdicts(out, reports)
    failed = [r for r in reports if r.status == "fail" and not r.advisory]
    for r in reports:
        mark = {"pass": "PASS", "fail": "FAIL", "skip": "skip"}[r.status]
        extra = f" [{r.gated_on}]" if r.status == "skip" else \
            f" slack={r.slack:.3g} tol={r.tolerance:.3g}"
        adv = " (advisory)" if r.advisory else ""
        print(f"[{mark}] {r.name}{adv}: {r.statement}{extra}")
    print(f"verdicts written to {out}")
    return 4 if failed else 0


def cmd_oracle(args):
    try:
        grid = TorusGrid(args.n, args.res, args.period)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    os.makedirs(args.out, exist_ok=True)
    if args.name == "heat":
        kvec = tuple(int(k) for k in args.mode.split())
        table = oracles.heat_mode_series(grid, kvec, args.amp, args.T)
        path = os.path.join(args.out, "heat_mode.csv")
        with open(path, "w") as fh:
            fh.write("t,amplitude\n")
            for t, a in table:
                fh.write(f"{t:.17g},{a:.17g}\n")
        print(f"heat oracle (rate 4 pi^2 kappa |k|^2 / L^2, kappa={oracles.KAPPA}) "
              f"-> {path}")
    elif args.name == "lelong_field":
        fld, center = oracles.lelong_model_field(grid, args.gamma)
        path = os.path.join(args.out, "lelong_field.mafl")
        mio.write_field(path, fld)
        print(f"model log pole gamma={args.gamma} at {center} -> {path}")
    elif args.name == "elliptic_fixed_point":
        h = None
        if args.h_modes:
            from .config import _mode_field
            from .flow import normalize_h
            h = normalize_h(_mode_field(grid, args.h_modes))
        u, log = solve_ma(0.0, grid=grid, h=h)
        path = os.path.join(args.out, "fixed_point.mafl")
        mio.write_field(path, u)
        print(f"stationary potential (residual {log.rows[-1][1]:.3g}, "
              f"{log.iterations} iterations) -> {path}")
        log.write_csv(os.path.join(args.out, "newton_log.csv"))
    else:
        print(f"unknown oracle {args.name!r}", file=sys.stderr)
        return 2
    return 0


def cmd_compare(args):
    ta = mio.load_trajectory(args.run_a)
    tb = mio.load_trajectory(args.run_b)
    common = sorted(set(np.round(ta.times, 12)) & set(np.round(tb.times, 12)))
    report = {"common_rows": len(common)}
    if common:
        ia = {round(t, 12): i for i, t in enumerate(ta.times)}
        ib = {round(t, 12): i for i, t in enumerate(tb.times)}
        for col in ("sup", "inf", "I", "E", "fmin", "fmax"):
            d = [tb.series[col][ib[t]] - ta.series[col][ia[t]] for t in common]
            report[f"max_abs_d_{col}"] = float(np.abs(d).max())
    snaps = sorted(set(round(t, 12) for t in ta.snapshot_times)
                   & set(round(t, 12) for t in tb.snapshot_times))
    diffs = {}
    for t in snaps:
        d = tb.snapshot_at(t).phi - ta.snapshot_at(t).phi
        diffs[str(t)] = {"min": float(d.min()), "max": float(d.max())}
    report["field_diffs"] = diffs
    if diffs:
        report["signed_min_diff"] = min(v["min"] for v in diffs.values())
    out = args.out or "compare.json"
    with open(out, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    for k, v in report.items():
        if k != "field_diffs":
            print(f"{k}: {v}")
    print(f"report written to {out}")
    return 0


def cmd_restart(args):
    traj = mio.load_trajectory(args.rundir)
    config = mio.load_run_config(args.rundir)
    out = continue_run(traj, args.at, config, T=args.to)
    dest = args.out or os.path.join(os.path.dirname(args.rundir.rstrip("/")) or ".",
                                    "restart")
    mio.save_run(out, dest, config if args.to is None else config.replace(T=args.to))
    print(f"restarted at t={args.at} to T={out.meta['T']}; saved to {dest}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="maflow",
                                description="parabolic Monge-Ampere flows on flat tori")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a configured flow (all levels)")
    pr.add_argument("config")
    pr.add_argument("--workers", type=int, default=1,
                    help="level runs in parallel, one process per run")
    pr.set_defaults(func=cmd_run)

    pv = sub.add_parser("verify", help="check the a priori estimates on a run dir")
    pv.add_argument("rundir")
    pv.add_argument("--checks", default="")
    pv.add_argument("--restart-dir", default="")
    pv.add_argument("--out", default="")
    pv.set_defaults(func=cmd_verify)

    po = sub.add_parser("oracle", help="emit reference outputs")
    po.add_argument("name", choices=["heat", "lelong_field", "elliptic_fixed_point"])
    po.add_argument("--n", type=int, default=1)
    po.add_argument("--res", type=int, default=64)
    po.add_argument("--period", type=float, default=1.0)
    po.add_argument("--mode", default="1 0")
    po.add_argument("--amp", type=float, default=1.0)
    po.add_argument("--T", type=float, default=1.0)
    po.add_argument("--gamma", type=float, default=1.0)
    po.add_argument("--h-modes", default="")
    po.add_argument("--out", default="oracle_out")
    po.set_defaults(func=cmd_oracle)

    pc = sub.add_parser("compare", help="paired-difference report of two runs")
    pc.add_argument("run_a")
    pc.add_argument("run_b")
    pc.add_argument("--out", default="")
    pc.set_defaults(func=cmd_compare)

    ps = sub.add_parser("restart", help="continue a saved run from a snapshot")
    ps.add_argument("rundir")
    ps.add_argument("--at", type=float, required=True)
    ps.add_argument("--to", type=float, default=None)
    ps.add_argument("--out", default="")
    ps.set_defaults(func=cmd_restart)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidSpec) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except MaflowError as e:
        t = getattr(e, "t", None)
        at = f" at t={t:.6g}" if t is not None else ""
        print(f"solver failure{at}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
