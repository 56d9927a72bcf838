"""Command-line driver.

    vacuum-star run --config run.toml --out results/
    vacuum-star run --config run.toml --out results/ --resume results/checkpoint.json
    vacuum-star validate [--filter NAME ...] [--seed N]
    vacuum-star sweep --config base.toml --grid grid.toml --out sweep/ [--threads N]
    vacuum-star lambda --config run.toml [--t-max T] [--dtau H]
    vacuum-star gauge --config run.toml

Exit status is 0 on success. A run that stops early exits with the code of
its termination cause (see EXIT_CODES).
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import load_config, parse_config, tomllib
from .errors import ConfigError, GaugeIncompatibilityError, SimulationError, VacuumStarError

EXIT_CODES = {
    "ok": 0,
    "bad-config": 2,
    "causality": 3,
    "corrector-positivity": 4,
    "diffeomorphism-loss": 5,
    "resolution": 6,
    "instability": 7,
    "bootstrap": 8,
    "gauge-incompatibility": 9,
    "input": 10,
    "validate-failed": 11,
    "interrupted": 12,
}

SWEEP_KEYS = ("kappa", "delta", "lambda1", "amplitude")


def exit_code_for(cause: str) -> int:
    return EXIT_CODES.get(cause, EXIT_CODES["input"])


def _threads(requested: int | None) -> int:
    env = os.environ.get("VACUUM_STAR_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"VACUUM_STAR_THREADS must be an integer, got {env!r}") from exc
    else:
        value = requested if requested is not None else 1
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


# -- run -----------------------------------------------------------------------------------


def cmd_run(args) -> int:
    from .driver import read_checkpoint, run
    from .output import write_outputs

    cfg = load_config(args.config)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    resume = read_checkpoint(args.resume) if args.resume else None
    traj, y, prob = run(cfg, resume=resume, max_steps=args.max_steps,
                        checkpoint_path=os.path.join(out_dir, "checkpoint.json"))
    summ = write_outputs(out_dir, traj, y, prob)
    if traj.termination is not None:
        term = traj.termination
        print(f"terminated: {term['cause']} at tau={term['tau']:.6g}: {term['message']}")
        return exit_code_for(term["cause"])
    if traj.interrupted:
        print(f"interrupted after step {traj.steps}; resume from {os.path.join(out_dir, 'checkpoint.json')}")
        return EXIT_CODES["interrupted"]
    slope = summ["expansion"]["slope"] if summ["expansion"] else float("nan")
    print(f"completed {traj.steps} steps to tau={summ['tau_end']:.6g} (t={summ['t_end']:.6g}); "
          f"lambda_bar fit={summ['lambda_bar_fit']}, expansion slope={slope:.6g}")
    return 0


# -- validate -------------------------------------------------------------------------------


def cmd_validate(args) -> int:
    from .validation import CHECKS, ValidationContext, format_table, run_checks

    seed = args.seed
    if seed is None and args.config:
        seed = load_config(args.config).run.seed
    ctx = ValidationContext(seed=seed or 0, flip_r2=("flip-r2" in (args.inject or [])))
    names = []
    for item in args.filter or []:
        names.extend(x for x in item.split(",") if x)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        print(f"unknown check(s): {', '.join(unknown)}; available: {', '.join(CHECKS)}", file=sys.stderr)
        return EXIT_CODES["bad-config"]
    results = run_checks(ctx, names)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else EXIT_CODES["validate-failed"]


# -- sweep ----------------------------------------------------------------------------------


def _sweep_one(job: tuple) -> list:
    from .config import RunConfig
    from .driver import run
    from .output import summary

    cfg_dict, point = job
    cfg = RunConfig.from_dict(cfg_dict)
    row = [point[k] for k in SWEEP_KEYS]
    try:
        changes = {k: point[k] for k in ("kappa", "delta", "lambda1")}
        cfg = cfg.with_params(**changes)
        if point["amplitude"] is not None:
            from dataclasses import replace

            a = point["amplitude"]
            cfg = replace(cfg, initial=replace(cfg.initial, kind="polynomial", theta=(a, -a)))
        traj, _, prob = run(cfg)
        summ = summary(traj, prob)
        cause = traj.termination["cause"] if traj.termination else "ok"
        return row + [cause, summ["energy_final"], summ["lambda_bar_fit"], summ["tau_end"]]
    except VacuumStarError as exc:
        return row + [exc.cause, None, None, None]


def sweep_points(grid: dict, base) -> list[dict]:
    values = []
    for key in SWEEP_KEYS:
        if key in grid:
            v = grid[key]
            values.append(list(v) if isinstance(v, list) else [v])
        elif key == "amplitude":
            values.append([None])
        else:
            values.append([getattr(base.params, key)])
    return [dict(zip(SWEEP_KEYS, combo)) for combo in itertools.product(*values)]


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    try:
        with open(args.grid, "rb") as fh:
            grid = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read sweep grid {args.grid}: {exc}") from exc
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"{args.grid}: unknown sweep key(s) {sorted(unknown)}")
    points = sweep_points(grid, cfg)
    jobs = [(cfg.to_dict(), p) for p in points]
    workers = _threads(args.threads)
    if workers == 1 or len(jobs) <= 1:
        rows = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(SWEEP_KEYS) + ["termination", "energy_final", "lambda_bar_fit", "tau_end"])
    for row in rows:
        writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


# -- lambda and gauge -----------------------------------------------------------------------


def cmd_lambda(args) -> int:
    from .scaling import asymptotic_rate, lambda_identity_residual, limit_rate, solve_lambda

    cfg = load_config(args.config)
    p = cfg.params
    path = solve_lambda(p, args.t_max, args.dtau)
    resid, tol = lambda_identity_residual(path)
    rate = asymptotic_rate(path)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "lambda.csv"), "w", encoding="utf-8") as fh:
        fh.write(path.to_csv())
    print(f"samples={path.t.size} t_end={path.t[-1]:.6g} tau_end={path.tau[-1]:.6g}")
    print(f"lambda_bar fit={rate:.12g} limit={limit_rate(p):.12g}")
    print(f"rate identity residual={resid:.3e} (local tolerance {tol:.3e}); verification error={path.verification_error:.3e}")
    return 0


def cmd_gauge(args) -> int:
    from .gauge import EulerianData, build_initial_state, gauge_residual, mass_function, reference_data
    from .gauge import reference_mass_function, solve_eta0
    from .grid import RadialGrid, make_weight
    from .scaling import solve_lambda

    cfg = load_config(args.config)
    p = cfg.params
    grid = RadialGrid(p.n_grid)
    w = make_weight(p.weight_kind, p.delta, p.weight_scale)
    if cfg.initial.kind == "file":
        try:
            with open(cfg.initial.path, "r", encoding="utf-8") as fh:
                data = EulerianData.from_csv(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read initial data {cfg.initial.path}: {exc}") from exc
    elif cfg.initial.kind == "reference":
        data = reference_data(w, p.kappa, p.lambda0, p.lambda1)
    else:
        raise ConfigError("the gauge command needs initial.kind = 'reference' or 'file'")
    m_ref, M_ref = reference_mass_function(w, p.kappa)
    gauge = solve_eta0(grid, mass_function(data.rho0), m_ref, p.kappa, mass_tolerance=p.tolerances.mass)
    Theta0, U0 = build_initial_state(data, solve_lambda(p, 1e-6, 1e-7), gauge, p.kappa)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["zeta", "eta0", "Theta0", "U0"])
    for row in zip(grid.zeta, gauge.eta0, Theta0.values, U0.values):
        writer.writerow([repr(float(v)) for v in row])
    with open(os.path.join(out_dir, "gauge.csv"), "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    print(f"mass={gauge.mass_total:.12g} reference mass={M_ref:.12g}")
    print(f"gauge residual={gauge_residual(grid, gauge, data, w, p.kappa):.3e} "
          f"max|eta0 - zeta|={float(np.max(np.abs(gauge.eta0 - grid.zeta))):.3e}")
    return 0


# -- entry point ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vacuum-star", description=__doc__.split("\n\n")[0])
    parser.add_argument("--threads", type=int, default=None, help="worker processes for sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evolve one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--resume", default=None, help="checkpoint JSON to continue from")
    p.add_argument("--max-steps", type=int, default=None, help="stop after this many steps (resumable)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="run the identity and property checks")
    p.add_argument("--config", default=None, help="take the seed from this config")
    p.add_argument("--filter", action="append", default=None, help="check name(s), comma separated")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--inject", action="append", choices=["flip-r2"], default=None,
                   help="mutation hook: negate the R2 remainder")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="run a parameter grid")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="TOML with lists for kappa, delta, lambda1, amplitude")
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=None, dest="threads")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lambda", help="integrate the background scaling factor only")
    p.add_argument("--config", required=True)
    p.add_argument("--t-max", type=float, default=1e3)
    p.add_argument("--dtau", type=float, default=1e-3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_lambda)

    p = sub.add_parser("gauge", help="map Eulerian initial data to the Lagrangian gauge")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gauge)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["bad-config"]
    except GaugeIncompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["gauge-incompatibility"]
    except SimulationError as exc:
        print(f"error: {exc.cause}: {exc}", file=sys.stderr)
        return exit_code_for(exc.cause)
    except VacuumStarError as exc:
        print(f"error: {exc.cause}: {exc}", file=sys.stderr)
        return EXIT_CODES["input"]


if __name__ == "__main__":
    sys.exit(main())
