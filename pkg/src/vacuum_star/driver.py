"""Run driver: initial data, time loop, monitors, checkpoints.

The loop advances the RK4 system with a fixed step that lands exactly on
tau_max. After every step the new state's Jacobian, corrector and U0 bands
are checked; every ``record_every`` steps the full state and an
EnergyReport are stored. Any SimulationError ends the run with its cause
recorded on the trajectory instead of propagating.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .diagnostics import (
    EnergyReport,
    Trajectory,
    balance_terms,
    bootstrap_monitor,
    energy,
    state_identities,
)
from .dynamics import Model, StepVector, cfl_dt, step
from .errors import BootstrapViolation, ConfigError, SimulationError
from .gauge import (
    EulerianData,
    build_initial_state,
    mass_function,
    reference_data,
    reference_mass_function,
    solve_eta0,
)
from .grid import RadialGrid, make_weight
from .quantities import InitialSnapshot, Setting, compute_cache, make_snapshot
from .scaling import limit_rate, solve_lambda

CHECKPOINT_FORMAT = 1


@dataclass
class Problem:
    """Everything fixed at tau = 0: discretisation, model and initial vector."""

    config: RunConfig
    setting: Setting
    snapshot: InitialSnapshot
    model: Model
    y0: StepVector
    dt: float
    n_steps: int
    lambda_bar: float
    filter_matrix: np.ndarray | None


def odd_polynomial(coeffs, z: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z)
    for j, c in enumerate(coeffs):
        out = out + float(c) * z ** (2 * j + 1)
    return out


def initial_fields(cfg: RunConfig, grid: RadialGrid, setting: Setting) -> tuple[np.ndarray, np.ndarray]:
    p = cfg.params
    ini = cfg.initial
    z = grid.zeta
    if ini.kind == "polynomial":
        return odd_polynomial(ini.theta, z), odd_polynomial(ini.velocity, z)
    if ini.kind == "reference":
        data = reference_data(setting.weight, p.kappa, p.lambda0, p.lambda1)
    else:
        try:
            with open(ini.path, "r", encoding="utf-8") as fh:
                data = EulerianData.from_csv(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read initial data {ini.path}: {exc}") from exc
    m = mass_function(data.rho0)
    m_ref, _ = reference_mass_function(setting.weight, p.kappa)
    gauge = solve_eta0(grid, m, m_ref, p.kappa, mass_tolerance=p.tolerances.mass)
    path = solve_lambda(p, 1e-6, 1e-7)
    Theta0, U0 = build_initial_state(data, path, gauge, p.kappa)
    return Theta0.values, U0.values


def setup(cfg: RunConfig) -> Problem:
    """Build the grid, model and initial vector; the time step is fixed here."""
    p = cfg.params
    grid = RadialGrid(p.n_grid)
    weight = make_weight(p.weight_kind, p.delta, p.weight_scale)
    setting = Setting(grid, weight, p.kappa, classical_limit=cfg.run.classical_limit)
    Theta0, U0 = initial_fields(cfg, grid, setting)
    snapshot = make_snapshot(setting, Theta0, U0, p.lambda0, p.lambda1)
    model = Model(
        setting,
        snapshot,
        e6_sign=cfg.run.e6_sign,
        solve_tolerance=p.tolerances.solve,
        parity_tolerance=p.tolerances.parity,
    )
    gbar0 = np.full_like(grid.zeta, 1.0 / p.kappa)
    # lambda_bar_tau = d_tau(lambda)/lambda equals dlambda/dt, so it starts at lambda1
    y0 = StepVector(0.0, Theta0.copy(), U0.copy(), p.lambda0, p.lambda1, 0.0, gbar0)
    if p.dt_tau is not None:
        dt_req = p.dt_tau
    else:
        state0 = y0.state()
        dt_req = cfl_dt(model, state0, compute_cache(setting, snapshot, state0))
    n_steps = max(1, math.ceil(p.tau_max / dt_req - 1e-12))
    dt = p.tau_max / n_steps
    fm = grid.filter_matrix() if cfg.run.filter_on else None
    return Problem(cfg, setting, snapshot, model, y0, dt, n_steps, limit_rate(p), fm)


def _step_row(prob: Problem, n: int, y: StepVector, stats: dict) -> tuple[list, dict]:
    st = prob.setting
    state = y.state()
    cache = compute_cache(st, prob.snapshot, state)
    flags = bootstrap_monitor(st, state, cache, prob.lambda_bar)
    base = 1.0 - prob.lambda_bar**2 * st.grid.zeta**2
    ratio = cache.U0inv2 / base
    fg = 0.01 - flags["FG"].margin
    row = [n, y.tau, y.t, y.lam, y.lbt, float(y.Theta[-1]), fg, float(np.min(ratio)), float(np.max(ratio)),
           stats["residual"], stats["parity_drift"]]
    return row, flags


def _report(prob: Problem, y: StepVector, energy_sup: float, epsilon: float | None, with_balance: bool) -> EnergyReport:
    st = prob.setting
    p = prob.config.params
    state = y.state()
    accel, cache, _ = prob.model.acceleration(state)
    orders = [energy(st, state, cache, i) for i in range(p.n_diag + 1)]
    z = st.grid.zeta
    S = float(st.grid.quad @ (st.w_pow * z * z * accel * accel))
    flags = bootstrap_monitor(st, state, cache, prob.lambda_bar, energy_sup, prob.config.run.M_star, epsilon)
    ids = state_identities(prob.model, state)
    ids["back_substitution"] = prob.model.last_residual
    ids["gbar_ode_vs_closed"] = 0.0 if st.classical_limit else float(np.max(np.abs(y.gbar - cache.Gbar)))
    return EnergyReport(
        tau=y.tau,
        calE=[o[0] for o in orders],
        mfE=[o[1] for o in orders],
        mfD=[o[2] for o in orders],
        S_contribution=S,
        bootstrap=flags,
        identity_residuals=ids,
        balance=balance_terms(prob.model, state) if with_balance else {},
    )


def _vector_to_dict(y: StepVector) -> dict:
    return {"tau": y.tau, "Theta": y.Theta.tolist(), "dTheta": y.dTheta.tolist(), "lam": y.lam, "lbt": y.lbt,
            "t": y.t, "gbar": y.gbar.tolist()}


def _vector_from_dict(d: dict) -> StepVector:
    return StepVector(d["tau"], np.array(d["Theta"]), np.array(d["dTheta"]), d["lam"], d["lbt"], d["t"],
                      np.array(d["gbar"]))


def checkpoint_dict(traj: Trajectory, y: StepVector, snapshot: InitialSnapshot) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT,
        "config": traj.config.to_dict(),
        "step": traj.steps,
        "dt": traj.dt,
        "state": _vector_to_dict(y),
        "snapshot": snapshot.to_dict(),
        "rows": traj.rows,
        "record_tau": traj.record_tau,
        "records": [_vector_to_dict(s) for s in traj.states],
        "reports": [r.to_dict() for r in traj.reports],
        "epsilon": traj.epsilon,
        "energy_initial": traj.energy_initial,
        "energy_sup": traj.energy_sup,
        "termination": traj.termination,
    }


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


def write_checkpoint(path: str, traj: Trajectory, y: StepVector, snapshot: InitialSnapshot) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_json(checkpoint_dict(traj, y, snapshot)))


def read_checkpoint(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if data.get("format_version") != CHECKPOINT_FORMAT:
        raise ConfigError(f"checkpoint {path} has unsupported format {data.get('format_version')!r}")
    return data


def run(
    cfg: RunConfig,
    resume: dict | None = None,
    max_steps: int | None = None,
    checkpoint_path: str | None = None,
) -> tuple[Trajectory, StepVector, Problem]:
    """Evolve from tau = 0 (or a checkpoint) to tau_max or the first termination cause.

    ``max_steps`` caps the number of steps taken in this call; a capped run
    is flagged ``interrupted`` and can be continued from its checkpoint.
    """
    prob = setup(cfg)
    opts = cfg.run
    if resume is not None:
        if resume["config"] != cfg.to_dict():
            raise ConfigError("checkpoint was written for a different configuration")
        y = _vector_from_dict(resume["state"])
        traj = Trajectory(
            config=cfg,
            dt=resume["dt"],
            rows=[list(r) for r in resume["rows"]],
            record_tau=list(resume["record_tau"]),
            states=[_vector_from_dict(s) for s in resume["records"]],
            reports=[EnergyReport.from_dict(r) for r in resume["reports"]],
            termination=resume["termination"],
            steps=resume["step"],
            epsilon=resume["epsilon"],
            energy_initial=resume["energy_initial"],
            energy_sup=resume["energy_sup"],
        )
        if traj.dt != prob.dt:
            raise ConfigError("checkpoint time step differs from the configured step")
        if traj.termination is not None:
            return traj, y, prob
    else:
        y = prob.y0
        traj = Trajectory(cfg, prob.dt, [], [], [], [], None, 0)
        try:
            row, _ = _step_row(prob, 0, y, {"residual": 0.0, "parity_drift": 0.0})
            traj.rows.append(row)
            state0 = y.state()
            cache0 = compute_cache(prob.setting, prob.snapshot, state0)
            E0 = sum(energy(prob.setting, state0, cache0, i)[0] for i in range(cfg.params.n_diag + 1))
            traj.energy_initial = E0
            traj.energy_sup = E0
            traj.epsilon = opts.epsilon if opts.epsilon is not None else E0 + 1e-9
            rep = _report(prob, y, E0, traj.epsilon, opts.balance)
            traj.record_tau.append(y.tau)
            traj.states.append(y)
            traj.reports.append(rep)
        except SimulationError as exc:
            traj.termination = {"cause": exc.cause, "message": str(exc), "tau": 0.0}
            return traj, y, prob

    taken = 0
    while traj.steps < prob.n_steps:
        if max_steps is not None and taken >= max_steps:
            traj.interrupted = True
            break
        try:
            y_new, stats = step(prob.model, y, prob.dt, prob.filter_matrix)
            n = traj.steps + 1
            row, flags = _step_row(prob, n, y_new, stats)
            traj.rows.append(row)
            y = y_new
            traj.steps = n
            taken += 1
            if opts.stop_on_bootstrap:
                for name in ("U0", "FG"):
                    if not flags[name].ok:
                        raise BootstrapViolation(f"bootstrap band {name} left (margin {flags[name].margin:.3e})")
            if n % opts.record_every == 0 or n == prob.n_steps:
                state = y.state()
                cache = compute_cache(prob.setting, prob.snapshot, state)
                En = sum(energy(prob.setting, state, cache, i)[0] for i in range(cfg.params.n_diag + 1))
                traj.energy_sup = max(traj.energy_sup, En)
                rep = _report(prob, y, traj.energy_sup, traj.epsilon, opts.balance)
                traj.record_tau.append(y.tau)
                traj.states.append(y)
                traj.reports.append(rep)
                if opts.stop_on_bootstrap and not rep.bootstrap["EN"].ok:
                    raise BootstrapViolation(f"energy bound left (margin {rep.bootstrap['EN'].margin:.3e})")
            if checkpoint_path and opts.checkpoint_every and n % opts.checkpoint_every == 0:
                write_checkpoint(checkpoint_path, traj, y, prob.snapshot)
        except SimulationError as exc:
            if exc.tau is None:
                exc.tau = y.tau
            traj.termination = {"cause": exc.cause, "message": str(exc), "tau": exc.tau}
            break
    if checkpoint_path:
        write_checkpoint(checkpoint_path, traj, y, prob.snapshot)
    return traj, y, prob
