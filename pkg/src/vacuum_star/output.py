"""Result files of a run: summary JSON and CSV tables.

Every float is written with ``repr`` so files round-trip exactly and two
runs of the same configuration produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import math
import os

import numpy as np

from .diagnostics import Trajectory, equivalence_constant, trajectory_support
from .driver import Problem, dump_json
from .dynamics import StepVector
from .errors import InsufficientDataError


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _table(header: list, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def trajectory_csv(traj: Trajectory) -> str:
    return _table(list(Trajectory.ROW_FIELDS), traj.rows)


def energy_csv(traj: Trajectory) -> str:
    if not traj.reports:
        return ""
    first = traj.reports[0]
    n = len(first.calE)
    flags = sorted(first.bootstrap)
    ids = sorted(first.identity_residuals)
    header = (["tau"] + [f"calE_{i}" for i in range(n)] + [f"mfE_{i}" for i in range(n)]
              + [f"mfD_{i}" for i in range(n)] + ["S_contribution", "equivalence_constant"]
              + [f"{f}_ok" for f in flags] + [f"{f}_margin" for f in flags] + ids)
    rows = []
    for r in traj.reports:
        rows.append([r.tau] + r.calE + r.mfE + r.mfD + [r.S_contribution, equivalence_constant(r)]
                    + [r.bootstrap[f].ok for f in flags] + [r.bootstrap[f].margin for f in flags]
                    + [r.identity_residuals[k] for k in ids])
    return _table(header, rows)


def radius_csv(traj: Trajectory) -> str:
    lam = traj.column("lambda")
    th = traj.column("theta_boundary")
    return _table(["tau", "t", "radius", "theta_boundary"],
                  zip(traj.column("tau"), traj.column("t"), lam * (1.0 + th), th))


def state_csv(prob: Problem, y: StepVector) -> str:
    return _table(["zeta", "Theta", "dTheta", "gbar"], zip(prob.setting.grid.zeta, y.Theta, y.dTheta, y.gbar))


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def summary(traj: Trajectory, prob: Problem) -> dict:
    tau = traj.column("tau")
    t = traj.column("t")
    lam = traj.column("lambda")
    out = {
        "termination": traj.termination,
        "completed": traj.completed,
        "interrupted": traj.interrupted,
        "steps": traj.steps,
        "dt_tau": traj.dt,
        "tau_end": float(tau[-1]),
        "t_end": float(t[-1]),
        "lambda_bar_limit": prob.lambda_bar,
        "energy_initial": traj.energy_initial,
        "energy_sup": traj.energy_sup,
        "energy_bound": traj.config.run.M_star * traj.epsilon,
        "energy_final": traj.reports[-1].energy_sum if traj.reports else None,
        "max_back_substitution": float(traj.column("residual").max()),
        "max_parity_drift": float(traj.column("parity_drift").max()),
        "max_fg_sum": float(traj.column("fg_sum").max()),
        "u0_ratio_range": [float(traj.column("u0_ratio_min").min()), float(traj.column("u0_ratio_max").max())],
    }
    if traj.reports:
        names = sorted(traj.reports[0].bootstrap)
        out["min_bootstrap_margins"] = {k: min(r.bootstrap[k].margin for r in traj.reports) for k in names}
        out["max_identity_residuals"] = {
            k: max(r.identity_residuals[k] for r in traj.reports) for k in sorted(traj.reports[0].identity_residuals)
        }
        out["max_equivalence_constant"] = max(equivalence_constant(r) for r in traj.reports)
    mask = t >= t[0] + 0.8 * (t[-1] - t[0])
    out["lambda_bar_fit"] = float(np.polyfit(t[mask], lam[mask], 1)[0]) if int(mask.sum()) >= 10 else None
    try:
        sr = trajectory_support(traj)
        out["expansion"] = {
            "slope": sr.slope,
            "theta_boundary_end": sr.theta_end,
            "cauchy_rate": _clean(sr.cauchy_rate),
            "partial": sr.partial,
        }
    except InsufficientDataError:
        out["expansion"] = None
    return out


def write_outputs(out_dir: str, traj: Trajectory, y: StepVector, prob: Problem) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    summ = summary(traj, prob)
    files = {
        "summary.json": dump_json(summ),
        "trajectory.csv": trajectory_csv(traj),
        "energy.csv": energy_csv(traj),
        "radius.csv": radius_csv(traj),
        "final_state.csv": state_csv(prob, y),
    }
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(text)
    return summ
