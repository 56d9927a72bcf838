"""Energies, bootstrap monitors, structural identity checks and expansion observables.

Weighted integrals use the Clenshaw-Curtis weights of the grid with the
measure w**(1/kappa + i) zeta**2. For a state with coefficient fields

    X = delta lambda**(-3k) w F**(-k) G**k,   Y = w F**(-k) G**k,
    c = F**(-k-2) U0**(-4) (1 + Theta/zeta)**4

the order-i energy, its coefficient-free counterpart and the damping are

    calE_i = kin ||calD_i dTheta||_i**2 + ||calD_i Theta||_i**2 + ||calD_{i+1} Theta||_{i+1}**2
    mfE_i  = kin/2 int W_i (1+X) |calD_i dTheta|**2 + 1/2 int W_i (1+X) |calD_i Theta|**2
             + (1+k)/2 int w W_i c |calD_{i+1} Theta|**2
    mfD_i  = (1 - 3k/2) lbt kin int W_i |calD_i dTheta|**2

with ``kin = lambda**(3k) / delta`` and ``W_i = w**(1/k + i) zeta**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Model, pressure_gradient, r3_decomposition_check, m_cancellation_check
from .errors import DiagnosticUnavailableError, InsufficientDataError
from .grid import RadialGrid
from .quantities import (
    CachedQuantities,
    LagrangianState,
    Setting,
    compute_cache,
    dtau_gbar,
    dtau_u0inv2,
    gbar_ode_rhs,
    jacobian_F,
)


def _pow(x: np.ndarray, p: float) -> np.ndarray:
    return np.exp(p * np.log(x))


def _kinetic(delta: float, lam: float, kappa: float, integral: float) -> float:
    """lambda**(3k)/delta times an integral, with 0/0 read as 0 for the classical delta = 0 case."""
    if integral == 0.0:
        return 0.0
    if delta == 0.0:
        return math.inf
    return lam ** (3.0 * kappa) / delta * integral


# -- energies -------------------------------------------------------------------------------


def energy(setting: Setting, state: LagrangianState, cache: CachedQuantities, i: int) -> tuple[float, float, float]:
    """Return (calE_i, mfE_i, mfD_i) for one state."""
    g = setting.grid
    if i + 1 > g.i_max:
        from .errors import ResolutionError

        raise ResolutionError(f"energy order {i} needs calD_{i + 1}, above i_max={g.i_max} at n={g.n}")
    k = setting.kappa
    delta = setting.delta
    z = g.zeta
    Wi = setting.weight.power(z, 1.0 / k + i) * z * z
    Wi1 = setting.weight.power(z, 1.0 / k + i + 1) * z * z
    DiT = g.calD(state.Theta, i)
    DiV = g.calD(state.dTheta, i)
    Di1T = g.calD(state.Theta, i + 1)
    q = g.quad
    X = delta * state.lam ** (-3.0 * k) * setting.w * _pow(cache.F, -k) * cache.Gk
    c = _pow(cache.F, -k - 2.0) * cache.U0inv2**2 * cache.xi**4
    calE = (
        _kinetic(delta, state.lam, k, float(q @ (Wi * DiV * DiV)))
        + float(q @ (Wi * DiT * DiT))
        + float(q @ (Wi1 * Di1T * Di1T))
    )
    mfE = (
        0.5 * _kinetic(delta, state.lam, k, float(q @ (Wi * (1.0 + X) * DiV * DiV)))
        + 0.5 * float(q @ (Wi * (1.0 + X) * DiT * DiT))
        + 0.5 * (1.0 + k) * float(q @ (Wi1 * c * Di1T * Di1T))
    )
    mfD = (1.0 - 1.5 * k) * state.lambda_bar_tau * _kinetic(delta, state.lam, k, float(q @ (Wi * DiV * DiV)))
    return calE, mfE, mfD


@dataclass(frozen=True)
class BootstrapFlag:
    ok: bool
    margin: float


def bootstrap_monitor(
    setting: Setting,
    state: LagrangianState,
    cache: CachedQuantities,
    lambda_bar: float,
    energy_sup: float | None = None,
    M_star: float = 10.0,
    epsilon: float | None = None,
) -> dict[str, BootstrapFlag]:
    """Evaluate the bootstrap bands for one state.

    ``EN`` compares the running supremum of the energy sum with M_star * epsilon
    and is only reported when both are given. ``U0`` and ``U0_improved`` are
    the bands [1/2, 3/2] and [2/3, 4/3] for (U0)**-2 relative to
    1 - lambda_bar**2 zeta**2; ``FG`` bounds |F - 1| + |kappa Gbar - 1| by 1/100.
    Margins are positive inside the band.
    """
    flags: dict[str, BootstrapFlag] = {}
    if energy_sup is not None and epsilon is not None:
        margin = M_star * epsilon - energy_sup
        flags["EN"] = BootstrapFlag(margin >= 0.0, margin)
    base = 1.0 - lambda_bar**2 * setting.grid.zeta**2
    ratio = cache.U0inv2 / base
    for name, lo, hi in (("U0", 0.5, 1.5), ("U0_improved", 2.0 / 3.0, 4.0 / 3.0)):
        margin = float(min(np.min(ratio - lo), np.min(hi - ratio)))
        flags[name] = BootstrapFlag(margin >= 0.0, margin)
    fg = float(np.max(np.abs(cache.F - 1.0))) + float(np.max(np.abs(setting.kappa * cache.Gbar - 1.0)))
    flags["FG"] = BootstrapFlag(fg <= 0.01, 0.01 - fg)
    return flags


@dataclass
class EnergyReport:
    """Diagnostics recorded at one instant of a run."""

    tau: float
    calE: list
    mfE: list
    mfD: list
    S_contribution: float
    bootstrap: dict
    identity_residuals: dict
    balance: dict = field(default_factory=dict)

    @property
    def energy_sum(self) -> float:
        return float(sum(self.calE))

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "calE": list(self.calE),
            "mfE": list(self.mfE),
            "mfD": list(self.mfD),
            "S_contribution": self.S_contribution,
            "bootstrap": {k: [v.ok, v.margin] for k, v in self.bootstrap.items()},
            "identity_residuals": dict(self.identity_residuals),
            "balance": dict(self.balance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyReport":
        return cls(
            tau=d["tau"],
            calE=list(d["calE"]),
            mfE=list(d["mfE"]),
            mfD=list(d["mfD"]),
            S_contribution=d["S_contribution"],
            bootstrap={k: BootstrapFlag(bool(v[0]), float(v[1])) for k, v in d["bootstrap"].items()},
            identity_residuals=dict(d["identity_residuals"]),
            balance=dict(d.get("balance", {})),
        )


def equivalence_constant(report: EnergyReport) -> float:
    """Smallest C with mfE_i / calE_i in [1/C, C] over the recorded orders."""
    worst = 1.0
    for a, b in zip(report.mfE, report.calE):
        if a > 0.0 and b > 0.0 and math.isfinite(a) and math.isfinite(b):
            r = a / b
            worst = max(worst, r, 1.0 / r)
    return worst


# -- energy balance at order 0 -------------------------------------------------------------


BALANCE_TERMS = ("mfE0", "mfD0", "flux_R", "flux_E1", "flux_E2", "flux_E3", "flux_E4", "flux_E5", "flux_E6",
                 "I1", "I2", "I3", "I4", "I5")


def balance_terms(model: Model, state: LagrangianState) -> dict:
    """All terms of the order-0 energy balance except d/dtau of the energy.

    The balance reads d mfE0/dtau + mfD0 + flux_R + sum_j flux_Ej + sum_j Ij = 0,
    where the fluxes pair the remainders and error terms with d_tau Theta in
    the order-0 inner product and I1..I5 collect the time and space
    derivatives of the coefficient fields.
    """
    st = model.setting
    g = st.grid
    k = st.kappa
    delta = st.delta
    lam, lbt = state.lam, state.lambda_bar_tau
    accel, cache, br = model.acceleration(state)
    z = g.zeta
    q = g.quad
    w = st.w
    W = st.w_pow * z * z
    V = state.dTheta
    DzT = br.DzTheta
    Fk = _pow(cache.F, -k)
    Y = w * Fk * cache.Gk
    if st.classical_limit:
        dGk = np.zeros_like(Y)
    else:
        dG = dtau_gbar(st, model.snapshot, cache.U0, cache.F, lam, lbt, cache.dF, cache.dU0inv2)
        dGk = -cache.Gk * dG / cache.Gbar
    dY = w * (-k * _pow(cache.F, -k - 1.0) * cache.dF * cache.Gk + Fk * dGk)
    lam3 = lam ** (-3.0 * k)
    X = delta * lam3 * Y
    dX = delta * lam3 * (dY - 3.0 * k * lbt * Y)
    c = br.c
    dxi = g.over_zeta(V)
    dc = c * ((-k - 2.0) * cache.dF / cache.F + 2.0 * cache.dU0inv2 / cache.U0inv2 + 4.0 * dxi / cache.xi)
    zc = g.D @ c
    E = list(br.E)
    E[3] = br.E4_indep + br.e4_coeff * accel
    R = br.R1 + br.R2 + br.R3
    out = {
        "mfE0": 0.5 * _kinetic(delta, lam, k, float(q @ (W * (1.0 + X) * V * V)))
        + 0.5 * float(q @ (W * (1.0 + X) * state.Theta**2))
        + 0.5 * (1.0 + k) * float(q @ (w * W * c * DzT * DzT)),
        "mfD0": (1.0 - 1.5 * k) * lbt * _kinetic(delta, lam, k, float(q @ (W * V * V))),
        "flux_R": float(q @ (W * R * V)),
    }
    for j, e in enumerate(E, start=1):
        out[f"flux_E{j}"] = float(q @ (W * e * V))
    out["I1"] = -0.5 * float(q @ (W * dY * V * V))
    out["I2"] = lbt * float(q @ (W * Y * V * V))
    out["I3"] = -0.5 * float(q @ (W * dX * state.Theta**2))
    out["I4"] = -0.5 * (1.0 + k) * float(q @ (w * W * dc * DzT * DzT))
    out["I5"] = (1.0 + k) * float(q @ (w * W * zc * V * DzT))
    return out


@dataclass(frozen=True)
class BalanceSeries:
    tau: np.ndarray
    residual: np.ndarray
    relative: np.ndarray
    largest_term: np.ndarray


def energy_balance_residual(reports: list, i: int = 0) -> BalanceSeries:
    """Residual of the order-0 energy balance at interior records.

    d mfE0/dtau is a central difference over neighbouring records, which must
    be equally spaced in tau.
    """
    if i != 0:
        raise DiagnosticUnavailableError("the energy balance is implemented at order 0 only")
    rows = [r for r in reports if r.balance]
    if len(rows) < 3:
        raise DiagnosticUnavailableError("energy balance needs at least three records with balance terms")
    tau = np.array([r.tau for r in rows])
    steps = np.diff(tau)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])) or steps[0] <= 0.0:
        raise DiagnosticUnavailableError("energy balance needs equally spaced records")
    h = steps[0]
    E = np.array([r.balance["mfE0"] for r in rows])
    dE = (E[2:] - E[:-2]) / (2.0 * h)
    mid = rows[1:-1]
    rest_names = [n for n in BALANCE_TERMS if n != "mfE0"]
    rest = np.array([[r.balance[n] for n in rest_names] for r in mid])
    resid = dE + rest.sum(axis=1)
    largest = np.maximum(np.abs(dE), np.max(np.abs(rest), axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(largest > 0.0, np.abs(resid) / largest, 0.0)
    return BalanceSeries(tau[1:-1], resid, rel, largest)


# -- identities -----------------------------------------------------------------------------


def random_odd_field(rng: np.random.Generator, grid: RadialGrid, amplitude: float, slope_cap: float = 0.5) -> np.ndarray:
    """Random analytic odd function on [0, 1] with sup |f| = amplitude and sup |f'| <= slope_cap."""
    z = grid.zeta
    a = rng.uniform(-1.0, 1.0, 4)
    b = rng.uniform(0.5, 3.0)
    c = rng.uniform(0.0, 2.0)
    f = a[0] * z + a[1] * z**3 + a[2] * np.sin(b * z) + a[3] * z / (1.0 + c * z * z)
    f = amplitude * f / np.max(np.abs(f))
    slope = float(np.max(np.abs(grid.D @ f)))
    if slope > slope_cap:
        f = f * (slope_cap / slope)
    f[0] = 0.0
    return f


def random_even_field(rng: np.random.Generator, grid: RadialGrid) -> np.ndarray:
    z = grid.zeta
    a = rng.uniform(-1.0, 1.0, 3)
    return 1.0 + a[0] * z**2 + a[1] * np.cos(rng.uniform(0.5, 3.0) * z) + a[2] * z**4


def _rel(diff: np.ndarray, *terms: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(t))) for t in terms)
    return float(np.max(np.abs(diff))) / scale if scale > 0.0 else 0.0


def jacobian_expansion_residual(grid: RadialGrid, Theta: np.ndarray) -> float:
    """F - 1 against D_z(Theta + Theta**2/zeta) + D_z(Theta**3/zeta**2)/3."""
    F, theta, dT = jacobian_F(grid, Theta)
    a = Theta + Theta * theta
    b = Theta * theta * theta / 3.0
    t1 = grid.Dz(a)
    t2 = grid.Dz(b)
    return _rel(F - 1.0 - t1 - t2, F - 1.0, t1, t2)


def product_rule_residuals(grid: RadialGrid, f_even: np.ndarray, g_odd: np.ndarray) -> dict:
    """d_z(fg) = f'g + fg' and D_z(fg) = f'g + f D_z g for even f and odd g."""
    df = grid.D @ f_even
    fg = f_even * g_odd
    lhs1 = grid.D @ fg
    rhs1a, rhs1b = df * g_odd, f_even * (grid.D @ g_odd)
    lhs2 = grid.Dz(fg)
    rhs2b = f_even * grid.Dz(g_odd)
    return {
        "product_rule_dz": _rel(lhs1 - rhs1a - rhs1b, lhs1, rhs1a, rhs1b),
        "product_rule_Dz": _rel(lhs2 - rhs1a - rhs2b, lhs2, rhs1a, rhs2b),
    }


def state_identities(model: Model, state: LagrangianState) -> dict:
    """Pressure decomposition, remainder expansion, cancellation split and algebraic identities."""
    st = model.setting
    g = st.grid
    cache = compute_cache(st, model.snapshot, state)
    out = {
        "jacobian_expansion": jacobian_expansion_residual(g, state.Theta),
        "pressure_decomposition": pressure_gradient(model, state, cache)["residual"],
        "remainder_expansion": r3_decomposition_check(model, state, cache),
    }
    mc = m_cancellation_check(model, state, cache)
    out["cancellation_split"] = mc["residual"]
    out["cancellation_boundary_coefficient"] = float(mc["second_order_coeff_at_boundary"])
    Gf = _pow(cache.Gk, 1.0 / st.kappa)
    out["density_identity"] = _rel(cache.f * cache.F - st.wdelta_pow * Gf, st.wdelta_pow * Gf)
    if not st.classical_limit:
        # pointwise solve without the back-substitution guard, so mutated models still report
        br = model.breakdown(state, cache)
        accel = br.accel_rhs_b / br.accel_coeff_a
        dU = dtau_u0inv2(g, state.Theta, state.dTheta, accel, cache.A, state.lam, state.lambda_bar_tau,
                         st.kappa, st.delta)
        d_closed = dtau_gbar(st, model.snapshot, cache.U0, cache.F, state.lam, state.lambda_bar_tau, cache.dF, dU)
        d_ode = gbar_ode_rhs(st, cache.Gbar, cache.U0inv2, cache.F, state.lam, state.lambda_bar_tau, cache.dF, dU)
        out["corrector_evolution"] = _rel(d_closed - d_ode, d_closed, d_ode)
    return out


def u0_material_check(model: Model, states: list, h: float) -> dict:
    """Lagrangian form of the u0 cancellation along three consecutive states spaced by h in tau.

    Compares the central difference of U0 with U0**3 A (accel + lbt dTheta +
    delta lambda**(-3k) (Theta + zeta)) at the middle state, and estimates the
    difference error from the same stencil on a five-point window when given.
    """
    if len(states) not in (3, 5):
        raise InsufficientDataError("u0 check needs 3 or 5 equally spaced states")
    st = model.setting
    k = st.kappa
    U = [compute_cache(st, model.snapshot, s).U0 for s in states]
    m = len(states) // 2
    s_mid = states[m]
    accel, cache, _ = model.acceleration(s_mid)
    rhs = cache.U0**3 * cache.A * (
        accel + s_mid.lambda_bar_tau * s_mid.dTheta + st.delta * s_mid.lam ** (-3.0 * k) * (s_mid.Theta + st.grid.zeta)
    )
    fd = (U[m + 1] - U[m - 1]) / (2.0 * h)
    resid = float(np.max(np.abs(fd - rhs)))
    out = {"residual": resid, "scale": float(np.max(np.abs(rhs)))}
    if len(states) == 5:
        fd2 = (U[4] - U[0]) / (4.0 * h)
        out["fd_error_estimate"] = float(np.max(np.abs(fd2 - fd))) / 3.0
    return out


# -- observables ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SupportReport:
    t: np.ndarray
    radius: np.ndarray
    slope: float
    theta_end: float
    cauchy_T: np.ndarray
    cauchy_sup: np.ndarray
    cauchy_rate: float
    partial: bool


def support_radius(
    tau: np.ndarray,
    t: np.ndarray,
    lam: np.ndarray,
    theta_boundary: np.ndarray,
    fit_fraction: float = 0.2,
    cauchy_window: tuple[float, float] = (0.2, 0.6),
    partial: bool = False,
) -> SupportReport:
    """Radius r = lambda (1 + Theta(tau, 1)), its tail slope in t and the Cauchy decay of Theta(., 1).

    The Cauchy sup at T is max - min of Theta(., 1) over [T, tau_end]; its
    exponential rate is fitted over T in ``cauchy_window`` (fractions of tau_end).
    """
    tau = np.asarray(tau, dtype=float)
    r = np.asarray(lam) * (1.0 + np.asarray(theta_boundary))
    t = np.asarray(t, dtype=float)
    lo = t[0] + (1.0 - fit_fraction) * (t[-1] - t[0])
    mask = t >= lo
    if int(mask.sum()) < 10:
        raise InsufficientDataError("support-radius fit needs at least 10 samples in the tail")
    slope = float(np.polyfit(t[mask], r[mask], 1)[0])
    th = np.asarray(theta_boundary, dtype=float)
    run_max = np.maximum.accumulate(th[::-1])[::-1]
    run_min = np.minimum.accumulate(th[::-1])[::-1]
    sup = run_max - run_min
    a, b = cauchy_window
    wmask = (tau >= a * tau[-1]) & (tau <= b * tau[-1]) & (sup > 0.0)
    if int(wmask.sum()) >= 10:
        rate = float(-np.polyfit(tau[wmask], np.log(sup[wmask]), 1)[0])
    else:
        rate = math.nan
    return SupportReport(t, r, slope, float(th[-1]), tau, sup, rate, partial)


@dataclass
class Trajectory:
    """Recorded states and reports of one run.

    ``rows`` holds per-step monitors (one entry per accepted step plus the
    initial state); ``states`` and ``reports`` are aligned and taken every
    ``record_every`` steps. ``termination`` is None for a clean run, otherwise
    a dict with cause, message and tau.
    """

    config: object
    dt: float
    rows: list
    record_tau: list
    states: list
    reports: list
    termination: dict | None
    steps: int
    interrupted: bool = False
    epsilon: float = 0.0
    energy_initial: float = 0.0
    energy_sup: float = 0.0

    ROW_FIELDS = ("step", "tau", "t", "lambda", "lambda_bar_tau", "theta_boundary", "fg_sum", "u0_ratio_min",
                  "u0_ratio_max", "residual", "parity_drift")

    def column(self, name: str) -> np.ndarray:
        j = self.ROW_FIELDS.index(name)
        return np.array([r[j] for r in self.rows])

    @property
    def completed(self) -> bool:
        return self.termination is None and not self.interrupted


def trajectory_support(traj: Trajectory, fit_fraction: float = 0.2) -> SupportReport:
    return support_radius(
        traj.column("tau"), traj.column("t"), traj.column("lambda"), traj.column("theta_boundary"),
        fit_fraction=fit_fraction, partial=not traj.completed,
    )
