"""Main perturbation equation: spatial terms, pointwise acceleration solve, RK4 stepping.

The momentum equation, multiplied through by delta so that delta = 0 stays
regular, reads

    (1 + X) [lambda**(3k) (a + lbt * d_tau Theta) + delta * Theta]
        + delta * ((1 + k) c L0(Theta) + R1 + R2 + R3 + E1 + ... + E6) = 0

with ``a = d_tau^2 Theta``, ``k = kappa``, ``lbt = lambda_bar_tau``,
``X = delta lambda**(-3k) w F**(-k) G**k`` and ``c = F**(-k-2) U0**(-4) xi**4``.
The pressure term ``(1 + k) c L0(Theta) + R1 + R2 + R3`` is the decomposed
form of ``U0**(-4) xi**2 w**(-1/k) d_z(w**(1+1/k) (F**(-1-k) - 1))``; both are
computed so their agreement can be monitored.

E4 contains d_tau of the corrector, which depends linearly on ``a`` through
d_tau (U0)**-2. That dependence is split off as ``e4_coeff * a`` so the
acceleration follows from a pointwise linear solve ``A(zeta) a = B(zeta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InstabilityError, ResolutionError, SimulationError
from .quantities import (
    CachedQuantities,
    InitialSnapshot,
    LagrangianState,
    Setting,
    compute_cache,
    dtau_gbar,
    dtau_u0inv2,
    gbar_ode_rhs,
)


def _pm1(F: np.ndarray, p: float) -> np.ndarray:
    """F**p - 1 without cancellation for F close to 1."""
    return np.expm1(p * np.log(F))


def _pow(F: np.ndarray, p: float) -> np.ndarray:
    return np.exp(p * np.log(F))


@dataclass
class RhsBreakdown:
    """All spatial terms of the main equation at one state (delta-free normalisation)."""

    pressure_direct: np.ndarray
    L0: np.ndarray
    L0_term: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    R3: np.ndarray
    E: list
    E4_indep: np.ndarray
    e4_coeff: np.ndarray
    X: np.ndarray
    c: np.ndarray
    DzTheta: np.ndarray
    accel_coeff_a: np.ndarray
    accel_rhs_b: np.ndarray
    g_acc: np.ndarray
    g_rest: np.ndarray
    b_scale: float

    @property
    def pressure_decomposed(self) -> np.ndarray:
        return self.L0_term + self.R1 + self.R2 + self.R3


@dataclass
class Model:
    """Evaluator of the main equation for a fixed setting and initial snapshot.

    ``e6_sign`` selects the sign convention of the background term E6:
    ``"literal"`` uses E6 = -(1+X) zeta, ``"derived"`` uses +(1+X) zeta, which is
    what the momentum equation gives when the delta*eta term is moved across.
    ``flip_r2`` is a mutation-testing hook that negates R2.
    """

    setting: Setting
    snapshot: InitialSnapshot
    e6_sign: str = "literal"
    flip_r2: bool = False
    solve_tolerance: float = 1e-10
    parity_tolerance: float = 1e-9
    last_parity_drift: float = field(default=0.0, init=False)
    last_residual: float = field(default=0.0, init=False)

    def __post_init__(self) -> None:
        if self.e6_sign not in ("literal", "derived"):
            raise ValueError(f"e6_sign must be 'literal' or 'derived', got {self.e6_sign!r}")

    # -- spatial terms -------------------------------------------------------------
    def pressure_terms(self, state: LagrangianState, cache: CachedQuantities) -> dict:
        """Direct and decomposed pressure term together with the pieces of the decomposition."""
        st = self.setting
        g = st.grid
        k = st.kappa
        w, dw = st.w, st.dw
        F, xi, theta = cache.F, cache.xi, cache.theta
        U4 = cache.U0inv2 * cache.U0inv2
        DzT = g.Dz(state.Theta, cache.dTheta_dz)
        dDzT = g.D @ DzT
        L0 = -(1.0 + 1.0 / k) * dw * DzT - w * dDzT
        Fk2 = _pow(F, -k - 2.0)
        xi2 = xi * xi
        c = Fk2 * U4 * xi2 * xi2
        dtheta = g.D @ theta
        R1 = -2.0 * (1.0 + k) * Fk2 * U4 * xi2 * xi * w * g.zeta * dtheta * dtheta
        R2 = ((1.0 + k) ** 2 / k) * U4 * xi2 * dw * (3.0 * theta**2 + 2.0 * theta**3)
        if self.flip_r2:
            R2 = -R2
        bracket = _pm1(F, -k - 1.0) + (1.0 + k) * (F - 1.0) + (1.0 + k) * _pm1(F, -k - 2.0) * xi2 * DzT
        R3 = ((1.0 + k) / k) * U4 * xi2 * dw * bracket
        dF = g.D @ F
        direct = U4 * xi2 * (-(1.0 + k) * w * Fk2 * dF + ((1.0 + k) / k) * dw * _pm1(F, -k - 1.0))
        return {
            "direct": direct,
            "L0": L0,
            "L0_term": (1.0 + k) * c * L0,
            "R1": R1,
            "R2": R2,
            "R3": R3,
            "c": c,
            "DzTheta": DzT,
            "dDzTheta": dDzT,
            "bracket": bracket,
            "U4": U4,
        }

    def breakdown(self, state: LagrangianState, cache: CachedQuantities) -> RhsBreakdown:
        st = self.setting
        k = st.kappa
        delta = st.delta
        w, dw = st.w, st.dw
        lam, lbt = state.lam, state.lambda_bar_tau
        F, xi, Gk = cache.F, cache.xi, cache.Gk
        p = self.pressure_terms(state, cache)
        U4 = p["U4"]
        xi2 = xi * xi
        Fk = _pow(F, -k)
        X = delta * lam ** (-3.0 * k) * w * Fk * Gk
        zero = np.zeros_like(F)
        if st.classical_limit:
            E1 = E2 = E3 = E4i = E5 = e4c = g_acc = g_rest = zero
        else:
            E1 = p["direct"] * (Gk - 1.0)
            E2 = U4 * xi2 * (1.0 + 1.0 / k) * dw * Gk
            E3 = ((1.0 + k) / k) * U4 * xi2 * _pow(F, -k - 1.0) * w * (st.grid.D @ Gk)
            A = cache.A
            # d_tau Gbar = g_acc * accel + g_rest
            zero_acc = np.zeros_like(F)
            dU_rest = dtau_u0inv2(st.grid, state.Theta, state.dTheta, zero_acc, A, lam, lbt, k, delta)
            g_rest = dtau_gbar(st, self.snapshot, cache.U0, F, lam, lbt, cache.dF, dU_rest)
            g_acc = A * _pow(cache.U0, k + 2.0) * k * self.snapshot.K
            c4 = ((1.0 + k) / k) * cache.U0inv2 * A * w
            E4i = c4 * (-k * _pow(F, -k - 1.0) * cache.dF * Gk - Fk * Gk * g_rest / cache.Gbar)
            e4c = -c4 * Fk * Gk * g_acc / cache.Gbar
            E5 = -3.0 * (1.0 + k) * lbt * cache.U0inv2 * A * w * Fk * Gk
        sign6 = -1.0 if self.e6_sign == "literal" else 1.0
        E6 = sign6 * (1.0 + X) * st.grid.zeta
        lam3k = lam ** (3.0 * k)
        a_coef = (1.0 + X) * lam3k + delta * e4c
        pieces = [p["L0_term"], p["R1"], p["R2"], p["R3"], E1, E2, E3, E4i, E5, E6]
        spatial = np.sum(pieces, axis=0)
        damp = (1.0 + X) * lam3k * lbt * state.dTheta
        restoring = (1.0 + X) * delta * state.Theta
        b_rhs = -(damp + restoring + delta * spatial)
        b_scale = max(
            float(np.max(np.abs(damp))),
            float(np.max(np.abs(restoring))),
            delta * max(float(np.max(np.abs(q))) for q in pieces),
        )
        return RhsBreakdown(
            pressure_direct=p["direct"],
            L0=p["L0"],
            L0_term=p["L0_term"],
            R1=p["R1"],
            R2=p["R2"],
            R3=p["R3"],
            E=[E1, E2, E3, E4i, E5, E6],
            E4_indep=E4i,
            e4_coeff=e4c,
            X=X,
            c=p["c"],
            DzTheta=p["DzTheta"],
            accel_coeff_a=a_coef,
            accel_rhs_b=b_rhs,
            g_acc=g_acc,
            g_rest=g_rest,
            b_scale=b_scale,
        )

    def error_terms(self, state: LagrangianState, cache: CachedQuantities, accel: np.ndarray | None = None) -> list:
        """E1..E6; E4 includes its acceleration-dependent part when ``accel`` is given."""
        br = self.breakdown(state, cache)
        E = list(br.E)
        if accel is not None:
            E[3] = br.E4_indep + br.e4_coeff * accel
        return E

    # -- acceleration ----------------------------------------------------------------
    def full_equation_residual(
        self, state: LagrangianState, cache: CachedQuantities, accel: np.ndarray, br: RhsBreakdown
    ) -> float:
        """Relative sup-norm residual of the main equation evaluated along an independent path.

        The pressure term is taken in its direct (undecomposed) form and E4 is
        rebuilt from d_tau (U0)**-2 with the supplied acceleration.
        """
        st = self.setting
        k = st.kappa
        delta = st.delta
        lam, lbt = state.lam, state.lambda_bar_tau
        if st.classical_limit:
            E4 = np.zeros_like(accel)
        else:
            dU = dtau_u0inv2(st.grid, state.Theta, state.dTheta, accel, cache.A, lam, lbt, k, delta)
            dG = dtau_gbar(st, self.snapshot, cache.U0, cache.F, lam, lbt, cache.dF, dU)
            dGk = -cache.Gk * dG / cache.Gbar
            Fk = _pow(cache.F, -k)
            dFG = -k * _pow(cache.F, -k - 1.0) * cache.dF * cache.Gk + Fk * dGk
            E4 = ((1.0 + k) / k) * cache.U0inv2 * cache.A * st.w * dFG
        E = list(br.E)
        E[3] = E4
        inertia = (1.0 + br.X) * (lam ** (3.0 * k) * (accel + lbt * state.dTheta) + delta * state.Theta)
        terms = [inertia, delta * br.pressure_direct] + [delta * e for e in E]
        total = np.sum(terms, axis=0)
        scale = max(float(np.max(np.abs(t))) for t in terms)
        if scale == 0.0:
            return 0.0
        return float(np.max(np.abs(total))) / scale

    def acceleration(self, state: LagrangianState, cache: CachedQuantities | None = None):
        """Solve A(zeta) * accel = B(zeta) pointwise; returns (accel, cache, breakdown)."""
        st = self.setting
        if cache is None:
            cache = compute_cache(st, self.snapshot, state)
        br = self.breakdown(state, cache)
        lam3k = state.lam ** (3.0 * st.kappa)
        a = br.accel_coeff_a
        bad = np.nonzero(np.abs(a) < 0.5 * lam3k)[0]
        if bad.size:
            raise InstabilityError("quasilinear coefficient of the acceleration degenerated", int(bad[0]))
        accel = br.accel_rhs_b / a
        if not np.all(np.isfinite(accel)):
            raise InstabilityError("non-finite acceleration")
        # the origin value must vanish for an odd solution; measure what the
        # discretisation leaves there relative to the size of the forcing terms
        self.last_parity_drift = abs(float(br.accel_rhs_b[0])) / br.b_scale if br.b_scale > 0 else 0.0
        accel[0] = 0.0
        resid = self.full_equation_residual(state, cache, accel, br)
        self.last_residual = resid
        if resid > self.solve_tolerance:
            raise ResolutionError(f"acceleration back-substitution residual {resid:.3e} above tolerance")
        if not st.classical_limit:
            dU = dtau_u0inv2(st.grid, state.Theta, state.dTheta, accel, cache.A, state.lam,
                             state.lambda_bar_tau, st.kappa, st.delta)
            cache.dU0inv2 = dU
        else:
            cache.dU0inv2 = np.zeros_like(accel)
        return accel, cache, br

    # -- time stepping ------------------------------------------------------------------
    def rhs(self, y: "StepVector") -> "StepVector":
        state = y.state()
        accel, cache, _ = self.acceleration(state)
        st = self.setting
        if st.classical_limit:
            dgbar = np.zeros_like(accel)
        else:
            dgbar = gbar_ode_rhs(st, y.gbar, cache.U0inv2, cache.F, state.lam, state.lambda_bar_tau,
                                 cache.dF, cache.dU0inv2)
        k = st.kappa
        return StepVector(
            tau=1.0,
            Theta=y.dTheta.copy(),
            dTheta=accel,
            lam=y.lam * y.lbt,
            lbt=st.delta * y.lam ** (-3.0 * k),
            t=y.lam,
            gbar=dgbar,
        )


@dataclass
class StepVector:
    """RK4 state: perturbation, background clocks and the ODE-evolved Gbar."""

    tau: float
    Theta: np.ndarray
    dTheta: np.ndarray
    lam: float
    lbt: float
    t: float
    gbar: np.ndarray

    def state(self) -> LagrangianState:
        return LagrangianState(self.tau, self.Theta, self.dTheta, self.lam, self.lbt, self.t)

    def axpy(self, h: float, k: "StepVector") -> "StepVector":
        return StepVector(
            self.tau + h * k.tau,
            self.Theta + h * k.Theta,
            self.dTheta + h * k.dTheta,
            self.lam + h * k.lam,
            self.lbt + h * k.lbt,
            self.t + h * k.t,
            self.gbar + h * k.gbar,
        )


def step(model: Model, y: StepVector, dt: float, filter_matrix: np.ndarray | None = None) -> tuple[StepVector, dict]:
    """One classical RK4 step of the first-order system in tau.

    Returns the new vector and per-step monitors (maximal back-substitution
    residual and parity drift over the four stages).
    """
    stats = {"residual": 0.0, "parity_drift": 0.0}
    ks = []
    stage_inputs = [(0.0, None), (0.5, 0), (0.5, 1), (1.0, 2)]
    for stage, (frac, prev) in enumerate(stage_inputs):
        yi = y if prev is None else y.axpy(frac * dt, ks[prev])
        try:
            ki = model.rhs(yi)
        except SimulationError as exc:
            exc.tau = y.tau
            exc.stage = stage + 1
            raise
        stats["residual"] = max(stats["residual"], model.last_residual)
        stats["parity_drift"] = max(stats["parity_drift"], model.last_parity_drift)
        ks.append(ki)
    k1, k2, k3, k4 = ks
    h6 = dt / 6.0

    def comb(a, b, c, d):
        return a + 2.0 * b + 2.0 * c + d

    Theta = y.Theta + h6 * comb(k1.Theta, k2.Theta, k3.Theta, k4.Theta)
    dTheta = y.dTheta + h6 * comb(k1.dTheta, k2.dTheta, k3.dTheta, k4.dTheta)
    if filter_matrix is not None:
        Theta = filter_matrix @ Theta
        dTheta = filter_matrix @ dTheta
    scale = max(float(np.max(np.abs(Theta))), 1e-300)
    drift = abs(float(Theta[0])) / scale
    stats["parity_drift"] = max(stats["parity_drift"], drift)
    Theta[0] = 0.0
    dTheta[0] = 0.0
    out = StepVector(
        tau=y.tau + dt,
        Theta=Theta,
        dTheta=dTheta,
        lam=y.lam + h6 * comb(k1.lam, k2.lam, k3.lam, k4.lam),
        lbt=y.lbt + h6 * comb(k1.lbt, k2.lbt, k3.lbt, k4.lbt),
        t=y.t + h6 * comb(k1.t, k2.t, k3.t, k4.t),
        gbar=y.gbar + h6 * comb(k1.gbar, k2.gbar, k3.gbar, k4.gbar),
    )
    if not (np.all(np.isfinite(out.Theta)) and np.all(np.isfinite(out.dTheta))):
        err = InstabilityError("non-finite state after step")
        err.tau = y.tau
        raise err
    if stats["parity_drift"] > model.parity_tolerance:
        err = ResolutionError(f"parity drift {stats['parity_drift']:.3e} above tolerance")
        err.tau = y.tau
        raise err
    return out, stats


def cfl_dt(model: Model, state: LagrangianState, cache: CachedQuantities) -> float:
    """Sound-speed CFL heuristic: 0.5 * min spacing / max(sound speed, lambda_bar_tau)."""
    st = model.setting
    k = st.kappa
    cs = np.sqrt(np.maximum(st.delta * st.w * _pow(cache.F, -k - 1.0), 0.0)) * state.lam ** (-1.5 * k)
    speed = max(float(np.max(cs)), abs(state.lambda_bar_tau), 1e-300)
    return 0.5 * st.grid.min_spacing / speed


# -- checks used by the identity suite ---------------------------------------------------------


def pressure_gradient(model: Model, state: LagrangianState, cache: CachedQuantities | None = None) -> dict:
    """Direct pressure term, its decomposition and their relative pointwise residual."""
    if cache is None:
        cache = compute_cache(model.setting, model.snapshot, state)
    p = model.pressure_terms(state, cache)
    decomposed = p["L0_term"] + p["R1"] + p["R2"] + p["R3"]
    scale = max(float(np.max(np.abs(x))) for x in (p["direct"], p["L0_term"], p["R1"], p["R2"], p["R3"]))
    diff = float(np.max(np.abs(p["direct"] - decomposed)))
    return {
        "direct": p["direct"],
        "decomposed": decomposed,
        "residual": diff / scale if scale > 0 else 0.0,
    }


def r3_decomposition_check(model: Model, state: LagrangianState, cache: CachedQuantities | None = None) -> float:
    """D_z of the bare remainder R3(theta) against its one-derivative expansion."""
    st = model.setting
    g = st.grid
    k = st.kappa
    if cache is None:
        cache = compute_cache(st, model.snapshot, state)
    F, xi, theta = cache.F, cache.xi, cache.theta
    p = model.pressure_terms(state, cache)
    bracket = p["bracket"]
    R3bare = ((1.0 + k) / k) * st.dw * bracket
    lhs = g.Dz(R3bare)
    dtheta = g.D @ theta
    dF = xi * xi * (g.zeta * (g.D @ dtheta) + 4.0 * dtheta) + 2.0 * g.zeta * xi * dtheta**2
    part1 = ((1.0 + k) / k) * g.Dz(st.dw) * bracket
    part2 = ((1.0 + k) / k) * st.dw * (
        6.0 * (1.0 + k) * _pm1(F, -k - 2.0) * xi * theta * dtheta
        - (k + 1.0) * (k + 2.0) * _pow(F, -k - 3.0) * xi * xi * dF * p["DzTheta"]
    )
    rhs = part1 + part2
    scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(part1))), float(np.max(np.abs(part2))))
    return float(np.max(np.abs(lhs - rhs))) / scale if scale > 0 else 0.0


def m_cancellation_check(model: Model, state: LagrangianState, cache: CachedQuantities | None = None) -> dict:
    """Evaluate M = D_z R3 + (1+k) R4 directly and through the split M1 + M2 + M3.

    Also reports the coefficient multiplying second derivatives of Theta in
    the split, evaluated at the vacuum boundary, where it must vanish.
    """
    st = model.setting
    g = st.grid
    k = st.kappa
    w, dw = st.w, st.dw
    if cache is None:
        cache = compute_cache(st, model.snapshot, state)
    F, xi, theta = cache.F, cache.xi, cache.theta
    p = model.pressure_terms(state, cache)
    U4 = p["U4"]
    c = p["c"]
    R4 = (g.D @ c) * p["L0"]
    direct = g.Dz(p["R3"]) + (1.0 + k) * R4

    DzT = p["DzTheta"]
    dDzT = p["dDzTheta"]
    dtheta = g.D @ theta
    d2theta = g.D @ dtheta
    dF = xi * xi * (g.zeta * d2theta + 4.0 * dtheta) + 2.0 * g.zeta * xi * dtheta**2
    gfac = U4 * xi * xi * dw
    M1 = ((1.0 + k) / k) * g.Dz(gfac) * p["bracket"]
    M2 = (6.0 * (1.0 + k) ** 2 / k) * gfac * _pm1(F, -k - 2.0) * xi * theta * dtheta
    xi4 = xi**4
    d_U4xi4 = g.D @ (U4 * xi4)
    M3 = (1.0 + k) * w * ((k + 2.0) * _pow(F, -k - 3.0) * dF * U4 * xi4) * dDzT - (1.0 + k) * (
        _pow(F, -k - 2.0) * d_U4xi4
    ) * (((1.0 + k) / k) * dw * DzT + w * dDzT)
    split = M1 + M2 + M3
    scale = max(float(np.max(np.abs(x))) for x in (direct, M1, M2, M3))
    # coefficients of the second-derivative factors (d_z D_z Theta and theta'') in M3
    second = np.abs((1.0 + k) * w * (k + 2.0) * _pow(F, -k - 3.0) * dF * U4 * xi4) + np.abs(
        (1.0 + k) * w * _pow(F, -k - 2.0) * d_U4xi4
    ) + np.abs((1.0 + k) * w * (k + 2.0) * _pow(F, -k - 3.0) * U4 * xi4 * xi * xi * g.zeta * dDzT)
    return {
        "direct": direct,
        "split": split,
        "residual": float(np.max(np.abs(direct - split))) / scale if scale > 0 else 0.0,
        "second_order_coeff_at_boundary": float(second[-1]),
    }
