"""Derived Lagrangian quantities of a state (Theta, d_tau Theta).

Notation on the grid (all arrays over the collocation nodes):

    theta = Theta / zeta,   xi = 1 + theta
    F     = xi**2 * (1 + d_z Theta)                 Jacobian of the flow
    A     = d_tau Theta + lambda_bar_tau * (Theta + zeta)
    (U0)**-2 = 1 - A**2                             Lorentz factor
    Gbar  = U0**kappa * K - (delta/kappa) * lambda**(-3 kappa) * w * F**(-kappa)
    G     = (kappa * Gbar)**(-1/kappa)              relativistic corrector
    f     = w_delta**(1/kappa) * G / F              Lagrangian density

with the frozen factor ``K = (1/kappa) U0(0)**-kappa (1 + delta lambda0**(-3 kappa) w F(0)**-kappa)``
taken from the initial snapshot. Fractional powers go through exp/log after
positivity checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CausalityError, CorrectorPositivityError, DiffeomorphismLossError
from .grid import RadialGrid, Weight

GBAR_FLOOR = 1e-3  # relative to 1/kappa


@dataclass(frozen=True)
class Setting:
    """Grid, weight and constitutive exponent shared by every evaluation."""

    grid: RadialGrid
    weight: Weight
    kappa: float
    classical_limit: bool = False
    w: np.ndarray = field(init=False, repr=False)
    dw: np.ndarray = field(init=False, repr=False)
    w_pow: np.ndarray = field(init=False, repr=False)
    wdelta_pow: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        z = self.grid.zeta
        object.__setattr__(self, "w", self.weight(z))
        object.__setattr__(self, "dw", self.weight.d(z, 1))
        object.__setattr__(self, "w_pow", self.weight.power(z, 1.0 / self.kappa))
        object.__setattr__(self, "wdelta_pow", self.weight.scaled_power(z, 1.0 / self.kappa))

    @property
    def delta(self) -> float:
        return self.weight.delta_scale


@dataclass(frozen=True)
class LagrangianState:
    """Perturbation and background clocks at one instant of tau."""

    tau: float
    Theta: np.ndarray
    dTheta: np.ndarray
    lam: float
    lambda_bar_tau: float
    t: float = 0.0


@dataclass(frozen=True)
class InitialSnapshot:
    """Factors frozen at tau = 0 that enter the closed form of Gbar."""

    U0_at_0: np.ndarray
    F_at_0: np.ndarray
    lambda_at_0: float
    K: np.ndarray

    def to_dict(self) -> dict:
        return {
            "U0_at_0": self.U0_at_0.tolist(),
            "F_at_0": self.F_at_0.tolist(),
            "lambda_at_0": self.lambda_at_0,
        }


@dataclass
class CachedQuantities:
    """Everything derivable from a state without the acceleration."""

    theta: np.ndarray
    xi: np.ndarray
    dTheta_dz: np.ndarray
    F: np.ndarray
    A: np.ndarray
    U0inv2: np.ndarray
    U0: np.ndarray
    Gbar: np.ndarray
    Gk: np.ndarray
    G: np.ndarray
    f: np.ndarray
    dF: np.ndarray
    dU0inv2: np.ndarray | None = None


def _pow(x: np.ndarray, p: float) -> np.ndarray:
    return np.exp(p * np.log(x))


def jacobian_F(grid: RadialGrid, Theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (F, theta, d_z Theta) with F = (1 + Theta/zeta)**2 (1 + d_z Theta)."""
    dT = grid.D @ Theta
    theta = grid.over_zeta(Theta, dT)
    xi = 1.0 + theta
    one_dT = 1.0 + dT
    bad = np.nonzero((xi <= 0.0) | (one_dT <= 0.0))[0]
    if bad.size:
        raise DiffeomorphismLossError("flow map lost monotonicity (eta/zeta or d_z eta <= 0)", int(bad[0]))
    return xi * xi * one_dT, theta, dT


def u0_inv2(grid: RadialGrid, Theta: np.ndarray, dTheta: np.ndarray, lambda_bar_tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ((U0)**-2, A) and raise a causality error where the radicand is not positive."""
    A = dTheta + lambda_bar_tau * (Theta + grid.zeta)
    inv2 = 1.0 - A * A
    bad = np.nonzero(inv2 <= 0.0)[0]
    if bad.size:
        raise CausalityError(f"superluminal Lagrangian velocity |A|={abs(A[bad[0]]):.6g}", int(bad[0]))
    return inv2, A


def u0_lagrangian(grid: RadialGrid, Theta: np.ndarray, dTheta: np.ndarray, lambda_bar_tau: float) -> np.ndarray:
    inv2, _ = u0_inv2(grid, Theta, dTheta, lambda_bar_tau)
    return 1.0 / np.sqrt(inv2)


def dtau_F(grid: RadialGrid, Theta: np.ndarray, dTheta: np.ndarray, theta: np.ndarray, dTheta_dz: np.ndarray) -> np.ndarray:
    """d_tau F = 2 xi (d_tau Theta / zeta)(1 + d_z Theta) + xi**2 d_z d_tau Theta."""
    d_dT = grid.D @ dTheta
    dtheta_t = grid.over_zeta(dTheta, d_dT)
    xi = 1.0 + theta
    return 2.0 * xi * dtheta_t * (1.0 + dTheta_dz) + xi * xi * d_dT


def dtau_u0inv2(
    grid: RadialGrid,
    Theta: np.ndarray,
    dTheta: np.ndarray,
    accel: np.ndarray,
    A: np.ndarray,
    lam: float,
    lambda_bar_tau: float,
    kappa: float,
    delta: float,
) -> np.ndarray:
    """d_tau (U0)**-2 = -2 A (accel + d_tau(lambda_bar_tau)(Theta + zeta) + lambda_bar_tau d_tau Theta)."""
    dlbt = delta * lam ** (-3.0 * kappa)
    return -2.0 * A * (accel + dlbt * (Theta + grid.zeta) + lambda_bar_tau * dTheta)


def make_snapshot(setting: Setting, Theta0: np.ndarray, dTheta0: np.ndarray, lambda0: float, lambda1: float) -> InitialSnapshot:
    """Freeze U0 and F at tau = 0 together with the factor K of the Gbar closed form."""
    F0, _, _ = jacobian_F(setting.grid, Theta0)
    if setting.classical_limit:
        U00 = np.ones_like(F0)
    else:
        U00 = u0_lagrangian(setting.grid, Theta0, dTheta0, lambda1)
    return snapshot_from_arrays(setting, U00, F0, lambda0)


def snapshot_from_arrays(setting: Setting, U00: np.ndarray, F0: np.ndarray, lambda0: float) -> InitialSnapshot:
    k = setting.kappa
    K = (1.0 / k) * _pow(U00, -k) * (1.0 + setting.delta * lambda0 ** (-3.0 * k) * setting.w * _pow(F0, -k))
    return InitialSnapshot(U0_at_0=U00, F_at_0=F0, lambda_at_0=float(lambda0), K=K)


def gbar_closed_form(
    setting: Setting, snapshot: InitialSnapshot, U0: np.ndarray, F: np.ndarray, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Return (Gbar, G**kappa); raise if kappa*Gbar falls below the positivity floor."""
    k = setting.kappa
    if setting.classical_limit:
        return np.full_like(F, 1.0 / k), np.ones_like(F)
    gbar = _pow(U0, k) * snapshot.K - (setting.delta / k) * lam ** (-3.0 * k) * setting.w * _pow(F, -k)
    kg = k * gbar
    bad = np.nonzero(kg < GBAR_FLOOR)[0]
    if bad.size:
        raise CorrectorPositivityError(
            f"kappa*Gbar={kg[bad[0]]:.3e} below positivity floor {GBAR_FLOOR:g}", int(bad[0])
        )
    return gbar, 1.0 / kg


def dtau_gbar(
    setting: Setting,
    snapshot: InitialSnapshot,
    U0: np.ndarray,
    F: np.ndarray,
    lam: float,
    lambda_bar_tau: float,
    dF: np.ndarray,
    dU0inv2: np.ndarray,
) -> np.ndarray:
    """d_tau Gbar from differentiating the closed form in tau."""
    k = setting.kappa
    if setting.classical_limit:
        return np.zeros_like(F)
    dwl = setting.delta * setting.w * lam ** (-3.0 * k)
    kd = (
        -0.5 * k * dU0inv2 * _pow(U0, k + 2.0) * (k * snapshot.K)
        + k * dwl * _pow(F, -k - 1.0) * dF
        + 3.0 * k * lambda_bar_tau * dwl * _pow(F, -k)
    )
    return kd / k


def gbar_ode_rhs(
    setting: Setting,
    Gbar: np.ndarray,
    U0inv2: np.ndarray,
    F: np.ndarray,
    lam: float,
    lambda_bar_tau: float,
    dF: np.ndarray,
    dU0inv2: np.ndarray,
) -> np.ndarray:
    """Right-hand side of the linear evolution equation for Gbar (independent of its closed form)."""
    k = setting.kappa
    if setting.classical_limit:
        return np.zeros_like(F)
    dlog = dU0inv2 / U0inv2
    return -0.5 * k * dlog * Gbar + setting.delta * lam ** (-3.0 * k) * setting.w * _pow(F, -k) * (
        -0.5 * dlog + dF / F + 3.0 * lambda_bar_tau
    )


def density_f(setting: Setting, F: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Lagrangian density f = w_delta**(1/kappa) G / F."""
    return setting.wdelta_pow * G / F


def compute_cache(setting: Setting, snapshot: InitialSnapshot, state: LagrangianState) -> CachedQuantities:
    """First pass: every derived field that does not need the acceleration."""
    grid = setting.grid
    F, theta, dT = jacobian_F(grid, state.Theta)
    if setting.classical_limit:
        A = state.dTheta + state.lambda_bar_tau * (state.Theta + grid.zeta)
        inv2 = np.ones_like(F)
    else:
        inv2, A = u0_inv2(grid, state.Theta, state.dTheta, state.lambda_bar_tau)
    U0 = 1.0 / np.sqrt(inv2)
    gbar, Gk = gbar_closed_form(setting, snapshot, U0, F, state.lam)
    G = _pow(Gk, 1.0 / setting.kappa)
    dF = dtau_F(grid, state.Theta, state.dTheta, theta, dT)
    return CachedQuantities(
        theta=theta,
        xi=1.0 + theta,
        dTheta_dz=dT,
        F=F,
        A=A,
        U0inv2=inv2,
        U0=U0,
        Gbar=gbar,
        Gk=Gk,
        G=G,
        f=density_f(setting, F, G),
        dF=dF,
    )
