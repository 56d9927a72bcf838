"""Background scaling factor and time-coordinate conversions.

The expansion factor obeys ``lambda'' = delta * lambda**(-3*kappa - 1)`` in
physical time t, with ``lambda(0) = lambda0`` and ``lambda'(0) = lambda1``.
Two auxiliary clocks are carried as extra ODE components:

* ``tau`` with ``dtau/dt = 1/lambda`` (the evolution clock of the perturbation),
* ``s``   with ``ds/dt = lambda**(-3*kappa/2 - 1)``.

The rate ``lambda_bar_tau = d_tau(lambda)/lambda`` equals ``dlambda/dt`` and
satisfies ``d_tau(lambda_bar_tau) = delta * lambda**(-3*kappa)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, InsufficientDataError, IntegrationError, RangeQueryError

WEIGHT_KINDS = ("poly2", "poly4")


@dataclass(frozen=True)
class Tolerances:
    """Named tolerance bundle used across the package."""

    mass: float = 1e-8
    solve: float = 1e-10
    parity: float = 1e-9
    decomposition: float = 1e-8
    integrator: float = 1e-9


@dataclass(frozen=True)
class SimParams:
    """Physical and numerical parameters of one simulation."""

    kappa: float
    delta: float
    lambda1: float
    lambda0: float = 1.0
    n_grid: int = 64
    tau_max: float = 10.0
    dt_tau: float | None = None
    n_diag: int = 2
    tolerances: Tolerances = field(default_factory=Tolerances)
    weight_kind: str = "poly2"
    weight_scale: float = 1.0

    def __post_init__(self) -> None:
        problems = []
        if not (0.0 < self.kappa <= 2.0 / 3.0 + 1e-15):
            problems.append(f"kappa must lie in (0, 2/3], got {self.kappa!r}")
        if not (self.delta >= 0.0) or not math.isfinite(self.delta):
            problems.append(f"delta must be >= 0, got {self.delta!r}")
        if not (0.0 < self.lambda1 < 1.0):
            problems.append(f"lambda1 must lie in (0, 1), got {self.lambda1!r}")
        if not (self.lambda0 > 0.0) or not math.isfinite(self.lambda0):
            problems.append(f"lambda0 must be > 0, got {self.lambda0!r}")
        if int(self.n_grid) != self.n_grid or self.n_grid < 8 or self.n_grid % 2:
            problems.append(f"n_grid must be an even integer >= 8, got {self.n_grid!r}")
        if not (self.tau_max > 0.0):
            problems.append(f"tau_max must be > 0, got {self.tau_max!r}")
        if self.dt_tau is not None and not (self.dt_tau > 0.0):
            problems.append(f"dt_tau must be > 0, got {self.dt_tau!r}")
        if int(self.n_diag) != self.n_diag or not (0 <= self.n_diag <= 4):
            problems.append(f"n_diag must be an integer in [0, 4], got {self.n_diag!r}")
        if self.weight_kind not in WEIGHT_KINDS:
            problems.append(f"weight_kind must be one of {WEIGHT_KINDS}, got {self.weight_kind!r}")
        if not (self.weight_scale > 0.0) or not math.isfinite(self.weight_scale):
            problems.append(f"weight_scale must be > 0, got {self.weight_scale!r}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimParams":
        data = dict(data)
        tol = data.pop("tolerances", None)
        if isinstance(tol, dict):
            data["tolerances"] = Tolerances(**tol)
        return cls(**data)


def lambda_rhs_tau(y: np.ndarray, kappa: float, delta: float) -> np.ndarray:
    """Background system in tau for the state (log lambda, lambda_bar_tau, t, s)."""
    ell, lbt = y[0], y[1]
    return np.array(
        [
            lbt,
            delta * math.exp(-3.0 * kappa * ell),
            math.exp(ell),
            math.exp(-1.5 * kappa * ell),
        ]
    )


def _rk4_fixed(y0: np.ndarray, h: float, t_max: float, kappa: float, delta: float, n_cap: int) -> np.ndarray:
    rows = [y0]
    y = y0.copy()
    k = 0
    while y[2] < t_max:
        k1 = lambda_rhs_tau(y, kappa, delta)
        k2 = lambda_rhs_tau(y + 0.5 * h * k1, kappa, delta)
        k3 = lambda_rhs_tau(y + 0.5 * h * k2, kappa, delta)
        k4 = lambda_rhs_tau(y + h * k3, kappa, delta)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        k += 1
        if not np.all(np.isfinite(y)) or k > n_cap:
            raise IntegrationError("background integration did not reach t_max", float(rows[-1][2]))
        rows.append(y)
    return np.array(rows)


@dataclass(frozen=True)
class LambdaPath:
    """Samples of the background expansion on a uniform tau grid.

    ``t`` is strictly increasing but not uniformly spaced; every sample
    carries the four clocks and rates at the same instant.
    """

    kappa: float
    delta: float
    t: np.ndarray
    lam: np.ndarray
    dlam_dt: np.ndarray
    tau: np.ndarray
    s: np.ndarray
    verification_error: float

    @property
    def lambda_bar_tau(self) -> np.ndarray:
        return self.dlam_dt

    @property
    def bar_lambda_est(self) -> float:
        return asymptotic_rate(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "lambda", "dlambda_dt", "tau", "s", "lambda_bar_tau"])
        for row in zip(self.t, self.lam, self.dlam_dt, self.tau, self.s, self.dlam_dt):
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def solve_lambda(params: SimParams, t_max: float, dtau: float) -> LambdaPath:
    """Integrate the background ODE until ``t >= t_max`` with fixed-step RK4.

    The independent variable is tau with uniform step ``dtau``, and log(lambda)
    is integrated instead of lambda: in these variables the solution is close
    to linear, so a fixed step gives uniform relative accuracy from t=0 to
    t ~ 1e4. A second pass with half the step verifies the first; the
    Richardson-scaled discrepancy is stored in ``verification_error``.
    """
    if not (dtau > 0.0) or not (t_max > 0.0):
        raise ConfigError("dtau and t_max must be positive")
    y0 = np.array([math.log(params.lambda0), params.lambda1, 0.0, 0.0])
    n_cap = 50_000_000
    fine = _rk4_fixed(y0, 0.5 * dtau, t_max, params.kappa, params.delta, n_cap)
    coarse = _rk4_fixed(y0, dtau, t_max, params.kappa, params.delta, n_cap)
    m = min(coarse.shape[0], (fine.shape[0] + 1) // 2)
    fine_on_coarse = fine[::2][:m]
    diff = np.abs(coarse[:m] - fine_on_coarse) / np.maximum(1.0, np.abs(fine_on_coarse))
    verr = float(np.max(diff)) * 16.0 / 15.0
    if verr > params.tolerances.integrator:
        bad = np.nonzero(np.max(diff, axis=1) * 16.0 / 15.0 > params.tolerances.integrator)[0]
        t_last = float(fine_on_coarse[bad[0] - 1, 2]) if bad.size and bad[0] > 0 else 0.0
        raise IntegrationError(
            f"step-halving verification error {verr:.3e} exceeds tolerance "
            f"{params.tolerances.integrator:.1e}; reduce dtau",
            t_last,
        )
    lam = np.exp(fine[:, 0])
    return LambdaPath(
        kappa=params.kappa,
        delta=params.delta,
        t=fine[:, 2].copy(),
        lam=lam,
        dlam_dt=fine[:, 1].copy(),
        tau=0.5 * dtau * np.arange(fine.shape[0]),
        s=fine[:, 3].copy(),
        verification_error=verr,
    )


def _interp_monotone(x: np.ndarray, y: np.ndarray, q: float, name: str) -> float:
    if not (x[0] <= q <= x[-1]):
        raise RangeQueryError(f"{name}={q!r} outside sampled range [{x[0]!r}, {x[-1]!r}]")
    k = int(np.searchsorted(x, q))
    if k < x.size and x[k] == q:
        return float(y[k])
    # cubic Lagrange interpolation on the four surrounding samples
    lo = min(max(k - 2, 0), x.size - 4)
    xs, ys = x[lo : lo + 4], y[lo : lo + 4]
    total = 0.0
    for j in range(4):
        basis = 1.0
        for m in range(4):
            if m != j:
                basis *= (q - xs[m]) / (xs[j] - xs[m])
        total += ys[j] * basis
    return float(total)


def tau_of_t(path: LambdaPath, t: float) -> float:
    return _interp_monotone(path.t, path.tau, t, "t")


def t_of_tau(path: LambdaPath, tau: float) -> float:
    return _interp_monotone(path.tau, path.t, tau, "tau")


def asymptotic_rate(path: LambdaPath, fit_window: tuple[float, float] | None = None) -> float:
    """Least-squares slope of lambda(t) over ``fit_window`` (default: last 20% in t)."""
    if fit_window is None:
        fit_window = (path.t[0] + 0.8 * (path.t[-1] - path.t[0]), path.t[-1])
    lo, hi = fit_window
    if lo < path.t[0] or hi > path.t[-1] or lo >= hi:
        raise RangeQueryError(f"fit window {fit_window!r} outside sampled range")
    mask = (path.t >= lo) & (path.t <= hi)
    if int(mask.sum()) < 10:
        raise InsufficientDataError(f"fit window holds {int(mask.sum())} samples, need at least 10")
    slope, _ = np.polyfit(path.t[mask], path.lam[mask], 1)
    return float(slope)


def limit_rate(params: SimParams) -> float:
    """Exact asymptotic slope of lambda(t).

    The background ODE conserves (1/2) lambda_t**2 + delta lambda**(-3 kappa) / (3 kappa);
    letting lambda -> infinity gives lambda_bar**2 = lambda1**2 + (2 delta / (3 kappa)) lambda0**(-3 kappa).
    """
    k = params.kappa
    return math.sqrt(params.lambda1**2 + 2.0 * params.delta / (3.0 * k) * params.lambda0 ** (-3.0 * k))


def lambda_identity_residual(path: LambdaPath) -> tuple[float, float]:
    """Check d_tau(lambda_bar_tau) = delta*lambda**(-3 kappa) along the samples.

    The tau-derivative of the sampled rate is taken with a fourth-order
    central difference on the uniform tau grid. Returns
    ``(residual, local_tolerance)``; the tolerance is the Richardson
    estimate of the stencil truncation (spacing h versus 2h) plus the
    verification error propagated through the stencil.
    """
    h = path.tau[1] - path.tau[0]
    y = path.dlam_dt
    if y.size < 9:
        raise InsufficientDataError("need at least 9 samples for the identity check")

    def d4(step: int) -> np.ndarray:
        return (
            -y[4 * step :] + 8.0 * y[3 * step : -step] - 8.0 * y[step : -3 * step] + y[: -4 * step]
        ) / (12.0 * step * h)

    fine = d4(1)[2:-2]
    coarse = d4(2)
    interior = slice(4, -4)
    exact = path.delta * path.lam[interior] ** (-3.0 * path.kappa)
    resid = np.abs(fine - exact)
    truncation = np.abs(coarse - fine) / 15.0
    local_tol = float(np.max(truncation) + 1.5 * path.verification_error / h + 1e-15)
    return float(np.max(resid)), local_tol
