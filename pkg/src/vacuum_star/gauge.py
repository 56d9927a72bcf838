"""Eulerian initial data to Lagrangian initial data.

The Lagrangian label zeta is fixed by matching cumulative masses: with

    m(r)     = int_0^r rho_tilde0(z) z**2 dz
    m_ref(z) = int_0^z (delta w(y))**(1/kappa) y**2 dy

the initial flow map is eta0 = m^{-1} o m_ref. Both maps are inverted per
node by bisection followed by Newton polishing in the variables in which the
inverse is smooth up to the endpoints: m**(1/3) near the origin and
(M - m)**(kappa/(1+kappa)) near the vacuum boundary.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Chebyshev
from numpy.polynomial.legendre import leggauss

from .errors import CausalityError, GaugeIncompatibilityError, InputDomainError
from .grid import ODD, RadialField, RadialGrid, Weight
from .quantities import jacobian_F
from .scaling import LambdaPath

MASS_TOLERANCE = 1e-8

# Gauss-Legendre panels on [0, x], graded towards x where densities vanish
_PANEL_EDGES = np.array([0.0, 0.5, 0.8, 0.95, 1.0])
_GL_X, _GL_W = leggauss(48)


def _panel_rule() -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = [], []
    for a, b in zip(_PANEL_EDGES[:-1], _PANEL_EDGES[1:]):
        nodes.append(0.5 * (b - a) * _GL_X + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * _GL_W)
    return np.concatenate(nodes), np.concatenate(weights)


_UNIT_NODES, _UNIT_WEIGHTS = _panel_rule()


@dataclass(frozen=True)
class MassFunction:
    """Cumulative mass m(x) = int_0^x rho(z) z**2 dz of a radial density."""

    density: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.outer(x, _UNIT_NODES)
        vals = np.asarray(self.density(z), dtype=float) * z * z
        return (vals @ _UNIT_WEIGHTS) * x

    def tail(self, x) -> np.ndarray:
        """int_x^1 rho(z) z**2 dz, computed directly to avoid cancellation near x = 1."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        length = 1.0 - x
        z = 1.0 - np.outer(length, _UNIT_NODES)
        vals = np.asarray(self.density(z), dtype=float) * z * z
        return (vals @ _UNIT_WEIGHTS) * length

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.density(x), dtype=float) * x * x

    @property
    def total(self) -> float:
        return float(self(1.0)[0])


def mass_function(rho0: Callable[[np.ndarray], np.ndarray], n_check: int = 401) -> MassFunction:
    """Cumulative mass of ``rho0``; rejects densities that are negative anywhere on [0, 1]."""
    z = np.linspace(0.0, 1.0, n_check)
    vals = np.asarray(rho0(z), dtype=float)
    if np.any(~np.isfinite(vals)):
        raise InputDomainError("density is not finite on [0, 1]")
    if np.any(vals < 0.0):
        k = int(np.nonzero(vals < 0.0)[0][0])
        raise InputDomainError(f"negative density {vals[k]:.3e} at zeta={z[k]:.6g}")
    return MassFunction(rho0)


def reference_density(w: Weight, kappa: float, delta: float | None = None) -> Callable[[np.ndarray], np.ndarray]:
    d = w.delta_scale if delta is None else float(delta)

    def rho(z):
        z = np.asarray(z, dtype=float)
        if d == 0.0:
            return np.zeros_like(z)
        return d ** (1.0 / kappa) * w.power(z.ravel(), 1.0 / kappa).reshape(z.shape)

    return rho


def reference_mass_function(w: Weight, kappa: float, delta: float | None = None) -> tuple[MassFunction, float]:
    """Return (m_ref, M_ref) with M_ref = 4 pi m_ref(1)."""
    m_ref = MassFunction(reference_density(w, kappa, delta))
    return m_ref, 4.0 * math.pi * m_ref.total


def _invert(
    m: MassFunction,
    targets: np.ndarray,
    target_tails: np.ndarray,
    kappa: float,
    n_bisect: int = 60,
    n_newton: int = 3,
) -> np.ndarray:
    """Solve m(x) = target per entry on (0, 1).

    ``target_tails`` holds m(1) - target computed without subtraction; it
    drives the Newton update in the boundary chart.
    """
    total = m.total
    inner = targets <= 0.5 * total
    lo = np.zeros_like(targets)
    hi = np.ones_like(targets)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        # near x = 1 the comparison is made on the tail mass, where it is well conditioned
        below = np.where(inner, m(mid) < targets, m.tail(mid) > target_tails)
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo < 1e-15):
            break
    x = 0.5 * (lo + hi)
    p = kappa / (1.0 + kappa)
    for _ in range(n_newton):
        mx = m(x)
        dm = m.derivative(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            # origin chart: m**(1/3)
            phi = np.cbrt(mx) - np.cbrt(targets)
            dphi = dm / (3.0 * np.cbrt(mx) ** 2)
            # boundary chart: (M - m)**p
            rem = m.tail(x)
            psi = rem**p - target_tails**p
            dpsi = -p * rem ** (p - 1.0) * dm
            dx = np.where(inner, phi / dphi, psi / dpsi)
        x_new = x - dx
        ok = np.isfinite(x_new) & (x_new >= lo) & (x_new <= hi)
        x = np.where(ok, x_new, x)
    return x


@dataclass(frozen=True)
class GaugeMap:
    """Initial flow map eta0 on the grid with its inverse and the two total masses."""

    grid: RadialGrid
    eta0: np.ndarray
    inverse: np.ndarray
    mass_total: float
    mass_ref: float
    mass_residual: float

    def as_field(self) -> RadialField:
        return RadialField(self.grid, self.eta0.copy(), ODD, "eta0")


def solve_eta0(
    grid: RadialGrid,
    m: MassFunction,
    m_ref: MassFunction,
    kappa: float,
    mass_tolerance: float = MASS_TOLERANCE,
) -> GaugeMap:
    """Construct eta0 = m^{-1} o m_ref on the grid nodes.

    The total masses must agree to ``mass_tolerance`` (relative). Within that
    tolerance m_ref is rescaled to the data mass so that eta0(1) = 1 holds
    exactly.
    """
    M = 4.0 * math.pi * m.total
    M_ref = 4.0 * math.pi * m_ref.total
    if M_ref == 0.0:
        if M != 0.0:
            raise GaugeIncompatibilityError(M, M_ref)
        z = grid.zeta.copy()
        return GaugeMap(grid, z, z.copy(), M, M_ref, 0.0)
    if abs(M - M_ref) > mass_tolerance * M_ref:
        raise GaugeIncompatibilityError(M, M_ref)
    ratio = M / M_ref
    z = grid.zeta
    interior = slice(1, -1)

    eta = np.empty_like(z)
    eta[0], eta[-1] = 0.0, 1.0
    zi = z[interior]
    eta[interior] = _invert(m, ratio * m_ref(zi), ratio * m_ref.tail(zi), kappa)

    m_ref_scaled = MassFunction(lambda x: ratio * np.asarray(m_ref.density(x), dtype=float))
    inv = np.empty_like(z)
    inv[0], inv[-1] = 0.0, 1.0
    inv[interior] = _invert(m_ref_scaled, m(zi), m.tail(zi), kappa)

    if np.any(np.diff(eta) <= 0.0):
        raise InputDomainError("computed eta0 is not strictly increasing")
    resid = float(np.max(np.abs(m(eta) - ratio * m_ref(z)))) * 4.0 * math.pi / M_ref
    return GaugeMap(grid, eta, inv, M, M_ref, resid)


@dataclass(frozen=True)
class EulerianData:
    """Rescaled density and radial velocity at s = 0 as closures on [0, 1]."""

    rho0: Callable[[np.ndarray], np.ndarray]
    v0: Callable[[np.ndarray], np.ndarray]

    def sample(self, grid: RadialGrid) -> tuple[RadialField, RadialField]:
        from .grid import EVEN

        return (
            RadialField(grid, np.asarray(self.rho0(grid.zeta), dtype=float), EVEN, "rho_tilde0"),
            RadialField(grid, np.asarray(self.v0(grid.zeta), dtype=float), ODD, "v_tilde0"),
        )

    def to_csv(self, grid: RadialGrid) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["zeta", "rho_tilde0", "v_tilde0"])
        rho = np.asarray(self.rho0(grid.zeta), dtype=float)
        v = np.asarray(self.v0(grid.zeta), dtype=float)
        for row in zip(grid.zeta, rho, v):
            writer.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, max_degree: int = 64) -> "EulerianData":
        """Read (zeta, rho_tilde0, v_tilde0) samples and fit Chebyshev series on [0, 1].

        Sample sets with at most ``max_degree + 1`` points are interpolated;
        larger sets are fitted by least squares at degree ``max_degree``.
        """
        reader = csv.DictReader(io.StringIO(text))
        needed = {"zeta", "rho_tilde0", "v_tilde0"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise InputDomainError(f"initial data CSV needs columns {sorted(needed)}")
        rows = [(float(r["zeta"]), float(r["rho_tilde0"]), float(r["v_tilde0"])) for r in reader]
        if len(rows) < 4:
            raise InputDomainError("initial data CSV needs at least 4 rows")
        arr = np.array(sorted(rows))
        z = arr[:, 0]
        if z[0] < 0.0 or z[-1] > 1.0 or np.any(np.diff(z) <= 0.0):
            raise InputDomainError("zeta samples must be distinct and lie in [0, 1]")
        deg = min(len(z) - 1, max_degree)
        rho_fit = Chebyshev.fit(z, arr[:, 1], deg, domain=[0.0, 1.0])
        v_fit = Chebyshev.fit(z, arr[:, 2], deg, domain=[0.0, 1.0])
        return cls(rho0=lambda x: np.maximum(rho_fit(x), 0.0), v0=v_fit)


def from_unrescaled(
    rho_ring: Callable[[np.ndarray], np.ndarray],
    v_ring: Callable[[np.ndarray], np.ndarray],
    lambda0: float,
    kappa: float,
) -> EulerianData:
    """Apply the mass-critical rescaling at t = 0 to physical density and radial velocity."""
    return EulerianData(
        rho0=lambda z: lambda0**3 * np.asarray(rho_ring(lambda0 * np.asarray(z)), dtype=float),
        v0=lambda z: lambda0 ** (1.5 * kappa) * np.asarray(v_ring(lambda0 * np.asarray(z)), dtype=float),
    )


def lorentz_u0(v) -> np.ndarray:
    """u0 = sqrt(1 + v**2) for the radial velocity component v."""
    v = np.asarray(v, dtype=float)
    return np.sqrt(1.0 + v * v)


def reference_data(w: Weight, kappa: float, lambda0: float, lambda1: float) -> EulerianData:
    """Uniformly expanding reference profile, returned in rescaled variables."""
    rho_ring = lambda r: lambda0**-3 * reference_density(w, kappa)(np.asarray(r) / lambda0)
    v_ring = lambda r: (lambda1 / lambda0) * np.asarray(r) / np.sqrt(1.0 - (lambda1 / lambda0) ** 2 * np.asarray(r) ** 2)
    return from_unrescaled(rho_ring, v_ring, lambda0, kappa)


def modified_velocity(data: EulerianData, z: np.ndarray, lambda0: float, lambda1: float, kappa: float) -> np.ndarray:
    """V = v_tilde / u0 - (lambda'/lambda) z at s = 0, with lambda'/lambda = lambda0**(3k/2) lambda1."""
    vt = np.asarray(data.v0(z), dtype=float)
    u0 = np.sqrt(1.0 + lambda0 ** (-3.0 * kappa) * vt * vt)
    return vt / u0 - lambda0 ** (1.5 * kappa) * lambda1 * np.asarray(z)


def build_initial_state(
    data: EulerianData, path: LambdaPath, gauge: GaugeMap, kappa: float
) -> tuple[RadialField, RadialField]:
    """Return (Theta0, U0) with Theta0 = eta0 - zeta and U0 = d_tau Theta at tau = 0.

    U0 is the modified velocity composed with eta0, converted from the s clock
    to the tau clock by the factor lambda0**(-3 kappa / 2).
    """
    grid = gauge.grid
    lambda0 = float(path.lam[0])
    lambda1 = float(path.dlam_dt[0])
    eta = gauge.eta0
    V = modified_velocity(data, eta, lambda0, lambda1, kappa)
    speed = np.abs(V + lambda0 ** (1.5 * kappa) * lambda1 * eta) * lambda0 ** (-1.5 * kappa)
    bad = np.nonzero(~(speed < 1.0))[0]
    if bad.size:
        raise CausalityError(f"composed initial speed {speed[bad[0]]:.6g} is not subluminal", int(bad[0]))
    Theta0 = eta - grid.zeta
    U0 = lambda0 ** (-1.5 * kappa) * V
    Theta0[0] = 0.0
    U0[0] = 0.0
    return RadialField(grid, Theta0, ODD, "Theta0"), RadialField(grid, U0, ODD, "U0")


def gauge_residual(grid: RadialGrid, gauge: GaugeMap, data: EulerianData, w: Weight, kappa: float) -> float:
    """sup |F0 * (rho_tilde0 o eta0) - (delta w)**(1/kappa)| on the grid, F0 the spectral Jacobian of eta0."""
    F0, _, _ = jacobian_F(grid, gauge.eta0 - grid.zeta)
    rho_eta = np.asarray(data.rho0(gauge.eta0), dtype=float)
    return float(np.max(np.abs(F0 * rho_eta - reference_density(w, kappa)(grid.zeta))))
