"""Collocation grid on [0, 1], admissible weights and parity-aware operators.

Fields live on Chebyshev-Gauss-Lobatto nodes mapped to [0, 1]. Both
endpoints are nodes: the origin (where spherical symmetry forces a parity
condition) and the vacuum boundary (where the weight degenerates and no
boundary condition is imposed).

The radial operators used throughout are

    D_z f = f' + 2 f / z                 (divergence of a radial vector field)
    calD_j = (d_z D_z)^(j/2)             for even j
           = D_z (d_z D_z)^((j-1)/2)     for odd j

For an odd field the quotient f/z is regular and its origin value is f'(0),
which gives D_z f(0) = 3 f'(0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import chebyshev as cheb

from .errors import DegenerateProbeError, OriginSingularityError, ResolutionError

ODD = "odd"
EVEN = "even"


def chebyshev_matrix(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes x_j = cos(pi j / n) and the collocation derivative matrix on [-1, 1].

    Off-diagonal entries use the trigonometric form and the diagonal is the
    negative row sum, which keeps round-off in high-order chains small.
    """
    j = np.arange(n + 1)
    x = np.cos(np.pi * j / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** j
    theta = np.pi * j / n
    ti, tj = np.meshgrid(theta, theta, indexing="ij")
    dx = -2.0 * np.sin(0.5 * (ti + tj)) * np.sin(0.5 * (ti - tj))  # x_i - x_j without cancellation
    np.fill_diagonal(dx, 1.0)
    d = np.outer(c, 1.0 / c) / dx
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return x, d


def clenshaw_curtis(n: int) -> np.ndarray:
    """Clenshaw-Curtis weights for the nodes cos(pi j / n) on [-1, 1]."""
    theta = np.pi * np.arange(n + 1) / n
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    inner = theta[1:-1]
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n * n - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
        v -= np.cos(n * inner) / (n * n - 1)
    else:
        w[0] = w[n] = 1.0 / (n * n)
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
    w[1:-1] = 2.0 * v / n
    return w


class RadialGrid:
    """Nodes, differentiation matrix and quadrature weights on [0, 1]."""

    def __init__(self, n: int):
        if n < 8 or n % 2:
            raise ValueError(f"grid size must be an even integer >= 8, got {n}")
        self.n = n
        x, d = chebyshev_matrix(n)
        # reverse so that zeta increases from 0 to 1
        self.zeta = (0.5 * (1.0 - x))
        self.zeta[0] = 0.0
        self.zeta[-1] = 1.0
        self.D = -2.0 * d
        self.quad = 0.5 * clenshaw_curtis(n)
        self.i_max = self.chain_limit(n)
        self._inv_zeta = np.zeros(n + 1)
        self._inv_zeta[1:] = 1.0 / self.zeta[1:]

    @staticmethod
    def chain_limit(n: int) -> int:
        """Highest calD order kept within spectral accuracy on n+1 nodes."""
        return n // 8

    def __repr__(self) -> str:
        return f"RadialGrid(n={self.n})"

    @cached_property
    def min_spacing(self) -> float:
        return float(np.min(np.diff(self.zeta)))

    @cached_property
    def cheb_vandermonde_inv(self) -> np.ndarray:
        return np.linalg.inv(cheb.chebvander(2.0 * self.zeta - 1.0, self.n))

    def dz(self, f: np.ndarray) -> np.ndarray:
        return self.D @ f

    def over_zeta(self, f: np.ndarray, df: np.ndarray | None = None) -> np.ndarray:
        """f / zeta for a field vanishing at the origin; origin value f'(0)."""
        out = f * self._inv_zeta
        out[0] = (self.D[0] @ f) if df is None else df[0]
        return out

    def Dz(self, f: np.ndarray, df: np.ndarray | None = None) -> np.ndarray:
        """D_z f = f' + 2 f / zeta, assuming f(0) = 0."""
        if df is None:
            df = self.D @ f
        out = df + 2.0 * f * self._inv_zeta
        out[0] = 3.0 * df[0]
        return out

    def calD(self, f: np.ndarray, i: int) -> np.ndarray:
        """calD_i applied to an odd field; odd outputs are pinned to zero at the origin."""
        if i < 0:
            raise ValueError("derivative order must be >= 0")
        if i > self.i_max:
            raise ResolutionError(f"calD_{i} exceeds the resolution limit i_max={self.i_max} at n={self.n}")
        out = f
        for k in range(i):
            if k % 2 == 0:
                out = self.Dz(out)
            else:
                out = self.D @ out
                out[0] = 0.0
        return out

    def integrate(self, f: np.ndarray) -> float:
        return float(self.quad @ f)

    def filter_matrix(self, fraction: float = 0.1, strength: float = 36.0, order: int = 8) -> np.ndarray:
        """Exponential modal filter acting on the top ``fraction`` of Chebyshev modes."""
        k = np.arange(self.n + 1)
        kc = int(round((1.0 - fraction) * self.n))
        sigma = np.ones(self.n + 1)
        hi = k > kc
        sigma[hi] = np.exp(-strength * ((k[hi] - kc) / (self.n - kc)) ** order)
        vander = cheb.chebvander(2.0 * self.zeta - 1.0, self.n)
        return vander @ (sigma[:, None] * self.cheb_vandermonde_inv)


@dataclass(frozen=True)
class RadialField:
    """Grid values tagged with a parity, which controls the origin treatment."""

    grid: RadialGrid
    values: np.ndarray
    parity: str
    label: str = ""

    def __post_init__(self) -> None:
        if self.parity not in (ODD, EVEN):
            raise ValueError(f"parity must be 'odd' or 'even', got {self.parity!r}")

    def __add__(self, other: "RadialField") -> "RadialField":
        return RadialField(self.grid, self.values + other.values, self.parity, self.label)

    def scaled(self, a: float) -> "RadialField":
        return RadialField(self.grid, a * self.values, self.parity, self.label)

    def to_csv(self) -> str:
        lines = ["zeta,value"]
        lines += [f"{z!r},{v!r}" for z, v in zip(self.grid.zeta.tolist(), self.values.tolist())]
        return "\n".join(lines) + "\n"


def field_from(grid: RadialGrid, func, parity: str, label: str = "") -> RadialField:
    values = np.asarray(func(grid.zeta), dtype=float) * np.ones_like(grid.zeta)
    return RadialField(grid, values, parity, label)


def _origin_tol(values: np.ndarray, rel: float = 1e-9) -> float:
    return rel * max(1.0, float(np.max(np.abs(values))))


def apply_Dz(f: RadialField) -> RadialField:
    """D_z with the parity limit at the origin; the output parity flips."""
    if abs(f.values[0]) > _origin_tol(f.values):
        raise OriginSingularityError(
            f"D_z of a field with f(0)={f.values[0]:.3e} != 0 is singular at the origin"
        )
    out = f.grid.Dz(f.values)
    return RadialField(f.grid, out, EVEN if f.parity == ODD else ODD, f"D_z({f.label})")


def apply_dz(f: RadialField) -> RadialField:
    out = f.grid.D @ f.values
    parity = EVEN if f.parity == ODD else ODD
    if parity == ODD:
        out = out.copy()
        out[0] = 0.0
    return RadialField(f.grid, out, parity, f"d_z({f.label})")


def apply_Di(f: RadialField, i: int) -> RadialField:
    """calD_i as an alternating chain of D_z and d_z."""
    if i > f.grid.i_max:
        raise ResolutionError(f"calD_{i} exceeds the resolution limit i_max={f.grid.i_max} at n={f.grid.n}")
    if i < 0:
        raise ValueError("derivative order must be >= 0")
    out = f
    for k in range(i):
        out = apply_Dz(out) if k % 2 == 0 else apply_dz(out)
    return RadialField(f.grid, out.values, out.parity, f"calD_{i}({f.label})")


class Weight:
    """Admissible weight w on [0, 1] with its scaled family w_delta = delta * w."""

    KINDS = {
        "poly2": Polynomial([1.0, 0.0, -1.0]),
        "poly4": Polynomial([1.0, 0.0, -1.0]) * Polynomial([1.0, 0.0, 0.5]),
    }

    def __init__(self, kind: str, delta: float, scale: float = 1.0):
        if kind not in self.KINDS:
            raise ValueError(f"unknown weight kind {kind!r}; choose from {sorted(self.KINDS)}")
        if delta < 0:
            raise ValueError("delta must be >= 0")
        if not scale > 0:
            raise ValueError("weight scale must be > 0")
        self.kind = kind
        self.delta_scale = float(delta)
        self.scale = float(scale)
        self.poly = self.scale * self.KINDS[kind]

    def __repr__(self) -> str:
        return f"Weight({self.kind!r}, delta={self.delta_scale!r}, scale={self.scale!r})"

    def __call__(self, z) -> np.ndarray:
        return self.poly(np.asarray(z, dtype=float))

    def d(self, z, order: int = 1) -> np.ndarray:
        if order == 0:
            return self(z)
        return self.poly.deriv(order)(np.asarray(z, dtype=float))

    def scaled(self, z) -> np.ndarray:
        return self.delta_scale * self(z)

    def power(self, z, p: float) -> np.ndarray:
        """w**p evaluated pointwise through exp/log, with w(1) = 0 giving 0 for p > 0."""
        wz = np.asarray(self(z), dtype=float)
        out = np.zeros_like(wz)
        pos = wz > 0
        out[pos] = np.exp(p * np.log(wz[pos]))
        return out

    def scaled_power(self, z, p: float) -> np.ndarray:
        if self.delta_scale == 0.0:
            return np.zeros_like(np.asarray(z, dtype=float))
        return self.delta_scale**p * self.power(z, p)

    def admissibility(self, n_check: int = 2001, max_odd_order: int = 7) -> dict[str, bool]:
        """Evaluate the three admissibility conditions on a validation grid."""
        z = np.linspace(0.0, 1.0, n_check)
        interior = bool(np.all(self(z[:-1]) > 0.0)) and abs(float(self(1.0))) < 1e-14
        slope = float(self.d(1.0))
        boundary = math.isfinite(slope) and slope < 0.0
        origin = all(abs(float(self.poly.deriv(k)(0.0))) < 1e-14 for k in range(1, max_odd_order + 1, 2))
        return {"no_interior_vacuum": interior, "physical_vacuum": boundary, "origin_regular": origin}


def make_weight(kind: str, delta: float, scale: float = 1.0) -> Weight:
    return Weight(kind, delta, scale)


def affine_balance_scale(kappa: float) -> float:
    """Scale c for which w = c (1 - z**2) balances the uniformly expanding background.

    With this normalisation the pressure force of the unperturbed profile,
    (1 + 1/kappa) w', cancels the background term z exactly in the classical
    limit, so Theta = 0 is an equilibrium there.
    """
    return kappa / (2.0 * (1.0 + kappa))


def weighted_inner(f: np.ndarray, g: np.ndarray, i: int, w: Weight, kappa: float, grid: RadialGrid) -> float:
    wp = w.power(grid.zeta, 1.0 / kappa + i)
    return float(grid.quad @ (wp * grid.zeta**2 * f * g))


def weighted_norm(f: RadialField, i: int, w: Weight, kappa: float) -> float:
    """(int_0^1 w**(1/kappa + i) zeta**2 f**2 dzeta)**(1/2) by grid quadrature."""
    sq = weighted_inner(f.values, f.values, i, w, kappa, f.grid)
    if sq < 0.0:
        raise AssertionError(f"negative squared norm {sq!r}; quadrature weights are invalid")
    return math.sqrt(sq)


HARDY_VARIANTS = ("linf_energy", "weight_shift")


def hardy_probe(f: RadialField, variant: str, w: Weight, kappa: float, order: int = 3) -> dict:
    """Ratio of the two sides of a weighted embedding for one concrete field.

    ``linf_energy``: sup|f| against sqrt(sum_{j<=order} ||calD_j f||_j^2).
    ``weight_shift``: ||f||_0 against ||f||_2 + ||calD_1 f||_2 (a Hardy-type
    trade of two powers of the weight for one derivative, applied twice).
    Both sides are homogeneous of degree one in f.
    """
    if variant not in HARDY_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {HARDY_VARIANTS}")
    if variant == "linf_energy":
        lhs = float(np.max(np.abs(f.values)))
        rhs_sq = 0.0
        for j in range(order + 1):
            rhs_sq += weighted_norm(apply_Di(f, j), j, w, kappa) ** 2
        rhs = math.sqrt(rhs_sq)
    else:
        lhs = weighted_norm(f, 0, w, kappa)
        rhs = weighted_norm(f, 2, w, kappa) + weighted_norm(apply_Di(f, 1), 2, w, kappa)
    if rhs == 0.0:
        raise DegenerateProbeError("right-hand side of the embedding vanishes")
    return {"variant": variant, "lhs": lhs, "rhs": rhs, "ratio": lhs / rhs}
