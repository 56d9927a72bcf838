"""Canned identity and property checks behind ``vacuum-star validate``.

Each check returns its worst normalized residual over a batch of inputs and
is compared with a fixed tolerance. Randomized checks draw from
``numpy.random.default_rng(seed)`` so a given seed reproduces the table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diagnostics import (
    bootstrap_monitor,
    energy,
    jacobian_expansion_residual,
    product_rule_residuals,
    random_even_field,
    random_odd_field,
    state_identities,
)
from .dynamics import Model
from .gauge import mass_function, reference_data, reference_mass_function, solve_eta0
from .grid import RadialGrid, make_weight
from .quantities import LagrangianState, Setting, compute_cache, make_snapshot
from .scaling import SimParams, lambda_identity_residual, solve_lambda


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value < self.tolerance)


@dataclass(frozen=True)
class ValidationContext:
    seed: int = 0
    n: int = 64
    count: int = 100
    amplitude: float = 0.1
    kappa: float = 0.5
    delta: float = 1e-3
    flip_r2: bool = False


def _random_states(ctx: ValidationContext):
    """Yield (model, state) pairs built from random odd fields of amplitude <= ctx.amplitude."""
    rng = np.random.default_rng(ctx.seed)
    grid = RadialGrid(ctx.n)
    setting = Setting(grid, make_weight("poly2", ctx.delta), ctx.kappa)
    for _ in range(ctx.count):
        Theta = random_odd_field(rng, grid, ctx.amplitude)
        dTheta = random_odd_field(rng, grid, 0.5 * ctx.amplitude)
        lam = rng.uniform(1.0, 3.0)
        lbt = rng.uniform(0.3, 0.6)
        snap = make_snapshot(setting, Theta, dTheta, 1.0, lbt)
        model = Model(setting, snap, flip_r2=ctx.flip_r2)
        yield model, LagrangianState(0.0, Theta, dTheta, lam, lbt)


def _state_suite(ctx: ValidationContext) -> dict:
    worst: dict = {}
    for model, state in _random_states(ctx):
        for key, val in state_identities(model, state).items():
            worst[key] = max(worst.get(key, 0.0), val)
    return worst


_STATE_CACHE: dict = {}


def _state_value(ctx: ValidationContext, key: str) -> float:
    if ctx not in _STATE_CACHE:
        _STATE_CACHE.clear()
        _STATE_CACHE[ctx] = _state_suite(ctx)
    return _STATE_CACHE[ctx][key]


def _product_rules(ctx: ValidationContext, key: str) -> float:
    rng = np.random.default_rng(ctx.seed + 1)
    grid = RadialGrid(ctx.n)
    worst = 0.0
    for _ in range(ctx.count):
        f = random_even_field(rng, grid)
        g = random_odd_field(rng, grid, 1.0, slope_cap=math.inf)
        worst = max(worst, product_rule_residuals(grid, f, g)[key])
    return worst


def _jacobian(ctx: ValidationContext) -> float:
    rng = np.random.default_rng(ctx.seed + 2)
    grid = RadialGrid(ctx.n)
    return max(jacobian_expansion_residual(grid, random_odd_field(rng, grid, ctx.amplitude)) for _ in range(ctx.count))


def _lambda_closed_form(ctx: ValidationContext) -> float:
    p = SimParams(kappa=ctx.kappa, delta=0.0, lambda1=0.5)
    path = solve_lambda(p, 100.0, 1e-2)
    return float(np.max(np.abs(path.lam - (1.0 + 0.5 * path.t)) / (1.0 + 0.5 * path.t)))


def _lambda_identity(ctx: ValidationContext) -> float:
    p = SimParams(kappa=ctx.kappa, delta=1e-2, lambda1=0.5)
    resid, tol = lambda_identity_residual(solve_lambda(p, 100.0, 1e-2))
    return resid / (10.0 * tol)


def _gauge_reference(ctx: ValidationContext) -> float:
    grid = RadialGrid(ctx.n)
    w = make_weight("poly2", ctx.delta)
    data = reference_data(w, ctx.kappa, 1.0, 0.5)
    m_ref, _ = reference_mass_function(w, ctx.kappa)
    gauge = solve_eta0(grid, mass_function(data.rho0), m_ref, ctx.kappa)
    return float(np.max(np.abs(gauge.eta0 - grid.zeta)))


def _zero_state(ctx: ValidationContext) -> float:
    """Energies and identity residuals of the zero state, plus a negated FG margin check."""
    grid = RadialGrid(ctx.n)
    setting = Setting(grid, make_weight("poly2", ctx.delta), ctx.kappa)
    zero = np.zeros_like(grid.zeta)
    snap = make_snapshot(setting, zero, zero, 1.0, 0.5)
    state = LagrangianState(0.0, zero, zero, 1.0, 0.5)
    cache = compute_cache(setting, snap, state)
    worst = max(abs(x) for i in range(3) for x in energy(setting, state, cache, i))
    flags = bootstrap_monitor(setting, state, cache, 0.5)
    if not all(f.ok for f in flags.values()):
        worst = math.inf
    bad = LagrangianState(0.0, 0.2 * grid.zeta, zero, 1.0, 0.5)
    bad_cache = compute_cache(setting, make_snapshot(setting, bad.Theta, zero, 1.0, 0.5), bad)
    if bootstrap_monitor(setting, bad, bad_cache, 0.5)["FG"].ok:
        worst = math.inf
    return worst


CHECKS: dict[str, tuple[Callable[[ValidationContext], float], float]] = {
    "lambda_closed_form": (_lambda_closed_form, 1e-10),
    "lambda_rate_identity": (_lambda_identity, 1.0),
    "gauge_reference_identity": (_gauge_reference, 1e-10),
    "zero_state": (_zero_state, 1e-300),
    "jacobian_expansion": (_jacobian, 1e-9),
    "pressure_decomposition": (lambda c: _state_value(c, "pressure_decomposition"), 1e-9),
    "remainder_expansion": (lambda c: _state_value(c, "remainder_expansion"), 1e-9),
    "cancellation_split": (lambda c: _state_value(c, "cancellation_split"), 1e-9),
    "cancellation_boundary_coefficient": (lambda c: _state_value(c, "cancellation_boundary_coefficient"), 1e-9),
    "density_identity": (lambda c: _state_value(c, "density_identity"), 1e-12),
    "corrector_evolution": (lambda c: _state_value(c, "corrector_evolution"), 1e-10),
    "product_rule_dz": (lambda c: _product_rules(c, "product_rule_dz"), 1e-10),
    "product_rule_Dz": (lambda c: _product_rules(c, "product_rule_Dz"), 1e-10),
}


def run_checks(ctx: ValidationContext, names: list[str] | None = None) -> list[CheckResult]:
    """Run the named checks (all when ``names`` is empty); unknown names raise KeyError."""
    selected = list(CHECKS) if not names else names
    for name in selected:
        if name not in CHECKS:
            raise KeyError(name)
    out = []
    for name in selected:
        func, tol = CHECKS[name]
        out.append(CheckResult(name, float(func(ctx)), tol))
    return out


def format_table(results: list[CheckResult]) -> str:
    width = max([len(r.name) for r in results] + [5])
    lines = [f"{'check':<{width}}  {'residual':>12}  {'tolerance':>10}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.value:12.3e}  {r.tolerance:10.1e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
