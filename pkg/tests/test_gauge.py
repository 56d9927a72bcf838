import math

import numpy as np
import pytest

from vacuum_star.errors import GaugeIncompatibilityError, InputDomainError
from vacuum_star.gauge import (
    EulerianData,
    build_initial_state,
    gauge_residual,
    mass_function,
    reference_data,
    reference_density,
    reference_mass_function,
    solve_eta0,
)
from vacuum_star.grid import RadialGrid, make_weight
from vacuum_star.scaling import SimParams, solve_lambda

KAPPA = 0.5
DELTA = 1e-3


def matched_bump(w, kappa):
    """Reference density times (1 + bump/2), rescaled to the reference mass."""
    ref = reference_density(w, kappa)
    raw = lambda z: ref(z) * (1.0 + 0.5 * np.exp(-20.0 * np.asarray(z) ** 2))
    c = mass_function(ref).total / mass_function(raw).total
    return EulerianData(rho0=lambda z: c * raw(z), v0=lambda z: 0.0 * np.asarray(z))


def test_reference_mass_exact():
    # kappa = 1, w = 1 - z**2, delta = 1: m_ref(1) = int (1 - z**2) z**2 = 2/15
    m_ref, M_ref = reference_mass_function(make_weight("poly2", 1.0), 1.0)
    assert m_ref.total == pytest.approx(2.0 / 15.0, rel=1e-14)
    assert M_ref == pytest.approx(8.0 * math.pi / 15.0, rel=1e-14)


def test_uniform_density_mass():
    m = mass_function(lambda z: 3.0 + 0.0 * z)
    x = np.linspace(0.0, 1.0, 7)
    assert np.max(np.abs(m(x) - x**3)) < 1e-15


def test_negative_density_rejected():
    with pytest.raises(InputDomainError):
        mass_function(lambda z: 0.5 - z)


@pytest.mark.parametrize("kind", ["poly2", "poly4"])
@pytest.mark.parametrize("kappa", [0.5, 0.3, 2.0 / 3.0])
def test_reference_data_gives_identity(kind, kappa):
    grid = RadialGrid(64)
    w = make_weight(kind, DELTA)
    data = reference_data(w, kappa, 1.0, 0.5)
    m_ref, _ = reference_mass_function(w, kappa)
    gauge = solve_eta0(grid, mass_function(data.rho0), m_ref, kappa)
    assert np.max(np.abs(gauge.eta0 - grid.zeta)) < 1e-10
    assert np.max(np.abs(gauge.inverse - grid.zeta)) < 1e-10


def test_reference_data_gives_zero_perturbation():
    p = SimParams(kappa=KAPPA, delta=DELTA, lambda1=0.5, n_grid=32)
    grid = RadialGrid(32)
    w = make_weight("poly2", DELTA)
    data = reference_data(w, KAPPA, 1.0, 0.5)
    m_ref, _ = reference_mass_function(w, KAPPA)
    gauge = solve_eta0(grid, mass_function(data.rho0), m_ref, KAPPA)
    Theta0, U0 = build_initial_state(data, solve_lambda(p, 1e-6, 1e-7), gauge, KAPPA)
    assert np.max(np.abs(Theta0.values)) < 1e-12
    assert np.max(np.abs(U0.values)) < 1e-12


def test_mass_mismatch_is_an_error():
    grid = RadialGrid(16)
    w = make_weight("poly2", DELTA)
    ref = reference_density(w, KAPPA)
    m_ref, _ = reference_mass_function(w, KAPPA)
    with pytest.raises(GaugeIncompatibilityError):
        solve_eta0(grid, mass_function(lambda z: 1.01 * ref(z)), m_ref, KAPPA)


def test_matched_data_residual_decays_spectrally():
    w = make_weight("poly2", DELTA)
    data = matched_bump(w, KAPPA)
    m_ref, _ = reference_mass_function(w, KAPPA)
    res = []
    for n in (8, 16, 32, 48):
        grid = RadialGrid(n)
        gauge = solve_eta0(grid, mass_function(data.rho0), m_ref, KAPPA)
        assert np.all(np.diff(gauge.eta0) > 0)
        res.append(gauge_residual(grid, gauge, data, w, KAPPA) / DELTA**2)
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] < 1e-10 and res[-1] / res[0] < 1e-8


def test_eulerian_velocity_stays_subluminal():
    # v_tilde / u0 < 1 for any finite v_tilde, so large Eulerian velocities are still causal
    grid = RadialGrid(16)
    w = make_weight("poly2", DELTA)
    ref = reference_data(w, KAPPA, 1.0, 0.5)
    fast = EulerianData(rho0=ref.rho0, v0=lambda z: 50.0 * np.asarray(z))
    m_ref, _ = reference_mass_function(w, KAPPA)
    gauge = solve_eta0(grid, mass_function(fast.rho0), m_ref, KAPPA)
    p = SimParams(kappa=KAPPA, delta=DELTA, lambda1=0.5, n_grid=16)
    _, U0 = build_initial_state(fast, solve_lambda(p, 1e-6, 1e-7), gauge, KAPPA)
    assert np.max(np.abs(U0.values + 0.5 * grid.zeta)) < 1.0


def test_csv_round_trip():
    grid = RadialGrid(32)
    w = make_weight("poly2", 1.0)
    data = EulerianData(rho0=lambda z: 1.0 - np.asarray(z) ** 2, v0=lambda z: 0.1 * np.asarray(z))
    back = EulerianData.from_csv(data.to_csv(grid))
    z = np.linspace(0, 1, 101)
    assert np.max(np.abs(back.rho0(z) - (1 - z**2))) < 1e-12
    assert np.max(np.abs(back.v0(z) - 0.1 * z)) < 1e-12
    with pytest.raises(InputDomainError):
        EulerianData.from_csv("zeta,rho\n0,1\n")
