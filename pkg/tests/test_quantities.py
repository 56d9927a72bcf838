import numpy as np
import pytest

from vacuum_star.errors import CausalityError, DiffeomorphismLossError
from vacuum_star.grid import RadialGrid, make_weight
from vacuum_star.quantities import (
    LagrangianState,
    Setting,
    compute_cache,
    dtau_F,
    gbar_closed_form,
    jacobian_F,
    make_snapshot,
    u0_inv2,
)

KAPPA = 0.5


@pytest.fixture(scope="module")
def setting():
    return Setting(RadialGrid(32), make_weight("poly2", 1e-3), KAPPA)


def test_jacobian_of_dilation(setting):
    g = setting.grid
    F, theta, _ = jacobian_F(g, 0.2 * g.zeta)
    assert np.max(np.abs(F - 1.728)) < 1e-13
    assert np.max(np.abs(theta - 0.2)) < 1e-13


def test_folded_flow_is_rejected(setting):
    g = setting.grid
    with pytest.raises(DiffeomorphismLossError):
        jacobian_F(g, -1.5 * g.zeta)


def test_background_u0(setting):
    g = setting.grid
    zero = np.zeros_like(g.zeta)
    inv2, A = u0_inv2(g, zero, zero, 0.5)
    assert np.max(np.abs(inv2 - (1.0 - 0.25 * g.zeta**2))) < 1e-15
    with pytest.raises(CausalityError):
        u0_inv2(g, zero, 1.2 * g.zeta, 0.5)


def test_corrector_starts_at_inverse_kappa(setting):
    g = setting.grid
    Theta = 1e-2 * g.zeta * (1 - g.zeta**2)
    V = 1e-2 * g.zeta
    snap = make_snapshot(setting, Theta, V, 1.0, 0.5)
    cache = compute_cache(setting, snap, LagrangianState(0.0, Theta, V, 1.0, 0.5))
    assert np.max(np.abs(cache.Gbar - 1.0 / KAPPA)) < 1e-14
    assert np.max(np.abs(cache.G - 1.0)) < 1e-13


def test_density_identity(setting):
    g = setting.grid
    Theta = 3e-2 * np.sin(g.zeta)
    V = 1e-2 * g.zeta**3
    snap = make_snapshot(setting, 0.0 * Theta, 0.0 * V, 1.0, 0.5)
    cache = compute_cache(setting, snap, LagrangianState(0.0, Theta, V, 1.3, 0.5))
    lhs = cache.f * cache.F
    rhs = setting.wdelta_pow * cache.G
    assert np.max(np.abs(lhs - rhs)) <= 1e-15 * np.max(np.abs(rhs))


def test_dtau_F_matches_finite_difference(setting):
    g = setting.grid
    Theta = 2e-2 * g.zeta * (1 - g.zeta**2)
    V = 1e-2 * np.sin(2 * g.zeta)
    F, theta, dT = jacobian_F(g, Theta)
    h = 1e-5
    fd = (jacobian_F(g, Theta + h * V)[0] - jacobian_F(g, Theta - h * V)[0]) / (2 * h)
    assert np.max(np.abs(dtau_F(g, Theta, V, theta, dT) - fd)) < 1e-9


def test_classical_limit_corrector(setting):
    g = setting.grid
    cl = Setting(g, make_weight("poly2", 1e-3), KAPPA, classical_limit=True)
    zero = np.zeros_like(g.zeta)
    snap = make_snapshot(cl, zero, zero, 1.0, 0.5)
    gbar, Gk = gbar_closed_form(cl, snap, np.ones_like(zero), np.ones_like(zero), 2.0)
    assert np.all(gbar == 1.0 / KAPPA) and np.all(Gk == 1.0)
