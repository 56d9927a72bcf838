import numpy as np
import pytest
from numpy.polynomial import Polynomial

from vacuum_star.errors import DegenerateProbeError, OriginSingularityError, ResolutionError
from vacuum_star.grid import (
    EVEN,
    ODD,
    RadialGrid,
    affine_balance_scale,
    apply_Di,
    apply_Dz,
    field_from,
    hardy_probe,
    make_weight,
    weighted_norm,
)


@pytest.fixture(scope="module")
def grid():
    return RadialGrid(32)


def test_nodes_and_quadrature(grid):
    assert grid.zeta[0] == 0.0 and grid.zeta[-1] == 1.0
    assert np.all(np.diff(grid.zeta) > 0)
    for k in range(0, 30):
        assert grid.integrate(grid.zeta**k) == pytest.approx(1.0 / (k + 1), rel=1e-13)


def test_derivatives_of_monomials(grid):
    z = grid.zeta
    assert np.max(np.abs(grid.dz(z**5) - 5 * z**4)) < 1e-11
    # D_z z**3 = 3 z**2 + 2 z**2
    assert np.max(np.abs(grid.Dz(z**3) - 5 * z**2)) < 1e-11
    # calD_2 z**3 = d_z (5 z**2) = 10 z ; calD_3 = D_z(10 z) = 30
    # roundoff grows by roughly n**2 per differentiation
    assert np.max(np.abs(grid.calD(z**3, 2) - 10 * z)) < 1e-9
    assert np.max(np.abs(grid.calD(z**3, 3) - 30.0)) < 1e-6


def test_over_zeta_origin_limit(grid):
    z = grid.zeta
    f = np.sin(z)
    out = grid.over_zeta(f)
    assert out[0] == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(out[1:] - np.sin(z[1:]) / z[1:])) < 1e-15


def test_calD_resolution_limit(grid):
    with pytest.raises(ResolutionError):
        grid.calD(grid.zeta, grid.i_max + 1)
    assert RadialGrid.chain_limit(64) == 8


def test_parity_tracking_and_origin_guard(grid):
    f = field_from(grid, lambda z: z * (1 - z**2), ODD, "f")
    assert apply_Dz(f).parity == EVEN
    assert apply_Di(f, 2).parity == ODD
    with pytest.raises(OriginSingularityError):
        apply_Dz(field_from(grid, lambda z: 1 + z**2, EVEN))


def test_weight_admissibility():
    for kind in ("poly2", "poly4"):
        flags = make_weight(kind, 1e-3).admissibility()
        assert all(flags.values()), (kind, flags)


def test_affine_balance_scale():
    assert affine_balance_scale(0.5) == pytest.approx(1.0 / 6.0, rel=1e-15)
    w = make_weight("poly2", 1.0, affine_balance_scale(0.5))
    # (1 + 1/kappa) w'(z) + z = 0 for the balanced weight
    z = np.linspace(0, 1, 11)
    assert np.max(np.abs(3.0 * w.d(z) + z)) < 1e-15


def test_weighted_norm_against_exact_integral(grid):
    # kappa = 1, w = 1 - z**2: ||z(1-z**2)||_0**2 = int (1-z**2)**3 z**4 dz
    w = make_weight("poly2", 1.0)
    f = field_from(grid, lambda z: z * (1 - z**2), ODD)
    p = Polynomial([1, 0, -1]) ** 3 * Polynomial([0, 0, 0, 0, 1])
    exact = p.integ()(1.0)
    assert weighted_norm(f, 0, w, 1.0) ** 2 == pytest.approx(exact, rel=1e-13)


def test_filter_keeps_low_modes(grid):
    fm = grid.filter_matrix()
    low = grid.zeta**5 - 0.3 * grid.zeta
    assert np.max(np.abs(fm @ low - low)) < 1e-12


def test_hardy_probe(grid):
    w = make_weight("poly2", 1.0)
    f = field_from(grid, lambda z: z * (1 - z**2), ODD)
    for variant in ("linf_energy", "weight_shift"):
        r = hardy_probe(f, variant, w, 0.5)
        assert 0.0 < r["ratio"] < np.inf
    with pytest.raises(DegenerateProbeError):
        hardy_probe(f.scaled(0.0), "weight_shift", w, 0.5)
