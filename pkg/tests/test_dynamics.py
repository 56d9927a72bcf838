import numpy as np
import pytest

from vacuum_star.config import parse_config
from vacuum_star.driver import run, setup
from vacuum_star.dynamics import Model, StepVector, cfl_dt, pressure_gradient, step
from vacuum_star.errors import CausalityError
from vacuum_star.grid import RadialGrid, make_weight
from vacuum_star.quantities import LagrangianState, Setting, compute_cache, make_snapshot

KAPPA = 0.5


def small_model(n=16, delta=1e-3, classical=False, amp=1e-2, e6_sign="literal"):
    g = RadialGrid(n)
    st = Setting(g, make_weight("poly2", delta), KAPPA, classical_limit=classical)
    Theta = amp * g.zeta * (1 - g.zeta**2)
    V = 0.5 * amp * g.zeta
    snap = make_snapshot(st, Theta, V, 1.0, 0.5)
    y = StepVector(0.0, Theta, V, 1.0, 0.5, 0.0, np.full_like(g.zeta, 1.0 / KAPPA))
    return Model(st, snap, e6_sign=e6_sign), y


def advance(model, y, dt, n):
    for _ in range(n):
        y, _ = step(model, y, dt)
    return y


def test_zero_data_classical_zero_delta_stays_zero():
    model, y = small_model(delta=0.0, classical=True, amp=0.0)
    y = advance(model, y, 0.05, 10)
    assert np.all(y.Theta == 0.0) and np.all(y.dTheta == 0.0)
    assert y.lam == pytest.approx(1.0 + 0.5 * y.t, rel=1e-14)


def test_back_substitution_residual():
    model, y = small_model()
    accel, cache, br = model.acceleration(y.state())
    assert model.last_residual < 1e-12
    assert accel[0] == 0.0


def test_fourth_order_in_time():
    ref_model, y0 = small_model()
    T = 0.4
    ends = [advance(ref_model, y0, T / m, m).Theta for m in (4, 8, 16, 32)]
    e = [np.max(np.abs(ends[i] - ends[-1])) for i in range(3)]
    # self-convergence: successive differences shrink by about 2**4
    ratio = (e[0] - e[1]) / (e[1] - e[2])
    assert 12.0 < ratio < 20.0


def test_e6_sign_switch_changes_only_E6():
    m_literal, y = small_model()
    m_derived, _ = small_model(e6_sign="derived")
    s = y.state()
    c = compute_cache(m_literal.setting, m_literal.snapshot, s)
    Ep = m_literal.error_terms(s, c)
    Ed = m_derived.error_terms(s, c)
    for a, b in zip(Ep[:5], Ed[:5]):
        assert np.array_equal(a, b)
    assert np.allclose(Ep[5], -Ed[5], rtol=0, atol=0)


def test_pressure_decomposition_on_state():
    model, y = small_model(n=32, amp=5e-2)
    assert pressure_gradient(model, y.state())["residual"] < 1e-10


def test_cfl_step_positive():
    model, y = small_model()
    s = y.state()
    dt = cfl_dt(model, s, compute_cache(model.setting, model.snapshot, s))
    assert 0.0 < dt < 0.1


def test_superluminal_data_is_a_causality_error():
    cfg = parse_config(
        'kappa=0.5\ndelta=1e-3\nlambda1=0.999\nn_grid=24\n[initial]\nkind="polynomial"\nvelocity=[1.0]\n'
    )
    with pytest.raises(CausalityError):
        setup(cfg)


def test_time_step_lands_on_tau_max():
    cfg = parse_config('kappa=0.5\ndelta=1e-3\nlambda1=0.5\nn_grid=24\ntau_max=0.3\ndt_tau=0.07\n'
                       '[initial]\nkind="polynomial"\ntheta=[1e-3]\n')
    prob = setup(cfg)
    assert prob.n_steps == 5 and prob.dt * prob.n_steps == pytest.approx(0.3, rel=1e-15)


def test_classical_zero_run_radius_is_linear():
    cfg = parse_config('kappa=0.5\ndelta=0.0\nlambda1=0.5\nn_grid=24\ntau_max=2.0\n'
                       '[initial]\nkind="polynomial"\n[run]\nclassical_limit=true\nrecord_every=20\n')
    traj, y, _ = run(cfg)
    assert traj.termination is None
    t = traj.column("t")
    r = traj.column("lambda") * (1.0 + traj.column("theta_boundary"))
    assert np.max(np.abs(r - (1.0 + 0.5 * t))) < 1e-12
    assert np.all(y.Theta == 0.0)
