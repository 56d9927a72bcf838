import math

import numpy as np
import pytest

from vacuum_star.errors import ConfigError, InsufficientDataError, RangeQueryError
from vacuum_star.scaling import (
    SimParams,
    asymptotic_rate,
    lambda_identity_residual,
    limit_rate,
    solve_lambda,
    t_of_tau,
    tau_of_t,
)


def params(**kw):
    base = dict(kappa=0.5, delta=1e-3, lambda1=0.5)
    base.update(kw)
    return SimParams(**base)


def test_zero_delta_is_linear():
    path = solve_lambda(params(delta=0.0), 100.0, 1e-2)
    exact = 1.0 + 0.5 * path.t
    assert np.max(np.abs(path.lam - exact) / exact) < 1e-12
    assert np.all(path.dlam_dt == 0.5)


def test_zero_delta_tau_clock():
    # lambda = 1 + t/2 gives tau = 2 log(1 + t/2)
    path = solve_lambda(params(delta=0.0), 50.0, 1e-2)
    assert np.max(np.abs(path.tau - 2.0 * np.log1p(0.5 * path.t))) < 1e-11


def test_rate_identity_holds_within_local_tolerance():
    for delta in (1e-4, 1e-3, 1e-2):
        resid, tol = lambda_identity_residual(solve_lambda(params(delta=delta), 200.0, 1e-2))
        assert resid <= 10.0 * tol


def test_limit_rate_first_integral():
    # lambda_bar**2 = lambda1**2 + 2 delta / (3 kappa) lambda0**(-3 kappa)
    assert limit_rate(params(delta=0.0)) == 0.5
    assert limit_rate(params(delta=1e-2)) == pytest.approx(math.sqrt(0.25 + 2e-2 / 1.5), rel=1e-15)
    assert limit_rate(params(delta=1e-3, lambda0=2.0)) == pytest.approx(
        math.sqrt(0.25 + 2e-3 / 1.5 * 2.0**-1.5), rel=1e-15
    )


def test_small_delta_rate_shift_is_four_thirds():
    # (lambda_bar - lambda1) / delta -> 1 / (3 kappa lambda1) = 4/3 for kappa = lambda1 = 1/2
    for delta in (1e-4, 1e-5):
        shift = (limit_rate(params(delta=delta)) - 0.5) / delta
        assert shift == pytest.approx(4.0 / 3.0, abs=2.0 * delta)


def test_fitted_rate_matches_limit():
    p = params(delta=1e-3)
    path = solve_lambda(p, 1e3, 1e-2)
    assert abs(asymptotic_rate(path) - limit_rate(p)) < 1e-6


def test_clock_conversions_round_trip():
    path = solve_lambda(params(), 100.0, 1e-2)
    for t in (0.0, 1.234, 50.0, 99.0):
        assert t_of_tau(path, tau_of_t(path, t)) == pytest.approx(t, rel=1e-10, abs=1e-12)
    with pytest.raises(RangeQueryError):
        tau_of_t(path, 1e6)


def test_fit_window_errors():
    path = solve_lambda(params(), 10.0, 1e-2)
    with pytest.raises(RangeQueryError):
        asymptotic_rate(path, (5.0, 50.0))
    with pytest.raises(InsufficientDataError):
        asymptotic_rate(path, (9.99, 10.0))


@pytest.mark.parametrize(
    "bad",
    [dict(kappa=0.0), dict(kappa=0.7), dict(delta=-1.0), dict(lambda1=1.0), dict(n_grid=9), dict(tau_max=0.0)],
)
def test_invalid_params(bad):
    with pytest.raises(ConfigError):
        params(**bad)


def test_params_round_trip():
    p = params(n_grid=32, weight_scale=0.25)
    assert SimParams.from_dict(p.to_dict()) == p
