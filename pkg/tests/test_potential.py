import math

import numpy as np
import pytest

from probns.estimate import TruncationError
from probns.fields import GaussianVortexBlob
from probns.oracles import ball_potential, gaussian_potential
from probns.potential import (DensityField, TimeQuadrature, biot_savart_stencil, biot_savart_velocity,
                              newtonian_potential, potential_gradient, potential_hessian)


def test_quadrature_integrates_smooth_functions_in_log_s():
    q = TimeQuadrature(1e-4, 1e4, 64)
    approx = float(np.sum(q.weights * np.exp(-q.nodes)))
    assert approx == pytest.approx(1.0 - 1e-4, abs=1e-4)


def test_quadrature_validation():
    with pytest.raises(ValueError):
        TimeQuadrature(0.0, 1.0)
    with pytest.raises(ValueError):
        TimeQuadrature(1.0, 1.0)
    with pytest.raises(ValueError):
        TimeQuadrature(n_nodes=1)


def test_density_exponents_are_checked():
    with pytest.raises(ValueError):
        DensityField(lambda x: x[..., :1], 1, 1.6, 3.0, lambda r: 1.0, 1.0)


def test_gaussian_potential_at_several_points(driver):
    f = DensityField.gaussian(1.0, 0.8)
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.5, 0.0]])
    est = newtonian_potential(f, pts, TimeQuadrature(), driver, 20_000)
    for i, x in enumerate(pts):
        ref = gaussian_potential(x, 1.0, 0.8)[0][0]
        assert abs(est.value[i] - ref) < 3 * est.std_error[i] + 1e-3


def test_ball_potential_small_sample(driver):
    est = newtonian_potential(DensityField.ball_indicator(), [0.0, 0.0, 0.0], TimeQuadrature(), driver, 20_000)
    assert abs(est.value - 0.5) < 3 * est.std_error + 1e-3
    assert est.diagnostics["truncation_bound"] < 1e-3


def test_tail_beyond_tolerance_is_an_error(driver):
    f = DensityField.ball_indicator()
    with pytest.raises(TruncationError):
        newtonian_potential(f, [0.0, 0.0, 0.0], TimeQuadrature(1e-4, 1.0, 8), driver, 10, tol=1e-6)


def test_zero_density_gives_zero(driver):
    q = TimeQuadrature()
    assert newtonian_potential(DensityField.zero(), [0.1, 0.2, 0.3], q, driver, 100).value == 0.0
    np.testing.assert_array_equal(
        biot_savart_velocity(DensityField.zero(3), [0.1, 0.2, 0.3], q, driver, 100).value, 0.0)


def test_gradient_matches_closed_form(driver):
    f = DensityField.gaussian(1.0, 1.0)
    x = np.array([0.7, -0.2, 0.4])
    est = potential_gradient(f, x, TimeQuadrature(), driver, 40_000)
    ref = gaussian_potential(x, 1.0, 1.0)[0][1]
    assert np.all(np.abs(est.value - ref) < 3 * est.std_error + 1e-3)


def test_hessian_needs_hoelder_data(driver):
    with pytest.raises(ValueError, match="Hoelder"):
        potential_hessian(DensityField.ball_indicator(), [0.0, 0.0, 0.0], TimeQuadrature(), driver, 10)


def test_hessian_is_symmetric_in_mean_and_traces_to_minus_f(driver):
    f = DensityField.gaussian(1.0, 1.0)
    est = potential_hessian(f, [0.3, 0.0, 0.0], TimeQuadrature(), driver, 40_000)
    tv, tse = est.diagnostics["trace"]
    assert abs(-tv - math.exp(-0.045)) < 3 * tse + 1e-3
    assert np.all(np.abs(est.value - est.value.T) < 3 * np.hypot(est.std_error, est.std_error.T))


def test_biot_savart_velocity_of_a_blob(driver):
    blob = GaussianVortexBlob(1.0, 1.0)
    xi = DensityField.from_field(blob.vorticity(), 6.0, 0.2, lipschitz=6.0)
    x = np.array([0.4, -0.3, 0.1])
    est = biot_savart_velocity(xi, x, TimeQuadrature(), driver, 20_000)
    # the blob velocity is its own Biot-Savart velocity
    ref = blob.value(0.0, x)
    assert np.all(np.abs(est.value - ref) < 3 * est.std_error + est.diagnostics["truncation_bound"] + 1e-3)


def test_stencil_shares_samples(driver):
    xi = DensityField.from_field(GaussianVortexBlob(1.0, 1.0).vorticity(), 6.0, 0.2, lipschitz=6.0)
    sc = biot_savart_stencil(xi, [0.0, 0.0, 0.0], 0.1, TimeQuadrature(), driver, 2000)
    # per-sample differences: divergence noise far below the velocity noise over h
    assert sc.divergence.std_error < 0.2 * np.max(sc.velocity.std_error) / 0.1
    assert sc.curl.value.shape == (3,)
