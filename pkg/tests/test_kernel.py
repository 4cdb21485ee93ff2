import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probns.estimate import FieldEvaluationError, InvariantViolation
from probns.fields import CallableField, GaussianVortexBlob, LinearField, solenoidal_shear
from probns.kernel import (brownian_paths, deformation_bound, deformation_tensor, deformation_violations,
                           evolve_deformation, flow_jacobian_determinant, girsanov_weights,
                           integrate_paths, mode_consistency_residual, paired_separation,
                           simulate_lagrangian_paths)
from probns.rng import BrownianDriver, TimeGrid


def test_deformation_tensor_modes():
    J = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(deformation_tensor(J, "full"), J)
    S = deformation_tensor(J, "symmetric")
    np.testing.assert_array_equal(S, S.T)
    np.testing.assert_array_equal(S + (J - J.T) / 2, J)


def test_zero_velocity_paths_are_scaled_brownian_motion(driver):
    g = TimeGrid(0.5, 10)
    zero = LinearField(np.zeros((3, 3)))
    a = simulate_lagrangian_paths(zero, [1.0, 2.0, 3.0], 0.5, 0.2, g, driver, 300)
    b = brownian_paths([1.0, 2.0, 3.0], 0.5, 0.2, g, driver, 300)
    np.testing.assert_allclose(a.X, b.X, atol=1e-14)


def test_constant_drift_moves_the_mean(driver):
    c = np.array([1.0, -2.0, 0.5])
    u = LinearField(np.zeros((3, 3)), c)
    ens = simulate_lagrangian_paths(u, np.zeros(3), 1.0, 0.5, TimeGrid(1.0, 4), driver, 20_000)
    # dX = -u ds + dW: mean -c t, variance 2 nu t
    np.testing.assert_allclose(ens.X[:, -1].mean(axis=0), -c, atol=0.03)
    assert abs(ens.X[:, -1].var(axis=0).mean() - 1.0) < 0.03


@settings(max_examples=15, deadline=None)
@given(gamma=st.floats(0.1, 4.0), steps=st.integers(2, 40), mode=st.sampled_from(["symmetric", "full"]))
def test_deformation_bound_holds_for_every_cell(gamma, steps, mode):
    u = solenoidal_shear(gamma)
    g = TimeGrid(1.0, steps)
    ens = simulate_lagrangian_paths(u, np.zeros(3), 1.0, 0.1, g, BrownianDriver(1), 64, mode)
    M = float(np.linalg.norm(deformation_tensor(u.A, mode), 2))
    evolve_deformation(ens, u, mode, M)
    assert deformation_violations(ens, M) == 0
    assert np.all(np.linalg.norm(ens.U, 2, axis=(-2, -1)) <= np.exp(g.nodes * M) * (1 + 1e-12))


def test_understated_bound_is_reported(driver):
    u = solenoidal_shear(2.0)
    ens = simulate_lagrangian_paths(u, np.zeros(3), 1.0, 0.1, TimeGrid(1.0, 20), driver, 16, "full")
    with pytest.raises(InvariantViolation):
        evolve_deformation(ens, u, "full", M=0.1, c=0.0)


def test_deformation_bound_shape():
    s = np.array([0.0, 0.5, 1.0])
    np.testing.assert_allclose(deformation_bound(2.0, s, 0.1, 0.0), np.exp(2 * s))


def test_girsanov_constant_field_moments(driver):
    c = np.array([0.4, 0.0, -0.3])
    nu, t = 0.5, 1.0
    ens = girsanov_weights(LinearField(np.zeros((3, 3)), c),
                           brownian_paths(np.zeros(3), t, nu, TimeGrid(t, 5), driver, 50_000))
    Z = ens.Z[:, -1]
    se = Z.std() / math.sqrt(Z.size)
    assert abs(Z.mean() - 1) < 4 * se
    # reweighting turns the Brownian endpoint mean into the drifted one, -c t
    m = (Z[:, None] * ens.X[:, -1]).mean(axis=0)
    np.testing.assert_allclose(m, -c * t, atol=0.03)


def test_girsanov_needs_pure_brownian_paths(driver):
    u = solenoidal_shear(1.0)
    ens = simulate_lagrangian_paths(u, np.zeros(3), 0.5, 0.1, TimeGrid(0.5, 5), driver, 8)
    with pytest.raises(ValueError):
        girsanov_weights(u, ens)


def test_flow_volume_is_preserved_to_first_order(driver):
    u = GaussianVortexBlob(0.7, 0.5)
    g = TimeGrid(0.5, 100)
    ens = simulate_lagrangian_paths(u, np.array([0.2, 0.0, 0.1]), 0.5, 0.1, g, driver, 2000)
    det = flow_jacobian_determinant(u, ens)
    assert np.max(np.abs(det - 1)) <= 5 * g.ds
    assert flow_jacobian_determinant(u, ens, sample=3) == pytest.approx(det[3])


def test_paired_paths_stay_within_the_two_point_bound(driver):
    u = GaussianVortexBlob(0.5, 1.0)
    g = TimeGrid(0.4, 80)
    res = paired_separation(u, [0.1, 0.0, 0.0], [0.12, 0.01, 0.0], 0.4, 0.2, g, driver, 500)
    assert res["violations"] == 0
    assert 0 < res["max_ratio"] <= 1


def test_non_finite_field_reports_sample_and_step():
    def bad(t, x):
        out = np.zeros_like(x)
        out[..., 0] = np.where(x[..., 0] > 10.0, np.nan, 0.0)
        return out

    x0 = np.zeros(3)
    dW = np.zeros((5, 4, 3))
    dW[3, 1, 0] = 20.0
    with pytest.raises(FieldEvaluationError) as info:
        integrate_paths(x0, TimeGrid(1.0, 4), dW, lambda k, X: bad(0, X), 1.0, sample_offset=100)
    assert (info.value.sample, info.value.step) == (103, 2)


def test_mode_consistency_residual_vanishes():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    assert mode_consistency_residual(GaussianVortexBlob(0.6, 1.3), 0.0, pts) < 1e-12
    rot = CallableField(lambda t, x: np.stack([-x[..., 1], x[..., 0], 0 * x[..., 0]], -1))
    assert mode_consistency_residual(rot, 0.0, pts) < 1e-6
