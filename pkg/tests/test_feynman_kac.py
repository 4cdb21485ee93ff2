import math

import numpy as np
import pytest
from scipy.linalg import expm

from probns.estimate import InvariantViolation
from probns.feynman_kac import (FINAL, INITIAL, ParabolicSystemSpec, augment_inhomogeneous,
                                autonomous_as_final, solve_final_value, solve_final_value_homogeneous,
                                solve_initial_value, solve_initial_value_backward)
from probns.oracles import cos_heat_1d, fd_parabolic_1d, linear_ode_mean
from probns.rng import TimeGrid


def test_constant_coupling_matches_the_matrix_exponential(driver):
    D = np.array([[-0.3, 0.8], [0.2, 0.1]])
    spec = ParabolicSystemSpec(1, 2, [1.0, -0.5], sigma=0.0, D=D, T=1.0)
    ref = expm(D) @ np.array([1.0, -0.5])
    for n, tol in ((100, 0.01), (1000, 0.001)):
        est = solve_final_value_homogeneous(spec, 0.0, [0.0], TimeGrid(1.0, n), driver, 4)
        # explicit Euler on dU = U D ds: first-order error
        assert np.max(np.abs(est.value - ref)) < tol


def test_constant_source_adds_linearly(driver):
    spec = ParabolicSystemSpec(2, 1, lambda x: np.cos(x[..., :1]), f=[0.7], T=2.0)
    est = solve_final_value(spec, 0.5, [0.3, 0.0], TimeGrid(1.5, 30), driver, 20_000)
    ref = cos_heat_1d(0.3, 1.0, 1.5)[0] + 0.7 * 1.5
    assert abs(est.value[0] - ref) < 3 * est.std_error[0] + 1e-12


def test_drift_and_potential_against_finite_differences(driver):
    # v_s = 1/2 v_xx + b v_x + lam v, periodic data
    b = lambda x: 0.3 * np.sin(x)  # noqa: E731
    lam = lambda x: -0.2 * (1 + np.cos(x))  # noqa: E731
    phi = lambda x: np.cos(x) + 0.5 * np.sin(2 * x)  # noqa: E731
    ref, err = fd_parabolic_1d(phi, [0.4], 0.6, drift=b, potential=lam, n=256, n_steps=600)
    spec = ParabolicSystemSpec(1, 1, phi, b=lambda t, x: b(x), D=lambda t, x: lam(x)[..., None], T=0.6)
    g = TimeGrid(0.6, 120)
    est = solve_final_value_homogeneous(spec, 0.0, [0.4], g, driver, 100_000)
    assert abs(est.value[0] - ref[0]) < 3 * est.std_error[0] + 0.5 * g.ds + err


def test_linear_drift_mean_matches_the_ode_oracle(driver):
    A = np.array([[0.5, 0.2, 0.0], [-0.1, 0.3, 0.0], [0.0, 0.0, 1.0]])
    c = np.array([0.1, 0.0, -0.2])
    spec = ParabolicSystemSpec(3, 3, lambda x: x, b=lambda t, x: -(x @ A.T + c), sigma=0.0, T=1.0)
    ref, _ = linear_ode_mean(A, c, [1.0, -1.0, 0.5], 1.0)
    est = solve_final_value_homogeneous(spec, 0.0, [1.0, -1.0, 0.5], TimeGrid(1.0, 2000), driver, 2)
    np.testing.assert_allclose(est.value, ref, atol=2e-3)


def test_homogeneous_solver_refuses_a_source(driver):
    spec = ParabolicSystemSpec(1, 1, 1.0, f=[1.0])
    with pytest.raises(ValueError, match="source"):
        solve_final_value_homogeneous(spec, 0.0, [0.0], TimeGrid(1.0, 2), driver, 2)


def test_direction_and_horizon_are_checked(driver):
    fin = ParabolicSystemSpec(1, 1, 1.0, T=1.0)
    with pytest.raises(ValueError):
        solve_initial_value(fin, 1.0, [0.0], TimeGrid(1.0, 2), driver, 2)
    with pytest.raises(ValueError, match="horizon"):
        solve_final_value(fin, 0.0, [0.0], TimeGrid(0.5, 2), driver, 2)
    with pytest.raises(ValueError, match="beyond"):
        solve_final_value(fin, 2.0, [0.0], TimeGrid(1.0, 2), driver, 2)


def test_augmentation_shape():
    spec = ParabolicSystemSpec(2, 2, [1.0, 2.0], D=np.eye(2), f=[3.0, 4.0])
    aug = augment_inhomogeneous(spec)
    assert aug.l == 3 and not aug.has_source
    Dt = aug._D(0.0, np.zeros((1, 2)))[0]
    np.testing.assert_array_equal(Dt, [[1, 0, 3], [0, 1, 4], [0, 0, 0]])
    np.testing.assert_array_equal(aug.phi_values(np.zeros(2)), [1.0, 2.0, 1.0])


def test_a_priori_bound_is_enforced(driver):
    spec = ParabolicSystemSpec(1, 1, lambda x: 10 + 0 * x, T=1.0, phi_bound=1.0, D_bound=0.0, f_bound=0.0)
    with pytest.raises(InvariantViolation):
        solve_final_value_homogeneous(spec, 0.0, [0.0], TimeGrid(1.0, 2), driver, 8)


def test_reversal_is_bit_exact_with_time_dependent_source(driver):
    spec = ParabolicSystemSpec(
        2, 2, lambda x: np.stack([np.sin(x[..., 0]), x[..., 1] ** 2], -1),
        b=lambda t, x: np.stack([np.cos(t) + 0 * x[..., 0], -x[..., 1]], -1),
        D=lambda t, x: np.broadcast_to(np.array([[0.0, t], [-t, 0.1]]), x.shape[:-1] + (2, 2)),
        f=lambda t, x: np.stack([t * np.cos(x[..., 1]), np.exp(-t) + 0 * x[..., 0]], -1),
        direction=INITIAL)
    g = TimeGrid(0.8, 13)
    a = solve_initial_value(spec, 0.8, [0.2, -0.1], g, driver, 2500)
    b = solve_initial_value_backward(spec, 0.8, [0.2, -0.1], g, driver, 2500)
    np.testing.assert_array_equal(a.value, b.value)
    np.testing.assert_array_equal(a.std_error, b.std_error)


def test_autonomous_initial_value_problem_equals_final_value_problem(driver):
    ini = ParabolicSystemSpec(1, 1, lambda x: np.cos(x), D=[[-0.1]], f=[0.2], direction=INITIAL)
    fin = autonomous_as_final(ini, 0.7)
    assert fin.direction == FINAL and fin.T == 0.7
    g = TimeGrid(0.7, 7)
    a = solve_initial_value(ini, 0.7, [0.1], g, driver, 1000)
    b = solve_final_value(fin, 0.0, [0.1], g, driver, 1000)
    np.testing.assert_array_equal(a.value, b.value)


def test_heat_solution_converges_in_samples(driver):
    spec = ParabolicSystemSpec(1, 1, lambda x: np.cos(2 * x), T=0.5)
    g = TimeGrid(0.5, 1)
    se = [solve_final_value_homogeneous(spec, 0.0, [0.3], g, driver, n).std_error[0] for n in (4096, 16384)]
    assert se[0] / se[1] == pytest.approx(2.0, rel=0.1)
    assert math.isfinite(se[1])
