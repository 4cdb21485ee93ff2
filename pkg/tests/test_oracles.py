import math

import numpy as np
import pytest

from probns.fields import GaussianVortexBlob
from probns.oracles import (OracleSpec, ball_potential, ball_potential_gradient, cos_heat_1d, fd_parabolic_1d,
                            heat_convolution, kernel_biot_savart, lamb_oseen, linear_ode_mean, ou_cos_mean,
                            ou_cos_mean_euler, oracle_reference)


def test_ball_potential_is_continuous_with_continuous_gradient():
    a, b = ball_potential([1 - 1e-9, 0, 0])[0], ball_potential([1 + 1e-9, 0, 0])[0]
    assert a == pytest.approx(1 / 3) and b == pytest.approx(1 / 3)
    np.testing.assert_allclose(ball_potential_gradient([1 - 1e-12, 0, 0])[0],
                               ball_potential_gradient([1 + 1e-12, 0, 0])[0], atol=1e-9)
    assert ball_potential([0, 0, 0])[0] == 0.5
    assert ball_potential([2, 0, 0])[0] == pytest.approx(1 / 6)


def test_heat_convolution_reduces_to_data_at_time_zero():
    x = np.array([[0.3, 0.1, -0.2]])
    v, _ = heat_convolution(x, 0.0, 1.0, 2.0, 0.5)
    assert v[0] == pytest.approx(2 * math.exp(-0.5 * 0.14 / 0.25))


def test_kernel_biot_savart_of_zero_and_of_a_blob():
    zero, err = kernel_biot_savart(lambda y: np.zeros_like(y), [0.3, 0.2, 0.1])
    assert np.all(zero == 0) and err == 0
    blob = GaussianVortexBlob(0.6, 1.0)
    x = np.array([0.2, -0.1, 0.3])
    u, err = kernel_biot_savart(blob.vorticity(), x)
    np.testing.assert_allclose(u, blob.value(0.0, x), atol=max(1e-6, 10 * err))


def test_fd_parabolic_matches_pure_heat():
    ref, err = fd_parabolic_1d(lambda x: np.cos(2 * x), [0.0, 0.3, 1.0], 0.5, n=128, n_steps=400)
    # second-order central differences: the half-resolution comparison must bound the true error
    exact = cos_heat_1d(np.array([0.0, 0.3, 1.0]), 2.0, 0.5)[0]
    assert np.max(np.abs(ref - exact)) <= err < 2e-3


def test_euler_ou_oracle_converges_to_the_exact_mean():
    exact = ou_cos_mean(0.5, 2.0, 1.0, 3.0, 1.0)[0]
    errs = [ou_cos_mean_euler(0.5, 2.0, 1.0, 3.0, 1.0, n)[0] - exact for n in (100, 200)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)


def test_frozen_reference_values():
    # computed once by the oracles and frozen
    assert ou_cos_mean(0.5, 2.0, 1.0, 3.0, 1.0)[0] == pytest.approx(0.3246060134757039, abs=1e-14)
    assert lamb_oseen([0.0, 0.0, 0.0], 0.2)[0] == pytest.approx(1 / (math.pi * 0.48), abs=1e-14)
    m, _ = linear_ode_mean([[1.0]], [0.0], [1.0], 2.0)
    assert m[0] == pytest.approx(math.exp(-2.0), abs=1e-14)


def test_oracle_dispatch():
    assert oracle_reference(OracleSpec("ball_potential", {"radius": 1.0}), x=[0, 0, 0])[0] == 0.5
    with pytest.raises(ValueError, match="unknown oracle"):
        OracleSpec("monte_carlo", {})
    with pytest.raises(ValueError, match="outside the domain"):
        oracle_reference(OracleSpec("ball_potential", {}), y=[0, 0, 0])
    with pytest.raises(ValueError):
        oracle_reference(OracleSpec("heat_convolution", {}), x=[0, 0, 0], t=-1.0, nu=1.0)
