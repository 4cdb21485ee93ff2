import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probns.fields import GaussianBump, GaussianVortexBlob, LinearField, ZeroField
from probns.ns_solver import (ContractionBudget, IterationReport, NoAdmissibleTau, NSProblem, SolverConfig,
                              bs_map, compute_tau_bound, cost_model, growth_factor, ns_map, picard_iterate)
from probns.oracles import heat_convolution
from probns.potential import TimeQuadrature
from probns.rng import TimeGrid


def _problem(xi0=None, g=None, T=1.0):
    return NSProblem(0.5, 0.5, 1.0, T, xi0 or GaussianBump((0.0, 0.0, 1.0), 0.8), g)


def test_ns_map_at_time_zero_is_the_data(driver):
    p = _problem()
    x = np.array([[0.1, 0.2, 0.3]])
    est = ns_map(GaussianVortexBlob(), p, 0.0, x, None, driver, 10)
    np.testing.assert_array_equal(est.value, p.xi0.value(0.0, x))
    np.testing.assert_array_equal(est.std_error, 0.0)


def test_still_fluid_gives_the_heat_flow(driver):
    p = _problem()
    x = np.array([0.3, -0.2, 0.1])
    est = ns_map(ZeroField(), p, 0.4, x, TimeGrid(0.4, 1), driver, 50_000)
    ref, _ = heat_convolution(x, 0.4, 0.5, [0.0, 0.0, 1.0], 0.8)
    assert np.all(np.abs(est.value - ref) <= 3 * est.std_error + 1e-15)


def test_constant_forcing_accumulates(driver):
    c = np.array([0.0, 0.2, -0.1])
    p = _problem(xi0=GaussianBump((0.0, 0.0, 0.0), 1.0), g=LinearField(np.zeros((3, 3)), c))
    est = ns_map(ZeroField(), p, 0.5, np.zeros(3), TimeGrid(0.5, 5), driver, 64)
    np.testing.assert_allclose(est.value, 0.5 * c, atol=1e-15)


def test_ns_map_argument_checks(driver):
    p = _problem()
    with pytest.raises(ValueError, match="method"):
        ns_map(ZeroField(), p, 0.5, np.zeros(3), TimeGrid(0.5, 2), driver, 8, method="exact")
    with pytest.raises(ValueError, match="outside"):
        ns_map(ZeroField(), p, 2.0, np.zeros(3), TimeGrid(2.0, 2), driver, 8)
    with pytest.raises(ValueError, match="horizon"):
        ns_map(ZeroField(), p, 0.5, np.zeros(3), TimeGrid(0.25, 2), driver, 8)


@pytest.mark.parametrize("kw", [dict(nu=0.0), dict(alpha=1.0), dict(p=1.5), dict(T=-1.0)])
def test_problem_validation(kw):
    base = dict(nu=0.5, alpha=0.5, p=1.0, T=1.0, xi0=ZeroField())
    with pytest.raises(ValueError):
        NSProblem(**{**base, **kw})


def test_data_size_of_a_gaussian():
    p = _problem(xi0=GaussianBump((0.0, 0.0, 1.0), 1.0))
    eps = p.data_size(4.0, 0.25, n_pairs=256)
    # L^1 norm (2 pi)^(3/2) plus sup 1 plus a Hoelder seminorm
    assert (2 * math.pi) ** 1.5 + 1 < eps < (2 * math.pi) ** 1.5 + 3
    assert p.eps0 == eps


def test_tau_root_of_the_growth_condition():
    tau = compute_tau_bound(1.0, 2.0, 1.0, 1.0, rtol=1e-12)
    assert growth_factor(tau, 1.0) == pytest.approx(2.0, rel=1e-9)


def test_tau_edge_cases():
    with pytest.raises(NoAdmissibleTau):
        compute_tau_bound(3.0, 2.0, 4.0, 1.0)
    assert compute_tau_bound(0.0, 2.0, 1.0, 0.7) == 0.7
    assert compute_tau_bound(1e-9, 2.0, 1.0, 0.7) == 0.7
    with pytest.raises(ValueError, match="C_tilde"):
        compute_tau_bound(1.0, 2.0, 1.0, 1.0, C_tilde=1.0)


def test_second_condition_can_bind():
    tau = compute_tau_bound(0.5, 4.0, 4.0, 1.0, C_tilde=1.0, C_nu_p=10.0, rtol=1e-12)
    cm = cost_model("sqrt_plus_linear")
    assert 10.0 * cm(tau) * 0.5 == pytest.approx(1.0, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(eps=st.floats(0.01, 1.9), M1=st.floats(0.1, 10), M2=st.floats(0.1, 10))
def test_tau_is_monotone(eps, M1, M2):
    lo, hi = sorted((M1, M2))
    assert compute_tau_bound(eps, 2.0, hi, 5.0) <= compute_tau_bound(eps, 2.0, lo, 5.0)
    assert compute_tau_bound(min(2.0, 1.05 * eps), 2.0, lo, 5.0) <= compute_tau_bound(eps, 2.0, lo, 5.0)


def test_budget_precondition_and_override():
    with pytest.raises(ValueError):
        ContractionBudget(L=4.0, M=2.0)
    b = ContractionBudget(L=2.0, M=2.0, tau=0.05)
    assert b.horizon(1.0, 1.0) == 0.05
    with pytest.raises(ValueError):
        ContractionBudget(L=2.0, M=2.0, tau=2.0).horizon(1.0, 1.0)


def test_cost_models():
    assert cost_model("full", 2.0)(1.0) == pytest.approx(6.0)
    assert cost_model(lambda t: 3 * t)(2.0) == 6.0
    with pytest.raises(ValueError):
        cost_model("cubic")


def test_bs_map_of_zero_vorticity(driver):
    out = bs_map(ZeroField(), [0.0, 0.1], 1.0, 0.5, TimeQuadrature(), driver, 32)
    assert out.values.shape == (2, 5, 5, 5, 3)
    assert not out.values.any() and not out.std_error.any()


def test_bs_map_recovers_a_blob_velocity(driver):
    blob = GaussianVortexBlob(1.0, 1.0)
    out = bs_map(blob.vorticity(), [0.0], 1.0, 1.0, TimeQuadrature(), driver, 4000)
    ref = blob.value(0.0, out.nodes().reshape(-1, 3)).reshape(out.values.shape)
    # the vorticity is cut to the box [-1, 1]^3, so only the centre node is compared tightly
    c = (0, 1, 1, 1)
    assert np.all(np.abs(out.values[c] - ref[c]) <= 4 * out.std_error[c] + 0.05)


def test_contraction_run_stops_at_the_noise_floor():
    rep = IterationReport(0.1, np.array([0.0, 0.1]), 1.0, distances=[1.0, 0.5, 0.2, 0.1, 0.3])
    assert rep.contraction_run() == 3
    rep.noise_floor_at = 2
    assert rep.contraction_run() == 2
    rep.distances = [1.0, 2.0, 0.5]
    rep.noise_floor_at = None
    assert rep.contraction_run() == 0


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(n_t=1)
    with pytest.raises(ValueError):
        SolverConfig(mode="antisymmetric")


def test_picard_smoke_is_reproducible():
    p = NSProblem(0.5, 0.5, 1.0, 1.0, GaussianVortexBlob(0.7, 0.03).vorticity())
    cfg = SolverConfig(R=2.0, h=1.0, n_t=2, n_samples=16, bs_samples=16, max_iters=2, tol=0.0, n_pairs=64)
    budget = ContractionBudget(L=4.0, M=4.0, tau=0.05)
    a = picard_iterate(p, budget, cfg)
    b = picard_iterate(p, budget, cfg)
    assert len(a.distances) == 2 and a.distances == b.distances
    np.testing.assert_array_equal(a.velocities[-1].values, b.velocities[-1].values)
    assert a.nsbound and all("bound" in r for r in a.nsbound)
