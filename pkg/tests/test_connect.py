import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emflow.connect import (
    ConnectionProblem,
    NotConnectedError,
    ShootingVariables,
    geodesic_guess,
    hyperboloid_point,
    initial_velocity,
    lorentzian_distance_estimate,
    rapidity_of,
    scan_charge_to_mass,
    shoot,
    solve_connection_efe,
    solve_connection_lfe,
)
from emflow.dynamics import efe_residual, lfe_residual, lfe_to_efe, recover_charge_to_mass
from emflow.errors import ChartDomainError, ConfigurationError
from emflow.geometry import Minkowski, Schwarzschild, UniformField, ZeroField, metric_at, norms

FLAT = Minkowski(4)
E1 = UniformField(4, E=1.0)
ORIGIN = np.zeros(4)
X1 = np.array([2.0, 1.0, 0.0, 0.0])

rap = st.floats(-4.0, 4.0)


@settings(max_examples=100, deadline=None)
@given(rap, rap, rap)
def test_hyperboloid_chart_is_on_the_mass_shell(a, b, c):
    U = hyperboloid_point([a, b, c])
    assert abs(U[0] ** 2 - U[1:] @ U[1:] - 1.0) < 1e-12 * U[0] ** 2
    assert U[0] > 0


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_velocity_chart_on_curved_background(a, b, c):
    m = Schwarzschild(1.0)
    x = np.array([0.0, 7.0, 1.1, 0.4])
    u = initial_velocity(m, x, [a, b, c])
    assert abs(u @ metric_at(m, x) @ u - 1.0) < 1e-12
    assert u[0] > 0
    assert np.allclose(rapidity_of(m, x, u), [a, b, c], atol=1e-9)


def test_shooting_variables_validation():
    with pytest.raises(ConfigurationError):
        ShootingVariables([0.0, 0.0, 0.0], span=-1.0)
    with pytest.raises(ConfigurationError):
        ShootingVariables([math.nan, 0.0, 0.0])


def test_shoot_straight_line():
    p = ConnectionProblem(FLAT, ZeroField(4), ORIGIN, X1)
    u = X1 / math.sqrt(3.0)
    w = rapidity_of(FLAT, ORIGIN, u)
    miss, _ = shoot(p, ShootingVariables(w, span=math.sqrt(3.0)))
    assert np.max(np.abs(miss)) < 1e-14
    miss, traj = shoot(p, ShootingVariables(w, span=1.0))
    assert np.allclose(miss, u - X1, atol=1e-14)
    assert np.allclose(traj.end, u, atol=1e-14)


def test_shoot_hyperbolic_motion_closed_form():
    x1 = np.array([math.sinh(1.0), math.cosh(1.0) - 1.0, 0.0, 0.0])
    p = ConnectionProblem(FLAT, E1, ORIGIN, x1, ratio=1.0)
    miss, _ = shoot(p, ShootingVariables(np.zeros(3), span=1.0))
    assert np.linalg.norm(miss) < 1e-8


def test_problem_validation():
    with pytest.raises(ConfigurationError):
        ConnectionProblem(FLAT, E1, ORIGIN, ORIGIN)
    with pytest.raises(ConfigurationError):
        ConnectionProblem(FLAT, E1, ORIGIN, X1, kind="bvp")
    with pytest.raises(ChartDomainError):
        ConnectionProblem(Schwarzschild(1.0), ZeroField(4), [0, 1.0, 1.0, 0], [1, 5.0, 1.0, 0])
    assert ConnectionProblem(FLAT, E1, ORIGIN, X1).bvp_tol == 1e-8
    assert ConnectionProblem(Schwarzschild(1.0), ZeroField(4), [0, 5, 1, 0], [3, 5, 1, 0]).bvp_tol == 1e-6


def test_geodesic_guess_is_exact_in_flat_space():
    v = geodesic_guess(ConnectionProblem(FLAT, ZeroField(4), ORIGIN, X1))
    assert v.span == pytest.approx(math.sqrt(3.0))
    assert np.allclose(initial_velocity(FLAT, ORIGIN, v.direction), X1 / math.sqrt(3.0))


def test_flow_connection_without_field_finds_geodesic():
    res = solve_connection_efe(ConnectionProblem(FLAT, ZeroField(4), ORIGIN, X1, kind="efe"))
    assert res.converged
    assert res.variables.speed == pytest.approx(math.sqrt(3.0), abs=1e-10)


@pytest.mark.parametrize("ratio", [-0.5, 0.3, 1.0, 1.5])
def test_lfe_round_trip_fidelity(ratio):
    f = UniformField(4, E=1.0, B=0.4)
    p = ConnectionProblem(FLAT, f, ORIGIN, [3.0, 1.0, 0.5, 0.0], ratio=ratio)
    res = solve_connection_lfe(p)
    assert res.converged and res.miss_norm < p.bvp_tol
    w = res.worldline
    assert lfe_residual(FLAT, f, w, ratio) < 1e-6
    r, _ = recover_charge_to_mass(FLAT, f, w)
    assert r.value == pytest.approx(ratio, abs=1e-6)
    assert np.max(np.abs(norms(FLAT, w.x, w.v) - 1.0)) < 1e-8
    Q = math.copysign(2.0, ratio)
    assert efe_residual(FLAT, f, lfe_to_efe(w, ratio, Q), Q) < 1e-6


def test_flow_solution_is_not_a_solution_for_other_ratios():
    res = solve_connection_efe(ConnectionProblem(FLAT, E1, ORIGIN, X1, kind="efe", charge=1.0))
    assert res.converged
    induced = 1.0 / res.variables.speed
    r, _ = recover_charge_to_mass(FLAT, E1, res.worldline)
    assert r.value == pytest.approx(induced, abs=1e-6)
    assert lfe_residual(FLAT, E1, res.worldline, 1.0) > 1e-2
    assert lfe_residual(FLAT, E1, res.worldline, induced) < 1e-6


def test_spacelike_endpoints_fail_with_report():
    p = ConnectionProblem(FLAT, ZeroField(4), ORIGIN, [1.0, 2.0, 0.0, 0.0], restarts=1, max_iter=10)
    res = solve_connection_lfe(p)
    assert not res.converged
    assert res.miss_norm > 0.1
    assert "no connecting" in res.message


def test_schwarzschild_geodesic_connection():
    m = Schwarzschild(1.0)
    x0 = np.array([0.0, 10.0, math.pi / 2, 0.0])
    x1 = np.array([5.0, 10.0, math.pi / 2, 0.1])
    res = solve_connection_lfe(ConnectionProblem(m, ZeroField(4), x0, x1))
    assert res.converged and res.miss_norm < 1e-6
    # uniform circular motion at r = 10 from x0 to x1 ages 5 sqrt(0.8 - 100 * 0.02^2);
    # the geodesic ages more, but only slightly
    circle = 5.0 * math.sqrt(0.8 - 100 * 0.02**2)
    assert circle < res.proper_length < circle + 1e-3


def test_scan_in_kernel_scene_returns_rest_worldline():
    f = UniformField(4, B=1.0)
    scan = scan_charge_to_mass(FLAT, f, ORIGIN, [3.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 1.0])
    assert scan.successes == 3
    for e in scan.entries:
        assert e.recovered.is_symbol_r
        assert e.proper_length == pytest.approx(3.0, abs=1e-10)
    assert np.nanmax(scan.separations) < 1e-10


def test_scan_with_zero_ratio_is_straight():
    scan = scan_charge_to_mass(FLAT, E1, ORIGIN, X1, [0.0])
    w = scan.entries[0].result.worldline
    assert scan.successes == 1
    assert np.max(np.abs(w.x - np.outer(w.lam / math.sqrt(3.0), X1))) < 1e-10


def test_scan_warm_starts_vary_continuously():
    grid = [0.1 * k for k in range(1, 11)]
    scan = scan_charge_to_mass(FLAT, E1, ORIGIN, X1, grid)
    assert scan.successes == 10
    dirs = np.array([e.result.variables.direction for e in scan.entries])
    steps = np.linalg.norm(np.diff(dirs, axis=0), axis=1)
    assert np.max(steps) < 2.0 * np.min(steps) + 1e-3
    assert np.all(np.diff(dirs[:, 0]) < 0)


def test_scan_is_independent_of_worker_count():
    grid = [0.2, 0.4, 0.6, 0.8]
    a = scan_charge_to_mass(FLAT, E1, ORIGIN, X1, grid, workers=1, chunk=2)
    b = scan_charge_to_mass(FLAT, E1, ORIGIN, X1, grid, workers=2, chunk=2)
    assert [e.result.miss_norm for e in a.entries] == [e.result.miss_norm for e in b.entries]
    assert [e.proper_length for e in a.entries] == [e.proper_length for e in b.entries]


def test_distance_estimate():
    est = lorentzian_distance_estimate(FLAT, E1, ORIGIN, X1)
    assert est.lower_bound == pytest.approx(math.sqrt(3.0), abs=1e-10)
    wider = lorentzian_distance_estimate(FLAT, E1, ORIGIN, X1, [0.5, 1.0])
    assert wider.lower_bound >= est.lower_bound
    assert all(wider.lower_bound >= l for l in wider.lengths)


def test_distance_estimate_without_connection():
    with pytest.raises(NotConnectedError):
        lorentzian_distance_estimate(FLAT, ZeroField(4), ORIGIN, [1.0, 2.0, 0.0, 0.0])
