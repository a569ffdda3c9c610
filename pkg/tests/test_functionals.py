import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emflow.dynamics import LorentzForce, image_distance, integrate
from emflow.errors import CausalityError, ConfigurationError
from emflow.functionals import (
    PolylineCurve,
    _ActionJ,
    _j_gradient,
    action_I,
    action_J,
    action_K,
    charge_bound,
    check_neo,
    extremize_J,
    fd_gradient,
    lorentzian_interval,
)
from emflow.geometry import (
    ConstantPotential,
    Minkowski,
    UniformField,
    ZeroField,
)

FLAT = Minkowski(4)
E1 = UniformField(4, E=1.0)
ORIGIN = np.zeros(4)
X1 = np.array([2.0, 1.0, 0.0, 0.0])


def test_rest_segment_action_is_its_duration():
    c = PolylineCurve.straight(ORIGIN, [1.0, 0.0, 0.0, 0.0])
    assert action_I(FLAT, ZeroField(4), 1.0, c).value == pytest.approx(1.0, abs=1e-14)


def test_straight_segment_length():
    c = PolylineCurve.straight(ORIGIN, X1, 20)
    r = action_I(FLAT, ZeroField(4), 0.3, c)
    assert r.value == pytest.approx(math.sqrt(3.0), abs=1e-13)
    assert r.gradient_norm < 1e-8


def test_exact_potential_adds_a_boundary_term():
    w = np.array([0.2, -0.1, 0.4, 0.0])
    c = PolylineCurve.straight(ORIGIN, X1, 30)
    r = action_I(FLAT, ConstantPotential(w), 2.0, c)
    assert r.value == pytest.approx(math.sqrt(3.0) + 2.0 * (w @ X1), abs=1e-12)
    assert r.gradient_norm < 1e-8


def test_actions_need_a_potential():
    class FieldOnly(UniformField):
        has_potential = False

        def potential(self, x):
            raise ConfigurationError("no potential")

    c = PolylineCurve.straight(ORIGIN, X1, 5)
    for act in (action_I, action_K):
        with pytest.raises(ConfigurationError):
            act(FLAT, FieldOnly(4, E=1.0), 1.0, c)
    with pytest.raises(ConfigurationError):
        extremize_J(FLAT, FieldOnly(4, E=1.0), 1.0, ORIGIN, X1, nodes=5)


def test_action_I_rejects_spacelike_curves():
    with pytest.raises(CausalityError):
        action_I(FLAT, E1, 1.0, PolylineCurve.straight(ORIGIN, [1.0, 2.0, 0.0, 0.0], 5))


def test_exact_and_finite_difference_J_gradients_agree():
    rng = np.random.default_rng(3)
    c = PolylineCurve.straight(ORIGIN, X1, 40)
    nodes = np.array(c.nodes)
    nodes[1:-1] += 0.002 * rng.standard_normal(nodes[1:-1].shape)
    c = PolylineCurve(nodes, c.lam)
    for half in (True, False):
        exact = _j_gradient(FLAT, E1, nodes, c.lam, 1.3, 0.5 if half else 1.0)
        fd = fd_gradient(FLAT, E1, c, _ActionJ(1.3, half))
        assert np.max(np.abs(exact - fd)) < 1e-8 * max(1.0, np.max(np.abs(exact)))


def test_action_I_stationary_on_lfe_solution_and_not_elsewhere():
    w = integrate(LorentzForce(FLAT, E1, 1.0), (ORIGIN, [1.0, 0, 0, 0]), (0.0, 2.0))
    c = PolylineCurve.from_worldline(w, 200)
    assert action_I(FLAT, E1, 1.0, c).gradient_norm < 1e-5
    assert action_I(FLAT, E1, 2.0, c).gradient_norm > 1e-3


@pytest.fixture(scope="module")
def extremal():
    return extremize_J(FLAT, E1, 1.0, ORIGIN, X1)


def test_j_extremal_converges(extremal):
    assert extremal.converged
    assert extremal.report.gradient_norm < 1e-9
    assert extremal.gradient_history[0] > extremal.gradient_history[-1]


def test_j_extremal_satisfies_neo_constraint(extremal):
    neo = check_neo(FLAT, E1, extremal.curve, 1.0, 1.0)
    assert neo.rel_error < 1e-4
    assert not neo.kernel_degenerate
    assert abs(neo.ratio.value - 1.0) > 0.1


def test_j_extremal_is_stationary_for_K_and_for_I_at_its_ratio(extremal):
    neo = check_neo(FLAT, E1, extremal.curve, 1.0, 1.0)
    assert action_K(FLAT, E1, 1.0, extremal.curve).gradient_norm < 1e-6
    assert action_I(FLAT, E1, neo.ratio.value, extremal.curve).gradient_norm < 1e-6
    assert action_I(FLAT, E1, 1.0, extremal.curve).gradient_norm > 1e-4


def test_j_extremal_matches_shooting_with_flow_equation(extremal):
    from emflow.connect import ConnectionProblem, solve_connection_efe

    res = solve_connection_efe(ConnectionProblem(FLAT, E1, ORIGIN, X1, kind="efe", charge=1.0))
    assert res.converged
    assert image_distance(extremal.curve.to_worldline(), res.worldline) < 1e-4


def test_jtilde_equals_J_with_half_the_charge():
    jt = extremize_J(FLAT, E1, 1.0, ORIGIN, X1, half=False)
    j = extremize_J(FLAT, E1, 0.5, ORIGIN, X1, half=True)
    assert np.max(np.abs(jt.curve.nodes - j.curve.nodes)) < 1e-9
    neo = check_neo(FLAT, E1, jt.curve, 0.5, 1.0)
    assert neo.rel_error < 1e-4
    assert action_J(FLAT, E1, 1.0, jt.curve, half=False).which == "Jtilde"


@settings(max_examples=4, deadline=None)
@given(st.sampled_from([(1.0, 2.0), (2.0, 1.0), (0.5, 4.0), (4.0, 0.5)]))
def test_beta_equivalence(pair):
    Q, dl = pair
    ref = extremize_J(FLAT, E1, 2.0, ORIGIN, X1, (0.0, 1.0), 100)
    ext = extremize_J(FLAT, E1, Q, ORIGIN, X1, (0.0, dl), 100)
    assert image_distance(ref.curve.to_worldline(), ext.curve.to_worldline()) < 1e-6


def test_kernel_degenerate_extremal():
    f = UniformField(4, B=1.0)
    ext = extremize_J(FLAT, f, 1.0, ORIGIN, [3.0, 0.0, 0.0, 0.0])
    neo = check_neo(FLAT, f, ext.curve, 1.0, 1.0)
    assert neo.kernel_degenerate and neo.ratio.is_symbol_r
    assert neo.length == pytest.approx(3.0, abs=1e-12)


def test_extremize_rejects_spacelike_start():
    with pytest.raises(CausalityError):
        extremize_J(FLAT, E1, 1.0, ORIGIN, [1.0, 2.0, 0.0, 0.0], nodes=10)


def test_charge_bound_and_interval():
    assert lorentzian_interval(FLAT, ORIGIN, X1) == pytest.approx(math.sqrt(3.0))
    assert lorentzian_interval(FLAT, ORIGIN, [1.0, 2.0, 0.0, 0.0]) == 0.0
    assert charge_bound(-2.0, 4.0) == 0.5
    with pytest.raises(CausalityError):
        charge_bound(1.0, 0.0)


def test_action_K_value():
    c = PolylineCurve.straight(ORIGIN, X1, 10)
    r = action_K(FLAT, E1, 0.7, c)
    omega = -0.5 * 1.0 * 2.0  # int -E x dt along the chord t = 2 tau, x = tau
    assert r.value == pytest.approx(0.5 * 3.0 + 0.7 * omega, abs=1e-12)


def test_action_J_value():
    c = PolylineCurve.straight(ORIGIN, X1, 10, lam=(0.0, 2.0))
    r = action_J(FLAT, E1, 1.5, c)
    assert r.value == pytest.approx(0.5 * 3.0 / 2.0 + 1.5 * (-1.0), abs=1e-12)
    assert r.parameters["beta"] == 3.0


def test_jtilde_extremal_ratio_is_charge_over_twice_its_own_speed():
    jt = extremize_J(FLAT, E1, 1.0, ORIGIN, X1, half=False)
    neo = check_neo(FLAT, E1, jt.curve, 0.5, 1.0)
    speed = neo.length / 1.0
    assert neo.ratio.value == pytest.approx(1.0 / (2.0 * speed), rel=1e-5)
    j = extremize_J(FLAT, E1, 1.0, ORIGIN, X1, half=True)
    neo_j = check_neo(FLAT, E1, j.curve, 1.0, 1.0)
    assert neo_j.ratio.value == pytest.approx(1.0 / neo_j.length, rel=1e-5)
    # the two extremals move at different speeds, so their ratios are not in a 1:2 proportion
    assert abs(neo.ratio.value / neo_j.ratio.value - 0.5) > 1e-2


def test_I_sign_convention_selects_the_integrated_ratio():
    w = integrate(LorentzForce(FLAT, E1, 1.0), (ORIGIN, [1.0, 0, 0, 0]), (0.0, 2.0))
    c = PolylineCurve.from_worldline(w, 200)
    assert action_I(FLAT, E1, -1.0, c).gradient_norm > 1e3 * action_I(FLAT, E1, 1.0, c).gradient_norm


def test_I_and_K_ignore_the_parameter_grid():
    c = PolylineCurve.straight(ORIGIN, X1, 30)
    nodes = np.array(c.nodes)
    nodes[1:-1, 1] += 0.05 * np.sin(np.linspace(0, np.pi, 30)[1:-1])
    c = PolylineCurve(nodes, c.lam)
    d = c.relabel(np.cumsum(np.linspace(1.0, 3.0, 30)))
    assert action_I(FLAT, E1, 0.7, c).value == action_I(FLAT, E1, 0.7, d).value
    assert action_K(FLAT, E1, 0.7, c).value == action_K(FLAT, E1, 0.7, d).value


@pytest.mark.parametrize("Q, dl", [(0.5, 1.0), (1.0, 2.0), (-1.0, 1.0)])
def test_J_extremals_solve_the_lorentz_force_equation(Q, dl):
    f = UniformField(4, E=0.8, B=0.5)
    x1 = np.array([3.0, 0.5, -0.5, 0.0])
    ext = extremize_J(FLAT, f, Q, ORIGIN, x1, (0.0, dl))
    assert ext.converged
    neo = check_neo(FLAT, f, ext.curve, Q, dl)
    from emflow.dynamics import lfe_residual

    assert lfe_residual(FLAT, f, ext.curve.to_worldline(), neo.ratio.value) < 1e-6
    # same-extremal property for K at ten times the optimizer tolerance
    assert action_K(FLAT, f, Q * dl, ext.curve).gradient_norm < 1e-8
