import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emflow.errors import CausalityError, ChartDomainError, ConfigurationError
from emflow.dynamics import Worldline
from emflow.geometry import (
    Character,
    ConstantField,
    ConstantMetric,
    ConstantPotential,
    EuclideanSpace,
    Minkowski,
    MonopoleField,
    Orientation,
    RoundSphere,
    Schwarzschild,
    SpatialMagneticField,
    UniformField,
    as_event,
    causal_character,
    christoffel_at,
    christoffel_fd,
    exterior_derivative_fd,
    metric_at,
    orthonormal_frame,
    proper_length,
    raise_field,
    validate_field,
    validate_metric,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)


def schwarzschild_christoffel(M, x):
    """Hand-derived non-zero symbols of the exterior chart."""
    _, r, th, _ = x
    f = 1 - 2 * M / r
    G = np.zeros((4, 4, 4))
    G[0, 0, 1] = G[0, 1, 0] = M / (r * r * f)
    G[1, 0, 0] = M * f / r**2
    G[1, 1, 1] = -M / (r * r * f)
    G[1, 2, 2] = -r * f
    G[1, 3, 3] = -r * f * math.sin(th) ** 2
    G[2, 1, 2] = G[2, 2, 1] = 1 / r
    G[2, 3, 3] = -math.sin(th) * math.cos(th)
    G[3, 1, 3] = G[3, 3, 1] = 1 / r
    G[3, 2, 3] = G[3, 3, 2] = math.cos(th) / math.sin(th)
    return G


def test_minkowski_is_flat():
    m = Minkowski(4)
    x = [0.3, -1.0, 2.0, 0.5]
    assert np.array_equal(metric_at(m, x), np.diag([1.0, -1, -1, -1]))
    assert not np.any(christoffel_at(m, x))


@pytest.mark.parametrize("x", [[0.0, 3.0, 1.0, 0.2], [1.0, 10.0, 0.4, 2.0], [0.0, 2.5, 2.9, -1.0]])
def test_schwarzschild_closed_form_christoffel(x):
    m = Schwarzschild(1.0)
    assert np.allclose(m.christoffel(np.array(x)), schwarzschild_christoffel(1.0, x), rtol=1e-12, atol=1e-14)


def test_schwarzschild_christoffel_matches_finite_differences():
    m = Schwarzschild(2.0)
    x = np.array([0.0, 7.0, 1.1, 0.3])
    assert np.max(np.abs(m.christoffel(x) - christoffel_fd(m, x))) < 1e-6


def test_schwarzschild_domain():
    m = Schwarzschild(1.0)
    with pytest.raises(ChartDomainError):
        metric_at(m, [0.0, 1.5, 1.0, 0.0])
    with pytest.raises(ChartDomainError):
        metric_at(m, [0.0, 5.0, 0.0, 0.0])


def test_sphere_christoffel():
    m = RoundSphere(2.0)
    th = 0.7
    G = m.christoffel(np.array([th, 0.1]))
    assert G[0, 1, 1] == pytest.approx(-math.sin(th) * math.cos(th))
    assert G[1, 0, 1] == pytest.approx(math.cos(th) / math.sin(th))
    assert G[1, 1, 0] == pytest.approx(math.cos(th) / math.sin(th))


@pytest.mark.parametrize(
    "m, x",
    [
        (Minkowski(3), [0.0, 0.0, 0.0]),
        (Schwarzschild(1.0), [0.0, 4.0, 1.0, 0.0]),
        (RoundSphere(1.5), [1.0, 0.3]),
        (EuclideanSpace(3), [0.0, 1.0, 2.0]),
        (ConstantMetric([[2.0, 0.3], [0.3, -1.0]]), [0.0, 0.0]),
    ],
)
def test_validate_metric_builtins(m, x):
    ok, worst = validate_metric(m, [np.array(x)])
    assert ok, worst


def test_constant_metric_rejects_wrong_signature():
    with pytest.raises(ConfigurationError):
        ConstantMetric([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigurationError):
        ConstantMetric([[-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigurationError):
        ConstantMetric([[1.0, 0.5], [0.4, -1.0]])


def test_uniform_field_sign_conventions():
    m, f = Minkowski(4), UniformField(4, E=1.5, B=0.5)
    F = f.field(np.zeros(4))
    assert F[0, 1] == 1.5 and F[1, 2] == 0.5
    Fh = raise_field(m, f, np.zeros(4))
    assert Fh[0, 1] == 1.5 and Fh[1, 0] == 1.5
    assert Fh[1, 2] == -0.5 and Fh[2, 1] == 0.5


@pytest.mark.parametrize(
    "f, x",
    [
        (UniformField(4, E=1.0, B=2.0), [0.1, 0.4, -0.3, 1.0]),
        (ConstantField([[0, 1, 2], [-1, 0, 3], [-2, -3, 0]]), [0.5, -1.0, 2.0]),
        (ConstantPotential([1.0, 2.0, 3.0]), [0.0, 0.0, 0.0]),
        (SpatialMagneticField(1.3), [0.2, 0.1, 0.0]),
        (MonopoleField(0.7, 2.0), [1.1, 0.4]),
    ],
)
def test_validate_field_builtins(f, x):
    ok, worst = validate_field(f, [np.array(x, dtype=float)])
    assert ok, worst


def test_validate_field_detects_open_two_form():
    class Open(UniformField):
        def field(self, x):
            F = np.zeros((4, 4))
            F[0, 1], F[1, 0] = x[2], -x[2]
            return F

    f = Open(4)
    f.has_potential = False
    ok, worst = validate_field(f, [np.array([0.0, 0.0, 1.0, 0.0])])
    assert not ok and worst["closedness"] > 0.5


def test_validate_field_detects_wrong_potential():
    class Wrong(UniformField):
        def potential(self, x):
            return np.zeros(4)

    ok, worst = validate_field(Wrong(4, E=1.0), [np.zeros(4)])
    assert not ok and worst["potential"] > 0.5


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=6, max_size=6))
def test_constant_field_closed_for_any_table(vals):
    F = np.zeros((4, 4))
    F[np.triu_indices(4, 1)] = vals
    f = ConstantField(F - F.T)
    assert np.max(np.abs(exterior_derivative_fd(f, np.array([0.3, -0.2, 0.1, 0.0])))) < 1e-9


def test_causal_character():
    m = Minkowski(4)
    x = np.zeros(4)
    c = causal_character(m, x, [1.0, 0.5, 0.0, 0.0])
    assert c.character is Character.TIMELIKE and c.orientation is Orientation.FUTURE
    c = causal_character(m, x, [-1.0, 1.0, 0.0, 0.0])
    assert c.character is Character.NULL and c.orientation is Orientation.PAST
    c = causal_character(m, x, [0.1, 1.0, 0.0, 0.0])
    assert c.character is Character.SPACELIKE and not c.causal


@settings(max_examples=60, deadline=None)
@given(st.floats(-2.5, 2.5), st.floats(-1.5, 1.5), st.floats(0.0, 6.2))
def test_orthonormal_frame_schwarzschild(logr, th_shift, ph):
    m = Schwarzschild(1.0)
    x = np.array([0.0, 2.0 + math.exp(logr + 1.0), 1.5707963 + 0.9 * th_shift, ph])
    E = orthonormal_frame(m, x)
    assert np.allclose(E.T @ m.metric(x) @ E, np.diag([1.0, -1, -1, -1]), atol=1e-12)
    assert E[0, 0] > 0


def test_proper_length_straight_segment():
    m = Minkowski(4)
    w = Worldline.straight([0, 0, 0, 0], [2.0, 1.0, 0.0, 0.0], samples=11)
    assert proper_length(m, w) == pytest.approx(math.sqrt(3.0), abs=1e-14)
    with pytest.raises(CausalityError):
        proper_length(m, Worldline.straight([0, 0, 0, 0], [1.0, 2.0, 0.0, 0.0]))


def test_as_event_rejects_bad_input():
    with pytest.raises(ValueError):
        as_event([0.0, math.nan])
    with pytest.raises(ValueError):
        as_event([0.0, 1.0], dimension=4)


@settings(max_examples=100, deadline=None)
@given(st.floats(2.5, 50.0), st.floats(0.05, 3.09), st.floats(-5.0, 5.0), st.floats(0.1, 3.0))
def test_metric_invariants_at_random_points(r, th, ph, mass):
    m = Schwarzschild(mass)
    x = np.array([0.0, mass * r, th, ph])
    ok, worst = validate_metric(m, [x])
    assert ok, worst
    s = RoundSphere(mass)
    ok, worst = validate_metric(s, [np.array([th, ph])])
    assert ok, worst


def test_null_segment_has_zero_length():
    w = Worldline.straight([0, 0, 0, 0], [1.0, 1.0, 0.0, 0.0], samples=5)
    assert proper_length(Minkowski(4), w) == 0.0


def test_proper_length_invariant_under_monotone_reparametrization():
    m = Minkowski(4)
    lam = np.linspace(0.0, 1.0, 2001)
    x = np.column_stack([2 * lam + 0.3 * lam**2, np.sin(lam), 0 * lam, 0 * lam])
    v = np.column_stack([2 + 0.6 * lam, np.cos(lam), 0 * lam, 0 * lam])
    base = proper_length(m, Worldline(lam, x, v))
    mu = np.linspace(0.0, 1.0, 1501)
    lam2 = mu**2 * (3 - 2 * mu) * 0.5 + 0.5 * mu
    dl = 3 * mu * (1 - mu) + 0.5
    x2 = np.column_stack([2 * lam2 + 0.3 * lam2**2, np.sin(lam2), 0 * mu, 0 * mu])
    v2 = np.column_stack([(2 + 0.6 * lam2) * dl, np.cos(lam2) * dl, 0 * mu, 0 * mu])
    assert proper_length(m, Worldline(mu, x2, v2)) == pytest.approx(base, abs=1e-9)
