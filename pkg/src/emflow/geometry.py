"""Charts, metrics, electromagnetic two-forms and causal bookkeeping.

Conventions used throughout the package:

* signature ``(+, -, ..., -)``, ``c = 1``, coordinate 0 is the time function
  on every built-in Lorentzian chart;
* ``F = d(omega)`` with ``F[a, b] = d_a omega_b - d_b omega_a``;
* ``Fhat[m, n] = g^{m a} F[a, n]`` (left index raised).

With the action ``I = int(ds + (q/m) omega)`` these conventions give the
equation of motion ``D_s u = (q/m) Fhat u``. In the uniform electric scene
(``omega = -E x dt``) a positive charge starting at rest accelerates towards
``+x``.

Events are plain float arrays of chart coordinates; :func:`as_event`
validates them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson, trapezoid

from .errors import CausalityError, ChartDomainError, ConfigurationError

TOL_NULL = 1e-9


def fd_step(x):
    """Central-difference step used for every finite-difference stencil."""
    return 1e-5 * (1.0 + np.abs(x))


def as_event(x, dimension=None):
    """Return ``x`` as a finite float array of chart coordinates."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ConfigurationError(f"an event needs n >= 2 coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"event has non-finite coordinates: {arr}")
    if dimension is not None and arr.size != dimension:
        raise ConfigurationError(f"event has {arr.size} coordinates, chart has {dimension}")
    return arr


# --------------------------------------------------------------------------- metrics


class MetricModel:
    """A metric on a coordinate chart.

    Subclasses implement :meth:`metric` and may override :meth:`christoffel`,
    :meth:`metric_derivative` and :meth:`domain_margin` with closed forms. The
    defaults fall back on central finite differences of :meth:`metric`.
    """

    dimension: int
    riemannian = False
    name = "metric"

    def metric(self, x):
        raise NotImplementedError

    def inverse(self, x):
        return np.linalg.inv(self.metric(x))

    def metric_derivative(self, x):
        """``dg[c, a, b] = d_c g_ab``."""
        return metric_derivative_fd(self, x)

    def christoffel(self, x):
        """``gamma[m, a, b]`` for the Levi-Civita connection."""
        return christoffel_from_derivative(self.inverse(x), self.metric_derivative(x))

    def domain_margin(self, x):
        """Positive inside the chart domain, non-positive outside."""
        return np.inf

    def check_domain(self, x):
        if not self.domain_margin(x) > 0:
            raise ChartDomainError(f"{self.name}: point {np.asarray(x)} is outside the chart domain")

    def params(self):
        return {}


def metric_derivative_fd(m, x):
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.empty((n, n, n))
    for c in range(n):
        h = fd_step(x[c])
        xp, xm = x.copy(), x.copy()
        xp[c] += h
        xm[c] -= h
        out[c] = (m.metric(xp) - m.metric(xm)) / (2 * h)
    return out


def christoffel_from_derivative(ginv, dg):
    # lowered[s, a, b] = 1/2 (d_a g_sb + d_b g_sa - d_s g_ab)
    lowered = 0.5 * (np.einsum("asb->sab", dg) + np.einsum("bsa->sab", dg) - dg)
    return np.einsum("ms,sab->mab", ginv, lowered)


def christoffel_fd(m, x):
    """Christoffel symbols from finite differences of ``m.metric`` only."""
    return christoffel_from_derivative(np.linalg.inv(m.metric(x)), metric_derivative_fd(m, x))


class Minkowski(MetricModel):
    name = "minkowski"

    def __init__(self, dimension=4):
        if dimension < 2:
            raise ConfigurationError("Minkowski space needs dimension >= 2")
        self.dimension = int(dimension)
        self._eta = np.diag([1.0] + [-1.0] * (self.dimension - 1))
        self._eta.flags.writeable = False

    def metric(self, x):
        return self._eta

    def inverse(self, x):
        return self._eta

    def metric_derivative(self, x):
        return np.zeros((self.dimension,) * 3)

    def christoffel(self, x):
        return np.zeros((self.dimension,) * 3)

    def params(self):
        return {"dimension": self.dimension}


class Schwarzschild(MetricModel):
    """Exterior Schwarzschild chart ``(t, r, theta, phi)``, valid for ``r > 2M``."""

    name = "schwarzschild"
    dimension = 4

    def __init__(self, mass=1.0):
        if not mass > 0:
            raise ConfigurationError("Schwarzschild mass must be positive")
        self.mass = float(mass)

    def domain_margin(self, x):
        return min(x[1] - 2 * self.mass, np.sin(x[2]))

    def metric(self, x):
        self.check_domain(x)
        r, th = x[1], x[2]
        f = 1 - 2 * self.mass / r
        return np.diag([f, -1 / f, -r * r, -(r * np.sin(th)) ** 2])

    def inverse(self, x):
        self.check_domain(x)
        r, th = x[1], x[2]
        f = 1 - 2 * self.mass / r
        return np.diag([1 / f, -f, -1 / (r * r), -1 / (r * np.sin(th)) ** 2])

    def metric_derivative(self, x):
        self.check_domain(x)
        M, r, th = self.mass, x[1], x[2]
        f = 1 - 2 * M / r
        s, c = np.sin(th), np.cos(th)
        dg = np.zeros((4, 4, 4))
        dg[1, 0, 0] = 2 * M / r**2
        dg[1, 1, 1] = (2 * M / r**2) / f**2
        dg[1, 2, 2] = -2 * r
        dg[1, 3, 3] = -2 * r * s * s
        dg[2, 3, 3] = -2 * r * r * s * c
        return dg

    def christoffel(self, x):
        self.check_domain(x)
        M, r, th = self.mass, x[1], x[2]
        f = 1 - 2 * M / r
        s, c = np.sin(th), np.cos(th)
        G = np.zeros((4, 4, 4))
        G[0, 0, 1] = G[0, 1, 0] = M / (r * r * f)
        G[1, 0, 0] = M * f / (r * r)
        G[1, 1, 1] = -M / (r * r * f)
        G[1, 2, 2] = -r * f
        G[1, 3, 3] = -r * f * s * s
        G[2, 1, 2] = G[2, 2, 1] = 1 / r
        G[2, 3, 3] = -s * c
        G[3, 1, 3] = G[3, 3, 1] = 1 / r
        G[3, 2, 3] = G[3, 3, 2] = c / s
        return G

    def params(self):
        return {"mass": self.mass}


class ConstantMetric(MetricModel):
    """User-supplied constant coefficient table ``g_ab``."""

    name = "constant"

    def __init__(self, table, riemannian=False):
        g = np.array(table, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 2:
            raise ConfigurationError("metric table must be a square n x n matrix, n >= 2")
        if not np.allclose(g, g.T, rtol=0, atol=1e-14):
            raise ConfigurationError("metric table is not symmetric")
        eig = np.linalg.eigvalsh(g)
        n_pos = int(np.sum(eig > 0))
        if riemannian and n_pos != len(eig):
            raise ConfigurationError("Riemannian metric table must be positive definite")
        if not riemannian and (n_pos != 1 or np.any(np.abs(eig) < 1e-14)):
            raise ConfigurationError("metric table must have signature (+,-,...,-)")
        if not riemannian and not g[0, 0] > 0:
            raise ConfigurationError("coordinate 0 must be a time coordinate (g_00 > 0)")
        self.dimension = g.shape[0]
        self.riemannian = riemannian
        self._g = g
        self._ginv = np.linalg.inv(g)
        self._g.flags.writeable = False

    def metric(self, x):
        return self._g

    def inverse(self, x):
        return self._ginv

    def metric_derivative(self, x):
        return np.zeros((self.dimension,) * 3)

    def christoffel(self, x):
        return np.zeros((self.dimension,) * 3)

    def params(self):
        return {"table": self._g.tolist()}


class EuclideanSpace(ConstantMetric):
    """Flat Riemannian space, the arena of the non-relativistic magnetic flow."""

    name = "euclidean"

    def __init__(self, dimension=3):
        super().__init__(np.eye(dimension), riemannian=True)

    def params(self):
        return {"dimension": self.dimension}


class RoundSphere(MetricModel):
    """Two-sphere of radius ``R`` in ``(theta, phi)``; a curved Riemannian space."""

    name = "sphere"
    dimension = 2
    riemannian = True

    def __init__(self, radius=1.0):
        if not radius > 0:
            raise ConfigurationError("sphere radius must be positive")
        self.radius = float(radius)

    def domain_margin(self, x):
        return np.sin(x[0])

    def metric(self, x):
        self.check_domain(x)
        R2 = self.radius**2
        return np.diag([R2, R2 * np.sin(x[0]) ** 2])

    def metric_derivative(self, x):
        self.check_domain(x)
        dg = np.zeros((2, 2, 2))
        dg[0, 1, 1] = 2 * self.radius**2 * np.sin(x[0]) * np.cos(x[0])
        return dg

    def christoffel(self, x):
        self.check_domain(x)
        s, c = np.sin(x[0]), np.cos(x[0])
        G = np.zeros((2, 2, 2))
        G[0, 1, 1] = -s * c
        G[1, 0, 1] = G[1, 1, 0] = c / s
        return G

    def params(self):
        return {"radius": self.radius}


# --------------------------------------------------------------------------- fields


class FieldModel:
    """A closed two-form ``F`` on a chart, optionally with a potential."""

    dimension: int
    has_potential = True
    name = "field"

    def field(self, x):
        raise NotImplementedError

    def potential(self, x):
        raise ConfigurationError(f"field '{self.name}' has no potential one-form")

    def potential_derivative(self, x):
        """``dw[c, a] = d_c omega_a``."""
        x = np.asarray(x, dtype=float)
        n = x.size
        out = np.empty((n, n))
        for c in range(n):
            h = fd_step(x[c])
            xp, xm = x.copy(), x.copy()
            xp[c] += h
            xm[c] -= h
            out[c] = (self.potential(xp) - self.potential(xm)) / (2 * h)
        return out

    def params(self):
        return {}


class ZeroField(FieldModel):
    name = "zero"

    def __init__(self, dimension=4):
        self.dimension = int(dimension)

    def field(self, x):
        return np.zeros((self.dimension, self.dimension))

    def potential(self, x):
        return np.zeros(self.dimension)

    def potential_derivative(self, x):
        return np.zeros((self.dimension, self.dimension))

    def params(self):
        return {"dimension": self.dimension}


class UniformField(FieldModel):
    """Uniform E along x and B along z in Minkowski coordinates.

    ``F_tx = E``, ``F_xy = B`` with potential ``omega = -E x dt + B x dy``.
    """

    name = "uniform"

    def __init__(self, dimension=4, E=0.0, B=0.0):
        self.dimension = int(dimension)
        self.E = float(E)
        self.B = float(B)
        if self.B != 0.0 and self.dimension < 3:
            raise ConfigurationError("a magnetic component needs dimension >= 3")
        F = np.zeros((self.dimension, self.dimension))
        F[0, 1], F[1, 0] = self.E, -self.E
        if self.dimension >= 3:
            F[1, 2], F[2, 1] = self.B, -self.B
        self._F = F
        dw = np.zeros((self.dimension, self.dimension))
        dw[1, 0] = -self.E
        if self.dimension >= 3:
            dw[1, 2] = self.B
        self._dw = dw

    def field(self, x):
        return self._F

    def potential(self, x):
        w = np.zeros(self.dimension)
        w[0] = -self.E * x[1]
        if self.dimension >= 3:
            w[2] = self.B * x[1]
        return w

    def potential_derivative(self, x):
        return self._dw

    def params(self):
        return {"dimension": self.dimension, "E": self.E, "B": self.B}


class ConstantPotential(FieldModel):
    """A constant one-form ``omega``; exact, so ``F = 0``."""

    name = "constant_potential"

    def __init__(self, components):
        self._w = np.array(components, dtype=float)
        self.dimension = self._w.size

    def field(self, x):
        return np.zeros((self.dimension, self.dimension))

    def potential(self, x):
        return self._w.copy()

    def potential_derivative(self, x):
        return np.zeros((self.dimension, self.dimension))

    def params(self):
        return {"components": self._w.tolist()}


class ConstantField(FieldModel):
    """User-supplied constant ``F_ab`` table in the symmetric gauge
    ``omega_a = -1/2 F_ab x^b``."""

    name = "constant"

    def __init__(self, table):
        F = np.array(table, dtype=float)
        if F.ndim != 2 or F.shape[0] != F.shape[1]:
            raise ConfigurationError("field table must be square")
        if not np.allclose(F, -F.T, rtol=0, atol=1e-14):
            raise ConfigurationError("field table is not antisymmetric")
        self.dimension = F.shape[0]
        self._F = F

    def field(self, x):
        return self._F

    def potential(self, x):
        return -0.5 * self._F @ np.asarray(x, dtype=float)

    def potential_derivative(self, x):
        return -0.5 * self._F.T

    def params(self):
        return {"table": self._F.tolist()}


class SpatialMagneticField(FieldModel):
    """Uniform magnetic field along the third axis of Euclidean space:
    ``F_xy = B``, ``omega = B x dy``."""

    name = "magnetic"

    def __init__(self, B=1.0, dimension=3):
        self.dimension = int(dimension)
        self.B = float(B)
        F = np.zeros((self.dimension, self.dimension))
        F[0, 1], F[1, 0] = self.B, -self.B
        self._F = F

    def field(self, x):
        return self._F

    def potential(self, x):
        w = np.zeros(self.dimension)
        w[1] = self.B * x[0]
        return w

    def potential_derivative(self, x):
        dw = np.zeros((self.dimension, self.dimension))
        dw[0, 1] = self.B
        return dw

    def params(self):
        return {"dimension": self.dimension, "B": self.B}


class MonopoleField(FieldModel):
    """``F = B R^2 sin(theta) dtheta ^ dphi`` on the round sphere,
    potential ``omega = -B R^2 cos(theta) dphi``."""

    name = "monopole"
    dimension = 2

    def __init__(self, B=1.0, radius=1.0):
        self.B = float(B)
        self.radius = float(radius)

    def field(self, x):
        k = self.B * self.radius**2 * np.sin(x[0])
        return np.array([[0.0, k], [-k, 0.0]])

    def potential(self, x):
        return np.array([0.0, -self.B * self.radius**2 * np.cos(x[0])])

    def params(self):
        return {"B": self.B, "radius": self.radius}


# --------------------------------------------------------------------------- operations


def _check(m, x):
    x = as_event(x, m.dimension)
    m.check_domain(x)
    return x


def metric_at(m, x):
    return m.metric(_check(m, x))


def inverse_metric_at(m, x):
    return m.inverse(_check(m, x))


def christoffel_at(m, x):
    return m.christoffel(_check(m, x))


def raise_field(m, f, x):
    """Mixed tensor ``Fhat[mu, nu] = g^{mu a} F_{a nu}``."""
    x = _check(m, x)
    if f.dimension != m.dimension:
        raise ConfigurationError(f"field dimension {f.dimension} != metric dimension {m.dimension}")
    return m.inverse(x) @ f.field(x)


class Character(enum.Enum):
    TIMELIKE = "timelike"
    NULL = "null"
    SPACELIKE = "spacelike"


class Orientation(enum.Enum):
    FUTURE = "future"
    PAST = "past"
    NA = "n/a"


@dataclass(frozen=True)
class CausalClass:
    character: Character
    orientation: Orientation

    @property
    def causal(self):
        return self.character is not Character.SPACELIKE


def causal_character(m, x, v, tol_null=TOL_NULL):
    v = np.asarray(v, dtype=float)
    gvv = float(v @ metric_at(m, x) @ v)
    if gvv > tol_null:
        char = Character.TIMELIKE
    elif abs(gvv) <= tol_null:
        char = Character.NULL
    else:
        return CausalClass(Character.SPACELIKE, Orientation.NA)
    if v[0] > 0:
        orient = Orientation.FUTURE
    elif v[0] < 0:
        orient = Orientation.PAST
    else:
        orient = Orientation.NA
    return CausalClass(char, orient)


def norms(m, xs, vs):
    """``g(v_i, v_i)`` at every sample."""
    return np.array([v @ m.metric(x) @ v for x, v in zip(xs, vs)])


def proper_length(m, w, tol_null=TOL_NULL):
    """Proper length of a sampled curve ``w`` (anything with ``lam, x, v``).

    The speed ``sqrt(g(v, v))`` is integrated with Simpson's rule over the
    samples (trapezoid for two samples).
    """
    sq = norms(m, w.x, w.v)
    bad = sq < -tol_null
    if np.any(bad):
        i = int(np.argmax(bad))
        raise CausalityError(f"spacelike tangent at sample {i} (g(v,v) = {sq[i]:.3e})")
    speed = np.sqrt(np.clip(sq, 0.0, None))
    if len(speed) < 3:
        return float(trapezoid(speed, w.lam))
    return float(simpson(speed, x=w.lam))


# --------------------------------------------------------------------------- validation


def validate_metric(m, points, tol_inverse=1e-10, tol_christoffel=1e-6):
    """Check the metric invariants at ``points``; returns worst-case diagnostics."""
    worst = {"inverse": 0.0, "symmetry": 0.0, "christoffel_fd": 0.0, "christoffel_symmetry": 0.0}
    for x in points:
        x = _check(m, x)
        g = m.metric(x)
        worst["symmetry"] = max(worst["symmetry"], float(np.max(np.abs(g - g.T))))
        worst["inverse"] = max(
            worst["inverse"], float(np.max(np.abs(m.inverse(x) @ g - np.eye(m.dimension))))
        )
        eig = np.linalg.eigvalsh(g)
        n_pos = int(np.sum(eig > 0))
        expected = m.dimension if m.riemannian else 1
        if n_pos != expected or np.any(eig == 0):
            raise ConfigurationError(f"{m.name}: wrong signature at {x}: eigenvalues {eig}")
        G = m.christoffel(x)
        worst["christoffel_symmetry"] = max(
            worst["christoffel_symmetry"], float(np.max(np.abs(G - G.transpose(0, 2, 1))))
        )
        worst["christoffel_fd"] = max(
            worst["christoffel_fd"], float(np.max(np.abs(G - christoffel_fd(m, x))))
        )
    ok = (
        worst["inverse"] <= tol_inverse
        and worst["symmetry"] == 0.0
        and worst["christoffel_fd"] <= tol_christoffel
        and worst["christoffel_symmetry"] <= 1e-14
    )
    return ok, worst


def exterior_derivative_fd(f, x):
    """``(dF)_abc = d_a F_bc + d_b F_ca + d_c F_ab`` by central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    dF = np.empty((n, n, n))
    for c in range(n):
        h = fd_step(x[c])
        xp, xm = x.copy(), x.copy()
        xp[c] += h
        xm[c] -= h
        dF[c] = (f.field(xp) - f.field(xm)) / (2 * h)
    return dF + np.einsum("bca->abc", dF) + np.einsum("cab->abc", dF)


def potential_curl_fd(f, x):
    """``(d omega)_ab`` from central differences of ``f.potential``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    dw = np.empty((n, n))
    for c in range(n):
        h = fd_step(x[c])
        xp, xm = x.copy(), x.copy()
        xp[c] += h
        xm[c] -= h
        dw[c] = (f.potential(xp) - f.potential(xm)) / (2 * h)
    return dw - dw.T


def validate_field(f, points, tol=1e-6):
    """Antisymmetry, closedness and (if claimed) ``F = d omega`` at ``points``."""
    worst = {"antisymmetry": 0.0, "closedness": 0.0, "potential": 0.0}
    for x in points:
        x = as_event(x, f.dimension)
        F = f.field(x)
        worst["antisymmetry"] = max(worst["antisymmetry"], float(np.max(np.abs(F + F.T))))
        worst["closedness"] = max(worst["closedness"], float(np.max(np.abs(exterior_derivative_fd(f, x)))))
        if f.has_potential:
            worst["potential"] = max(worst["potential"], float(np.max(np.abs(potential_curl_fd(f, x) - F))))
    ok = worst["antisymmetry"] == 0.0 and worst["closedness"] <= tol and worst["potential"] <= tol
    return ok, worst


def orthonormal_frame(m, x):
    """Columns ``e_a`` with ``g(e_a, e_b) = diag(1, -1, ..., -1)``, ``e_0`` future.

    Gram-Schmidt on the coordinate basis; requires ``d/dx^0`` to be timelike.
    """
    g = metric_at(m, x)
    n = m.dimension
    if not g[0, 0] > 0:
        raise ConfigurationError("coordinate basis vector 0 is not timelike at this point")
    eta = np.array([1.0] + [-1.0] * (n - 1))
    frame = np.zeros((n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = 1.0
        for b in range(a):
            e = e - eta[b] * (frame[:, b] @ g @ e) * frame[:, b]
        nrm = e @ g @ e
        if eta[a] * nrm <= 0:
            raise ConfigurationError("degenerate frame construction")
        frame[:, a] = e / np.sqrt(abs(nrm))
    return frame
