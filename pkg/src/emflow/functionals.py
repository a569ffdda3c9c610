"""Discrete actions on polylines and their extremization.

Every functional is a sum over segments evaluated with the midpoint rule:

``I  = sum sqrt(g(d, d)) + (q/m) omega[d]``
``J  = sum k g(d, d) / dlam + Q omega[d]``    (``k = 1/2``; ``k = 1`` for J-tilde)
``K  = (sum sqrt(g(d, d)))**2 / 2 + beta sum omega[d]``

with ``d = x_{i+1} - x_i`` and ``g``, ``omega`` taken at the segment midpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dynamics import ParamKind, Worldline, recover_charge_to_mass, smooth_derivative
from .errors import CausalityError, ConfigurationError, StuckError
from .geometry import TOL_NULL, as_event, proper_length

DEFAULT_NODES = 200


@dataclass(frozen=True, eq=False)
class PolylineCurve:
    """Nodes ``x_0 .. x_N`` on a parameter grid ``lam_0 .. lam_N``; endpoints fixed."""

    nodes: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        lam = np.array(self.lam, dtype=float)
        if nodes.ndim != 2 or nodes.shape[0] < 3 or nodes.shape[0] != lam.size:
            raise ConfigurationError("a polyline needs >= 3 nodes and one grid value per node")
        if np.any(np.diff(lam) <= 0):
            raise ConfigurationError("parameter grid must be strictly increasing")
        if not np.all(np.isfinite(nodes)):
            raise ConfigurationError("polyline nodes must be finite")
        nodes.flags.writeable = False
        lam.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def straight(cls, x0, x1, nodes=DEFAULT_NODES, lam=(0.0, 1.0)):
        x0, x1 = as_event(x0), as_event(x1)
        grid = np.linspace(lam[0], lam[1], nodes)
        tau = (grid - lam[0]) / (lam[1] - lam[0])
        return cls(x0 + np.outer(tau, x1 - x0), grid)

    @classmethod
    def from_worldline(cls, w, nodes=DEFAULT_NODES):
        """Sample a worldline at ``nodes`` parameter values, uniform in its parameter."""
        grid = np.linspace(w.lam[0], w.lam[-1], nodes)
        return cls(w.position(grid), grid)

    @property
    def dimension(self):
        return self.nodes.shape[1]

    @property
    def endpoints(self):
        return self.nodes[0], self.nodes[-1]

    def with_nodes(self, nodes):
        return PolylineCurve(nodes, self.lam)

    def relabel(self, lam):
        """Same nodes on another parameter grid."""
        return PolylineCurve(self.nodes, lam)

    def to_worldline(self):
        """Tangents from a quintic spline through the nodes."""
        return Worldline(self.lam, self.nodes, smooth_derivative(self.lam, self.nodes), ParamKind.GENERIC)


@dataclass
class ActionReport:
    which: str
    value: float
    parameters: dict
    gradient_norm: float
    constraint_diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "which": self.which,
            "value": self.value,
            "parameters": dict(self.parameters),
            "gradient_norm": self.gradient_norm,
            "constraint_diagnostics": dict(self.constraint_diagnostics),
        }


# --------------------------------------------------------------------------- segment terms


def _stack(fn, pts):
    return np.array([fn(p) for p in pts])


def _segment_terms(m, f, a, b, dlam, need_potential):
    """Per-segment ``length``, ``energy = g(d,d)/dlam``, ``omega = omega[d]`` and ``g(d,d)``."""
    d = b - a
    mid = 0.5 * (a + b)
    G = _stack(m.metric, mid)
    gdd = np.einsum("sab,sa,sb->s", G, d, d)
    terms = {
        "gdd": gdd,
        "length": np.sqrt(np.clip(gdd, 0.0, None)),
        "energy": gdd / dlam,
    }
    if need_potential:
        terms["omega"] = np.einsum("sa,sa->s", _stack(f.potential, mid), d)
    else:
        terms["omega"] = np.zeros(len(d))
    return terms


class _Functional:
    uses_length = False

    def value(self, tot):
        raise NotImplementedError

    def delta(self, tot, d):
        """``value(tot + d) - value(tot)`` without cancellation against ``tot``."""
        raise NotImplementedError


class _ActionI(_Functional):
    uses_length = True

    def __init__(self, ratio):
        self.ratio = ratio

    def value(self, tot):
        return tot["length"] + self.ratio * tot["omega"]

    def delta(self, tot, d):
        return d["length"] + self.ratio * d["omega"]


class _ActionJ(_Functional):
    def __init__(self, charge, half):
        self.charge = charge
        self.k = 0.5 if half else 1.0

    def value(self, tot):
        return self.k * tot["energy"] + self.charge * tot["omega"]

    def delta(self, tot, d):
        return self.k * d["energy"] + self.charge * d["omega"]


class _ActionK(_Functional):
    uses_length = True

    def __init__(self, beta):
        self.beta = beta

    def value(self, tot):
        return 0.5 * tot["length"] ** 2 + self.beta * tot["omega"]

    def delta(self, tot, d):
        return d["length"] * (tot["length"] + 0.5 * d["length"]) + self.beta * d["omega"]


def _check_causal(terms, curve):
    bad = terms["gdd"] < -TOL_NULL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise CausalityError(f"segment {i} of the curve is spacelike (g(d,d) = {terms['gdd'][i]:.3e})")
    past = np.diff(curve.nodes[:, 0]) < 0
    if np.any(past):
        raise CausalityError(f"segment {int(np.argmax(past))} is past-directed")


_KEYS = ("length", "energy", "omega")


def fd_gradient(m, f, curve, functional, need_potential=True, rel_step=1e-6):
    """Central finite-difference gradient with respect to every interior node coordinate.

    Moving node ``i`` only touches segments ``i - 1`` and ``i``; the change in
    the totals is assembled from those two segments.
    """
    nodes, lam = curve.nodes, curve.lam
    dl = np.diff(lam)
    base = _segment_terms(m, f, nodes[:-1], nodes[1:], dl, need_potential)
    tot = {k: float(np.sum(base[k])) for k in _KEYS}
    local_old = {k: base[k][:-1] + base[k][1:] for k in _KEYS}
    inner = nodes[1:-1]
    grad = np.empty_like(inner)
    for c in range(curve.dimension):
        h = rel_step * (1.0 + np.abs(inner[:, c]))
        out = []
        for sign in (1.0, -1.0):
            pert = inner.copy()
            pert[:, c] += sign * h
            left = _segment_terms(m, f, nodes[:-2], pert, dl[:-1], need_potential)
            right = _segment_terms(m, f, pert, nodes[2:], dl[1:], need_potential)
            d = {k: left[k] + right[k] - local_old[k] for k in _KEYS}
            out.append(functional.delta(tot, d))
        grad[:, c] = (out[0] - out[1]) / (2 * h)
    return grad


def _report(m, f, curve, functional, which, params, need_potential, causal):
    dl = np.diff(curve.lam)
    terms = _segment_terms(m, f, curve.nodes[:-1], curve.nodes[1:], dl, need_potential)
    if causal:
        _check_causal(terms, curve)
    tot = {k: float(np.sum(terms[k])) for k in _KEYS}
    grad = fd_gradient(m, f, curve, functional, need_potential)
    return ActionReport(
        which=which,
        value=float(functional.value(tot)),
        parameters=params,
        gradient_norm=float(np.max(np.abs(grad))),
        constraint_diagnostics={"length": tot["length"], "omega_integral": tot["omega"]},
    )


def _require_potential(f):
    if not f.has_potential:
        raise ConfigurationError("this functional needs a potential one-form omega")


def action_I(m, f, ratio, curve):
    """Charged-particle action ``int(ds + (q/m) omega)`` on a causal polyline."""
    _require_potential(f)
    return _report(m, f, curve, _ActionI(ratio), "I", {"ratio": ratio}, True, True)


def action_J(m, f, charge, curve, half=True):
    """Energy-type action over the curve's parameter grid; ``half=False`` gives J-tilde."""
    _require_potential(f)
    dlam = float(curve.lam[-1] - curve.lam[0])
    which = "J" if half else "Jtilde"
    params = {"charge": charge, "dlambda": dlam, "beta": charge * dlam}
    return _report(m, f, curve, _ActionJ(charge, half), which, params, True, False)


def action_K(m, f, beta, curve):
    """Parametrization-free ``(int ds)^2 / 2 + beta int omega``."""
    _require_potential(f)
    return _report(m, f, curve, _ActionK(beta), "K", {"beta": beta}, True, True)


# --------------------------------------------------------------------------- extremization


def _j_gradient(m, f, nodes, lam, charge, k):
    """Exact gradient of the discrete J with respect to the interior nodes."""
    a, b = nodes[:-1], nodes[1:]
    d = b - a
    h = np.diff(lam)
    mid = 0.5 * (a + b)
    G = _stack(m.metric, mid)
    dG = _stack(m.metric_derivative, mid)
    W = _stack(f.potential, mid)
    dW = _stack(f.potential_derivative, mid)
    gd = np.einsum("sab,sb->sa", G, d)
    common = 0.5 * (k * np.einsum("scab,sa,sb->sc", dG, d, d) / h[:, None] + charge * np.einsum("sca,sa->sc", dW, d))
    flux = 2 * k * gd / h[:, None] + charge * W
    # node i is the end of segment i-1 and the start of segment i
    return (flux[:-1] + common[:-1]) + (-flux[1:] + common[1:])


def _j_hessian(m, f, nodes, lam, charge, k, grad0, rel_step=1e-7):
    """Block-tridiagonal Hessian by forward differences of the exact gradient.

    Nodes are perturbed three colours at a time: a gradient entry only sees
    its own node and the two neighbours.
    """
    n_in, n = nodes.shape[0] - 2, nodes.shape[1]
    rows, cols, vals = [], [], []
    idx = np.arange(n_in)
    for colour in range(3):
        sel = idx[idx % 3 == colour]
        if sel.size == 0:
            continue
        for c in range(n):
            pert = nodes.copy()
            h = rel_step * (1.0 + np.abs(pert[sel + 1, c]))
            pert[sel + 1, c] += h
            dg = (_j_gradient(m, f, pert, lam, charge, k) - grad0)
            for j, hj in zip(sel, h):
                for i in (j - 1, j, j + 1):
                    if 0 <= i < n_in:
                        rows.extend(i * n + np.arange(n))
                        cols.extend([j * n + c] * n)
                        vals.extend(dg[i] / hj)
    size = n_in * n
    H = sp.csc_matrix((vals, (rows, cols)), shape=(size, size))
    return 0.5 * (H + H.T)


def _causal_ok(m, nodes):
    d = np.diff(nodes, axis=0)
    if np.any(d[:, 0] <= 0):
        return False
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    try:
        G = _stack(m.metric, mid)
    except Exception:
        return False
    return bool(np.all(np.einsum("sab,sa,sb->s", G, d, d) > TOL_NULL))


@dataclass
class Extremal:
    curve: PolylineCurve
    report: ActionReport
    converged: bool
    iterations: int
    gradient_history: list


def extremize_J(m, f, charge, x0, x1, lam=(0.0, 1.0), nodes=DEFAULT_NODES, init=None, half=True,
                g_tol=1e-9, max_iter=50):
    """Find a timelike stationary point of the discrete J (or J-tilde).

    Damped Newton iteration on the exact discrete gradient with a finite
    difference Hessian. J is indefinite on timelike curves, so plain descent
    would run away along the concave directions; Newton targets the critical
    point directly. Each step is halved until every segment is timelike and
    future-directed and the gradient max-norm decreases.
    """
    _require_potential(f)
    x0, x1 = as_event(x0, m.dimension), as_event(x1, m.dimension)
    if init is None:
        init = PolylineCurve.straight(x0, x1, nodes, lam)
    if not (np.allclose(init.nodes[0], x0) and np.allclose(init.nodes[-1], x1)):
        raise ConfigurationError("initial curve does not connect the endpoints")
    grid = init.lam
    k = 0.5 if half else 1.0
    cur = np.array(init.nodes)
    if not _causal_ok(m, cur):
        raise CausalityError("initial curve is not timelike future-directed")
    n_in, n = cur.shape[0] - 2, cur.shape[1]
    g = _j_gradient(m, f, cur, grid, charge, k)
    gnorm = float(np.max(np.abs(g)))
    history = [gnorm]
    it = 0
    while gnorm > g_tol and it < max_iter:
        it += 1
        H = _j_hessian(m, f, cur, grid, charge, k, g)
        step = -spla.spsolve(H, g.ravel()).reshape(n_in, n)
        alpha, accepted = 1.0, False
        while alpha > 1e-10:
            trial = cur.copy()
            trial[1:-1] += alpha * step
            if _causal_ok(m, trial):
                gt = _j_gradient(m, f, trial, grid, charge, k)
                gt_norm = float(np.max(np.abs(gt)))
                if gt_norm < gnorm * (1 - 1e-4 * alpha) or gt_norm <= g_tol:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            raise StuckError(
                f"no causal step reduces the gradient (|grad| = {gnorm:.3e}, iteration {it})",
                curve=PolylineCurve(cur, grid),
                gradient_norm=gnorm,
            )
        cur, g, gnorm = trial, gt, gt_norm
        history.append(gnorm)
    curve = PolylineCurve(cur, grid)
    report = action_J(m, f, charge, curve, half)
    return Extremal(curve, report, gnorm <= g_tol, it, history)


# --------------------------------------------------------------------------- constraint checks


@dataclass
class NeoReport:
    ratio: object
    length: float
    beta: float
    product: float | None
    abs_error: float
    rel_error: float
    kernel_degenerate: bool
    fit_residual: float


def check_neo(m, f, curve, charge, dlambda, fit_tol=1e-3):
    """Compare ``(q/m) * int ds`` of an extremal with ``beta = Q dlambda``.

    ``curve`` may be a :class:`PolylineCurve` or a :class:`Worldline`.
    """
    w = curve.to_worldline() if isinstance(curve, PolylineCurve) else curve
    beta = charge * dlambda
    ratio, residual = recover_charge_to_mass(m, f, w, fit_tol=fit_tol)
    length = proper_length(m, w)
    if ratio.is_symbol_r:
        return NeoReport(ratio, length, beta, None, 0.0, 0.0, True, residual)
    product = ratio.value * length
    err = abs(product - beta)
    rel = err / abs(beta) if beta != 0 else err
    return NeoReport(ratio, length, beta, product, err, rel, False, residual)


def charge_bound(beta, l_est):
    """``|beta| / l``: lower bound on ``|q/m|`` for stationary points with parameter ``beta``.

    ``l_est`` should be the Lorentzian distance between the endpoints (or an
    estimate of it); with a lower estimate the returned value is an upper
    bound on the true bound.
    """
    if not l_est > 0:
        raise CausalityError("endpoints are not chronologically related at the available resolution")
    return abs(beta) / l_est


def lorentzian_interval(m, x0, x1):
    """Length of the straight coordinate chord; the Lorentzian distance in flat charts."""
    d = as_event(x1) - as_event(x0)
    gdd = d @ m.metric(0.5 * (as_event(x0) + as_event(x1))) @ d
    return math.sqrt(gdd) if gdd > 0 else 0.0
