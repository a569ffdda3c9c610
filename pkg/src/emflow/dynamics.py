"""Equations of motion, integration, reparametrization and q/m recovery.

Five systems share one integrator:

``lfe``        Lorentz force equation, proper-time parametrized
``efe``        electromagnetic flow equation ``D v = Q Fhat v`` (``Q = eps`` or any charge)
``cotangent``  the flow equation written on ``(x, p)`` with ``p = g v``
``twisted``    Hamiltonian flow of ``H = g^{ab} p_a p_b / 2`` for ``Omega + Q pi^* F``
``magnetic``   ``D_t v = (q/m) Fhat v`` on a Riemannian space, ``t`` external
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import DOP853, RK45, OdeSolution
from scipy.interpolate import CubicHermiteSpline, CubicSpline, PchipInterpolator, make_interp_spline
from scipy.spatial import cKDTree

from .errors import (
    CausalityError,
    ChartDomainError,
    ConfigurationError,
    IntegrationError,
    NotLFESolutionError,
)
from .geometry import TOL_NULL, as_event, norms

KERNEL_TOL = 1e-9
NORM_TOL = 1e-9


class ParamKind(enum.Enum):
    PROPER_TIME = "proper_time"
    AFFINE = "affine"
    GENERIC = "generic"


@dataclass(frozen=True, eq=False)
class Worldline:
    """Sampled curve ``lam -> x`` with tangents ``v = dx/dlam``.

    ``speed`` is the constant ``C = ds/dlam`` for affine parametrizations.
    Cotangent systems additionally store ``momenta``.
    """

    lam: np.ndarray
    x: np.ndarray
    v: np.ndarray
    param_kind: ParamKind = ParamKind.GENERIC
    speed: float | None = None
    momenta: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if lam.ndim != 1 or len(lam) < 2:
            raise ValueError("a worldline needs at least two samples")
        if x.shape != v.shape or x.shape[0] != len(lam):
            raise ValueError(f"inconsistent sample shapes {lam.shape}, {x.shape}, {v.shape}")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("parameter values must be strictly increasing")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        for arr in (lam, x, v):
            arr.flags.writeable = False

    @property
    def dimension(self):
        return self.x.shape[1]

    @property
    def span(self):
        return float(self.lam[-1] - self.lam[0])

    @property
    def start(self):
        return self.x[0]

    @property
    def end(self):
        return self.x[-1]

    def position(self, lam):
        """Cubic Hermite interpolation of the position (uses the tangents)."""
        return CubicHermiteSpline(self.lam, self.x, self.v, axis=0)(lam)

    @classmethod
    def straight(cls, x0, x1, samples=2, lam=(0.0, 1.0)):
        x0, x1 = as_event(x0), as_event(x1)
        grid = np.linspace(lam[0], lam[1], samples)
        tau = (grid - lam[0]) / (lam[1] - lam[0])
        x = x0 + np.outer(tau, x1 - x0)
        v = np.tile((x1 - x0) / (lam[1] - lam[0]), (samples, 1))
        return cls(grid, x, v)


@dataclass(frozen=True)
class ChargeToMass:
    """A real ratio ``q/m``, or the symbol R (``value is None``)."""

    value: float | None

    @property
    def is_symbol_r(self):
        return self.value is None

    def __str__(self):
        return "R" if self.value is None else repr(self.value)


SYMBOL_R = ChargeToMass(None)


@dataclass(frozen=True)
class CotangentState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", as_event(self.x))
        p = np.asarray(self.p, dtype=float)
        if p.shape != self.x.shape or not np.all(np.isfinite(p)):
            raise ConfigurationError("covector must be finite with one component per coordinate")
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class IntegratorConfig:
    """``method`` is ``"rk45"`` (default), ``"dop853"`` or fixed-step ``"rk4"``."""

    method: str = "rk45"
    rtol: float = 1e-10
    atol: float = 1e-10
    step: float = 1e-3
    max_steps: int = 1_000_000
    samples: int = 1001

    def __post_init__(self):
        if self.method not in ("rk45", "dop853", "rk4"):
            raise ConfigurationError(f"unknown integration method {self.method!r}")
        if not (self.rtol > 0 and self.atol > 0 and self.step > 0):
            raise ConfigurationError("tolerances and step must be positive")
        if self.max_steps < 1 or self.samples < 2:
            raise ConfigurationError("max_steps >= 1 and samples >= 2 required")


# --------------------------------------------------------------------------- right-hand sides


def _fhat(m, f, x):
    return m.inverse(x) @ f.field(x)


def geodesic_acceleration(m, x, v):
    return -np.einsum("mab,a,b->m", m.christoffel(x), v, v)


def lfe_rhs(m, f, ratio, x, u):
    """``dx = u``, ``du = -Gamma(u, u) + (q/m) Fhat u``."""
    return u, geodesic_acceleration(m, x, u) + ratio * (_fhat(m, f, x) @ u)


def efe_q_rhs(m, f, charge, x, v):
    """Flow equation with an arbitrary coefficient ``Q``; same algebra as :func:`lfe_rhs`."""
    return v, geodesic_acceleration(m, x, v) + charge * (_fhat(m, f, x) @ v)


def efe_rhs(m, f, eps, x, v):
    if eps not in (1, -1):
        raise ConfigurationError(f"eps must be +1 or -1, got {eps}")
    return efe_q_rhs(m, f, float(eps), x, v)


def cotangent_flow_rhs(m, f, eps, s):
    """``dx^a = p^a``, ``dp_m = Gamma^s_{mb} p_s p^b + eps F_{mn} p^n``."""
    x, p = s.x, s.p
    pup = m.inverse(x) @ p
    G = m.christoffel(x)
    dp = np.einsum("smb,s,b->m", G, p, pup) + eps * (f.field(x) @ pup)
    return pup, dp


def hamiltonian(m, s):
    return 0.5 * s.p @ m.inverse(s.x) @ s.p


def twisted_hamiltonian_rhs(m, f, charge, s):
    """Vector field ``X`` with ``i_X (Omega + Q pi^*F) = -dH``.

    ``dx^m = g^{mn} p_n``, ``dp_m = -d_m H + Q F_{mn} dx^n`` with
    ``-d_m H = 1/2 d_m g_ab p^a p^b``. Uses metric derivatives, not Christoffels.
    """
    x, p = s.x, s.p
    pup = m.inverse(x) @ p
    dp = 0.5 * np.einsum("cab,a,b->c", m.metric_derivative(x), pup, pup) + charge * (f.field(x) @ pup)
    return pup, dp


def magnetic_flow_rhs(space_metric, f, ratio, x, v):
    if not space_metric.riemannian:
        raise ConfigurationError("magnetic flow needs a positive-definite space metric")
    return v, geodesic_acceleration(space_metric, x, v) + ratio * (_fhat(space_metric, f, x) @ v)


# --------------------------------------------------------------------------- systems


@dataclass(frozen=True)
class LorentzForce:
    metric: object
    field: object
    ratio: float
    name = "lfe"
    cotangent = False

    def __call__(self, x, u):
        return lfe_rhs(self.metric, self.field, self.ratio, x, u)

    def params(self):
        return {"ratio": self.ratio}


@dataclass(frozen=True)
class FlowEquation:
    """``D v = charge * Fhat v``; ``charge = eps = +-1`` is the normalized form."""

    metric: object
    field: object
    charge: float = 1.0
    name = "efe"
    cotangent = False

    def __call__(self, x, v):
        return efe_q_rhs(self.metric, self.field, self.charge, x, v)

    def params(self):
        return {"charge": self.charge}


@dataclass(frozen=True)
class CotangentFlow:
    metric: object
    field: object
    eps: float = 1.0
    name = "cotangent"
    cotangent = True

    def __call__(self, x, p):
        return cotangent_flow_rhs(self.metric, self.field, self.eps, CotangentState(x, p))

    def params(self):
        return {"charge": self.eps}


@dataclass(frozen=True)
class TwistedHamiltonian:
    metric: object
    field: object
    charge: float = 1.0
    name = "twisted"
    cotangent = True

    def __call__(self, x, p):
        return twisted_hamiltonian_rhs(self.metric, self.field, self.charge, CotangentState(x, p))

    def params(self):
        return {"charge": self.charge}


@dataclass(frozen=True)
class MagneticFlow:
    metric: object
    field: object
    ratio: float
    name = "magnetic"
    cotangent = False

    def __post_init__(self):
        if not self.metric.riemannian:
            raise ConfigurationError("magnetic flow needs a positive-definite space metric")

    def __call__(self, x, v):
        return magnetic_flow_rhs(self.metric, self.field, self.ratio, x, v)

    def params(self):
        return {"ratio": self.ratio}


# --------------------------------------------------------------------------- integration


def _adaptive(fun, t0, y0, t1, cfg):
    cls = {"rk45": RK45, "dop853": DOP853}[cfg.method]
    solver = cls(fun, t0, y0, t1, rtol=cfg.rtol, atol=cfg.atol)
    ts, interps, error = [t0], [], None
    try:
        while solver.status == "running":
            if len(interps) >= cfg.max_steps:
                error = f"max_steps = {cfg.max_steps} exceeded at lambda = {solver.t:.6g}"
                break
            message = solver.step()
            if solver.status == "failed":
                error = f"step failure at lambda = {solver.t:.6g}: {message}"
                break
            if not np.all(np.isfinite(solver.y)):
                error = f"non-finite state at lambda = {solver.t:.6g}"
                break
            ts.append(solver.t)
            interps.append(solver.dense_output())
    except ChartDomainError as exc:
        error = f"left the chart domain after lambda = {ts[-1]:.6g}: {exc}"
    if not interps:
        return None, None, error or "no step taken"
    sol = OdeSolution(ts, interps)
    grid = np.linspace(t0, ts[-1], cfg.samples)
    y = sol(grid).T
    y[0] = y0
    return grid, y, error


def _rk4(fun, t0, y0, t1, cfg):
    steps = max(1, math.ceil((t1 - t0) / cfg.step - 1e-12))
    if steps > cfg.max_steps:
        return None, None, f"max_steps = {cfg.max_steps} smaller than {steps} fixed steps"
    h = (t1 - t0) / steps
    grid = t0 + h * np.arange(steps + 1)
    grid[-1] = t1
    ys = np.empty((steps + 1, len(y0)))
    ys[0] = y0
    y = np.array(y0, dtype=float)
    try:
        for i in range(steps):
            t = grid[i]
            k1 = fun(t, y)
            k2 = fun(t + h / 2, y + h / 2 * k1)
            k3 = fun(t + h / 2, y + h / 2 * k2)
            k4 = fun(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise FloatingPointError(f"non-finite state at lambda = {grid[i + 1]:.6g}")
            ys[i + 1] = y
    except (ChartDomainError, FloatingPointError) as exc:
        if i == 0:
            return None, None, str(exc)
        return grid[: i + 1], ys[: i + 1], str(exc)
    return grid, ys, None


def integrate(system, init, span, cfg=None):
    """Integrate ``system`` from ``init`` over ``span = (lam0, lam1)``.

    ``init`` is ``(x0, v0)`` for tangent systems and a :class:`CotangentState`
    (or ``(x0, p0)``) for cotangent systems. Returns a :class:`Worldline` on a
    uniform grid of ``cfg.samples`` points (step points for ``rk4``).
    """
    cfg = cfg or IntegratorConfig()
    lam0, lam1 = float(span[0]), float(span[1])
    if not lam1 > lam0:
        raise ConfigurationError("integration range must satisfy lam1 > lam0")
    if isinstance(init, CotangentState):
        x0, w0 = init.x, init.p
    else:
        x0, w0 = as_event(init[0]), np.asarray(init[1], dtype=float)
    m = system.metric
    if x0.size != m.dimension or w0.shape != x0.shape:
        raise ConfigurationError("initial state does not match the chart dimension")
    m.check_domain(x0)
    n = x0.size

    def fun(_, y):
        dx, dw = system(y[:n], y[n:])
        return np.concatenate([dx, dw])

    y0 = np.concatenate([x0, w0])
    runner = _rk4 if cfg.method == "rk4" else _adaptive
    grid, ys, error = runner(fun, lam0, y0, lam1, cfg)
    if grid is None:
        raise IntegrationError(f"{system.name}: {error}", partial=None)
    w = _assemble(system, grid, ys, cfg)
    if error is not None:
        raise IntegrationError(f"{system.name}: {error}", partial=w)
    return w


def _assemble(system, grid, ys, cfg):
    m = system.metric
    n = m.dimension
    x, w = ys[:, :n], ys[:, n:]
    momenta = None
    if system.cotangent:
        momenta = w
        v = np.array([m.inverse(xi) @ pi for xi, pi in zip(x, w)])
    else:
        v = w
    sq = norms(m, x, v)
    drift = float(np.max(np.abs(sq - sq[0])))
    meta = {
        "system": system.name,
        "parameters": system.params(),
        "method": cfg.method,
        "rtol": cfg.rtol,
        "atol": cfg.atol,
        "initial_norm": float(sq[0]),
        "norm_drift": drift,
        "relative_norm_drift": drift / abs(sq[0]) if sq[0] != 0 else drift,
    }
    if system.name == "twisted":
        H = np.array([0.5 * pi @ m.inverse(xi) @ pi for xi, pi in zip(x, w)])
        meta["hamiltonian_drift"] = float(np.max(np.abs(H - H[0])))
    kind, speed = ParamKind.GENERIC, None
    if not m.riemannian:
        if system.name == "lfe" and abs(sq[0] - 1.0) <= NORM_TOL and v[0, 0] > 0:
            kind = ParamKind.PROPER_TIME
        elif system.name in ("efe", "cotangent", "twisted") and sq[0] > TOL_NULL:
            kind, speed = ParamKind.AFFINE, float(np.sqrt(sq[0]))
    return Worldline(grid, x, v, kind, speed, momenta, meta)


# --------------------------------------------------------------------------- curve calculus


def smooth_derivative(lam, values):
    """Derivative at the samples of a quintic interpolating spline (cubic below six samples)."""
    k = 5 if len(lam) >= 6 else min(3, len(lam) - 1)
    return make_interp_spline(lam, values, k=k, axis=0)(lam, 1)


def tangent_rate(w):
    """``dv/dlam`` at the samples, differentiating the stored tangents."""
    return smooth_derivative(w.lam, w.v)


def covariant_rate(m, w):
    """``D_lam v = dv/dlam + Gamma(v, v)`` at the samples."""
    dv = tangent_rate(w)
    gam = np.array([np.einsum("mab,a,b->m", m.christoffel(x), v, v) for x, v in zip(w.x, w.v)])
    return dv + gam


def _proper_terms(m, f, w):
    """Proper-time acceleration ``a = D_s u`` and field term ``b = Fhat u`` per sample."""
    sq = norms(m, w.x, w.v)
    if np.any(sq <= TOL_NULL):
        i = int(np.argmax(sq <= TOL_NULL))
        raise CausalityError(f"tangent at sample {i} is not timelike (g(v,v) = {sq[i]:.3e})")
    Dv = covariant_rate(m, w)
    gvDv = np.array([v @ m.metric(x) @ d for x, v, d in zip(w.x, w.v, Dv)])
    a = Dv / sq[:, None] - w.v * (gvDv / sq**2)[:, None]
    u = w.v / np.sqrt(sq)[:, None]
    b = np.array([_fhat(m, f, x) @ ui for x, ui in zip(w.x, u)])
    return a, b


def lfe_residual(m, f, w, ratio):
    """``max_i |D_s u - (q/m) Fhat u|`` (chart Euclidean norm), any parametrization."""
    a, b = _proper_terms(m, f, w)
    return float(np.max(np.linalg.norm(a - ratio * b, axis=1)))


def efe_residual(m, f, w, charge):
    """``max_i |D_lam v - Q Fhat v|`` in the worldline's own parameter."""
    Dv = covariant_rate(m, w)
    fv = np.array([_fhat(m, f, x) @ v for x, v in zip(w.x, w.v)])
    return float(np.max(np.linalg.norm(Dv - charge * fv, axis=1)))


def recover_charge_to_mass(m, f, w, kernel_tol=KERNEL_TOL, fit_tol=1e-4):
    """Infer ``q/m`` from a timelike trajectory.

    Returns ``(ChargeToMass, residual)``. The ratio is the least-squares
    scalar ``k`` minimizing ``sum |a - k b|^2`` where ``a = D_s u`` and
    ``b = Fhat u`` at every sample; the symbol R is returned when both
    vanish along the whole curve. The residual is relative to the larger
    of ``|a|`` and ``|b|``.
    """
    a, b = _proper_terms(m, f, w)
    if np.max(np.linalg.norm(b, axis=1)) < kernel_tol and np.max(np.linalg.norm(a, axis=1)) < kernel_tol:
        return SYMBOL_R, 0.0
    bb = float(np.sum(b * b))
    if bb == 0.0:
        raise NotLFESolutionError("accelerated curve with vanishing field term", None, math.inf)
    k = float(np.sum(a * b)) / bb
    res = math.sqrt(float(np.sum((a - k * b) ** 2)))
    scale = max(math.sqrt(float(np.sum(a * a))), math.sqrt(bb))
    rel = res / scale
    if rel > fit_tol:
        raise NotLFESolutionError(
            f"no single q/m fits the acceleration (relative residual {rel:.3e} > {fit_tol:.1e})", k, rel
        )
    return ChargeToMass(k), rel


# --------------------------------------------------------------------------- reparametrization


def reparametrize_proper_time(m, w, samples=None):
    """Resample ``w`` uniformly in proper time starting at ``s = 0``."""
    sq = norms(m, w.x, w.v)
    if np.any(sq <= TOL_NULL):
        i = int(np.argmax(sq <= TOL_NULL))
        raise CausalityError(f"cannot use proper time: sample {i} is not timelike")
    sigma = np.sqrt(sq)
    s = CubicSpline(w.lam, sigma).antiderivative()(w.lam)
    s -= s[0]
    if np.any(np.diff(s) <= 0):
        raise CausalityError("arc length is not strictly increasing")
    samples = samples or len(w.lam)
    s_grid = np.linspace(0.0, s[-1], samples)
    lam_s = PchipInterpolator(s, w.lam)(s_grid)
    lam_s[0], lam_s[-1] = w.lam[0], w.lam[-1]
    x = CubicHermiteSpline(w.lam, w.x, w.v, axis=0)(lam_s)
    v = CubicSpline(w.lam, w.v, axis=0)(lam_s)
    u = v / np.sqrt(norms(m, x, v))[:, None]
    meta = dict(w.metadata, reparametrized_from=w.param_kind.value)
    return Worldline(s_grid, x, u, ParamKind.PROPER_TIME, 1.0, None, meta)


def affine_reparametrize(w, scale, lam0=None, charge=None):
    """``lam' = lam0 + scale (lam - lam[0])``; tangents divide by ``scale``."""
    if not scale > 0:
        raise ConfigurationError("reparametrization scale must be positive")
    lam0 = w.lam[0] if lam0 is None else lam0
    speed = None if w.speed is None else w.speed / scale
    kind = w.param_kind
    if kind is ParamKind.PROPER_TIME and scale != 1.0:
        kind = ParamKind.AFFINE
    meta = dict(w.metadata)
    if charge is not None:
        meta["parameters"] = dict(meta.get("parameters", {}), charge=charge)
    momenta = None if w.momenta is None else w.momenta / scale
    return Worldline(lam0 + scale * (w.lam - w.lam[0]), w.x, w.v / scale, kind, speed, momenta, meta)


def lfe_to_efe(w, ratio, charge):
    """Reparametrize a proper-time LFE solution by ``dlam = (q/m)/Q ds``.

    The result solves the flow equation with coefficient ``charge``.
    """
    if ratio == 0 or np.sign(ratio) != np.sign(charge):
        raise ConfigurationError("q/m and Q must be nonzero with the same sign")
    out = affine_reparametrize(w, ratio / charge, charge=charge)
    return replace(out, param_kind=ParamKind.AFFINE, speed=charge / ratio)


def efe_rescale(w, new_charge, charge=None):
    """Map a solution of ``D v = Q Fhat v`` to one with ``Q -> Q'``.

    The new curve is ``lam -> x((Q'/Q) lam)``: same image, tangents scaled
    by ``Q'/Q``.
    """
    if charge is None:
        try:
            charge = w.metadata["parameters"]["charge"]
        except KeyError:
            raise ConfigurationError("worldline does not record its flow coefficient") from None
    if charge == 0 or new_charge == 0 or np.sign(charge) != np.sign(new_charge):
        raise ConfigurationError("Q and Q' must be nonzero with the same sign")
    return affine_reparametrize(w, charge / new_charge, charge=new_charge)


# --------------------------------------------------------------------------- comparisons


def pointwise_separation(w1, w2):
    """Max chart distance between the curves at equal parameter values of ``w1``."""
    lo, hi = max(w1.lam[0], w2.lam[0]), min(w1.lam[-1], w2.lam[-1])
    mask = (w1.lam >= lo - 1e-12) & (w1.lam <= hi + 1e-12)
    lam = np.clip(w1.lam[mask], w2.lam[0], w2.lam[-1])
    return float(np.max(np.linalg.norm(w1.x[mask] - w2.position(lam), axis=1)))


def _to_polyline(points, verts):
    """Distance from each point to the polyline through ``verts``.

    Only the two segments adjacent to the nearest vertex are examined, which
    is exact for curves sampled finely relative to their curvature.
    """
    _, idx = cKDTree(verts).query(points)
    best = np.linalg.norm(points - verts[idx], axis=1)
    for lo in (idx - 1, idx):
        ok = (lo >= 0) & (lo < len(verts) - 1)
        a = verts[np.clip(lo, 0, len(verts) - 2)]
        d = verts[np.clip(lo + 1, 1, len(verts) - 1)] - a
        t = np.clip(np.einsum("ij,ij->i", points - a, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-300), 0, 1)
        dist = np.linalg.norm(points - a - t[:, None] * d, axis=1)
        best = np.where(ok, np.minimum(best, dist), best)
    return best


def image_distance(w1, w2):
    """Symmetric Hausdorff distance between the images (samples against polylines)."""
    return float(max(np.max(_to_polyline(w1.x, w2.x)), np.max(_to_polyline(w2.x, w1.x))))


def crossing_times(w, component, level=0.0, direction=1):
    """Parameter values where ``x[component]`` crosses ``level`` (``direction`` = +1 up, -1 down)."""
    spline = CubicHermiteSpline(w.lam, w.x[:, component] - level, w.v[:, component])
    roots = spline.roots(extrapolate=False)
    slope = spline(roots, 1)
    keep = slope * direction > 0
    return np.unique(roots[keep])

