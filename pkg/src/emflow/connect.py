"""Two-point connection problems by shooting.

Unknowns live on the future unit hyperboloid of the initial event, written
in a rapidity-vector chart of an orthonormal frame: ``w`` in R^{n-1} maps to
``U = (cosh|w|, sinh|w| w/|w|)``. The mass shell ``g(u, u) = 1`` therefore
holds by construction. The last unknown is ``log`` of the proper-time span
(Lorentz force problem) or of the speed ``C`` (flow problem, unit span).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    FlowEquation,
    IntegratorConfig,
    LorentzForce,
    image_distance,
    integrate,
    lfe_to_efe,
    efe_residual,
    recover_charge_to_mass,
)
from .errors import (
    ConfigurationError,
    EmflowError,
    IntegrationError,
    NotConnectedError,
    NotLFESolutionError,
    ShootError,
)
from .geometry import as_event, orthonormal_frame, proper_length

MAX_RAPIDITY = 15.0


@dataclass(frozen=True)
class ConnectionProblem:
    """Connect ``x0`` to ``x1``; ``kind`` is ``"lfe"`` (uses ``ratio``) or ``"efe"`` (uses ``charge``)."""

    metric: object
    field: object
    x0: np.ndarray
    x1: np.ndarray
    kind: str = "lfe"
    ratio: float = 0.0
    charge: float = 1.0
    bvp_tol: float | None = None
    max_iter: int = 60
    restarts: int = 8
    seed: int = 0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        n = self.metric.dimension
        object.__setattr__(self, "x0", as_event(self.x0, n))
        object.__setattr__(self, "x1", as_event(self.x1, n))
        if self.kind not in ("lfe", "efe"):
            raise ConfigurationError(f"unknown connection kind {self.kind!r}")
        if np.array_equal(self.x0, self.x1):
            raise ConfigurationError("endpoints must differ")
        self.metric.check_domain(self.x0)
        self.metric.check_domain(self.x1)
        if self.bvp_tol is None:
            flat = getattr(self.metric, "name", "") in ("minkowski", "constant")
            object.__setattr__(self, "bvp_tol", 1e-8 if flat else 1e-6)


@dataclass(frozen=True)
class ShootingVariables:
    """Rapidity vector ``direction`` (n - 1 reals), proper-time ``span`` and flow ``speed``."""

    direction: np.ndarray
    span: float = 1.0
    speed: float = 1.0

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.direction, dtype=float))
        object.__setattr__(self, "direction", d)
        if not (self.span > 0 and self.speed > 0):
            raise ConfigurationError("span and speed must be positive")
        if not np.all(np.isfinite(d)):
            raise ConfigurationError("non-finite rapidity")


def hyperboloid_point(direction):
    """Frame components of the unit future vector with rapidity vector ``direction``."""
    w = np.asarray(direction, dtype=float)
    r = float(np.linalg.norm(w))
    sinhc = math.sinh(r) / r if r > 1e-8 else 1.0 + r * r / 6.0
    return np.concatenate([[math.cosh(r)], sinhc * w])


def initial_velocity(m, x0, direction):
    return orthonormal_frame(m, x0) @ hyperboloid_point(direction)


def rapidity_of(m, x0, u):
    """Inverse of :func:`initial_velocity` for a future timelike ``u`` (normalized first)."""
    frame = orthonormal_frame(m, x0)
    U = np.linalg.solve(frame, np.asarray(u, dtype=float))
    U = U / math.sqrt(U[0] ** 2 - U[1:] @ U[1:])
    sp = float(np.linalg.norm(U[1:]))
    if sp == 0:
        return np.zeros(len(U) - 1)
    return math.asinh(sp) * U[1:] / sp


def _system(p):
    if p.kind == "lfe":
        return LorentzForce(p.metric, p.field, p.ratio)
    return FlowEquation(p.metric, p.field, p.charge)


def shoot(p, v, cfg=None):
    """Integrate from ``x0`` with the velocity encoded by ``v``; return ``(miss, worldline)``."""
    cfg = cfg or p.integrator
    u = initial_velocity(p.metric, p.x0, v.direction)
    if p.kind == "lfe":
        init, span = (p.x0, u), (0.0, v.span)
    else:
        init, span = (p.x0, v.speed * u), (0.0, 1.0)
    try:
        w = integrate(_system(p), init, span, cfg)
    except IntegrationError as exc:
        raise ShootError(str(exc), partial=exc.partial) from exc
    except EmflowError as exc:
        raise ShootError(str(exc)) from exc
    return w.end - p.x1, w


@dataclass
class ConnectionResult:
    problem: ConnectionProblem
    converged: bool
    worldline: object
    variables: ShootingVariables | None
    miss_norm: float
    iterations: int
    restarts_used: int
    message: str = ""

    @property
    def proper_length(self):
        if self.worldline is None:
            return math.nan
        return proper_length(self.problem.metric, self.worldline)


def _to_vars(p, z):
    if p.kind == "lfe":
        return ShootingVariables(z[:-1], span=math.exp(z[-1]))
    return ShootingVariables(z[:-1], speed=math.exp(z[-1]))


def _from_vars(p, v):
    last = v.span if p.kind == "lfe" else v.speed
    return np.concatenate([v.direction, [math.log(last)]])


def geodesic_guess(p):
    """Shooting variables of the straight chord from ``x0`` to ``x1`` in the frame at ``x0``."""
    d = p.x1 - p.x0
    frame = orthonormal_frame(p.metric, p.x0)
    D = np.linalg.solve(frame, d)
    interval = D[0] ** 2 - D[1:] @ D[1:]
    if D[0] > 0 and interval > 0:
        s = math.sqrt(interval)
        direction = rapidity_of(p.metric, p.x0, d)
    else:
        s = max(abs(D[0]), 1e-3)
        direction = np.zeros(p.metric.dimension - 1)
    if p.kind == "lfe":
        return ShootingVariables(direction, span=s)
    return ShootingVariables(direction, speed=s)


def _residual(p, z, cfg):
    if np.linalg.norm(z[:-1]) > MAX_RAPIDITY or abs(z[-1]) > 30:
        return None
    try:
        miss, _ = shoot(p, _to_vars(p, z), cfg)
    except ShootError:
        return None
    return miss if np.all(np.isfinite(miss)) else None


def _newton(p, z, cfg):
    F = _residual(p, z, cfg)
    if F is None:
        return z, math.inf, 0
    fn = float(np.linalg.norm(F))
    it = 0
    while fn >= p.bvp_tol and it < p.max_iter:
        it += 1
        J = np.empty((len(F), len(z)))
        for j in range(len(z)):
            h = 1e-6 * max(1.0, abs(z[j]))
            zj = z.copy()
            zj[j] += h
            Fj = _residual(p, zj, cfg)
            if Fj is None:
                zj[j] -= 2 * h
                Fj = _residual(p, zj, cfg)
                if Fj is None:
                    return z, fn, it
                h = -h
            J[:, j] = (Fj - F) / h
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        norm = float(np.linalg.norm(step))
        if norm > 2.0:
            step *= 2.0 / norm
        alpha = 1.0
        while alpha > 1e-6:
            zt = z + alpha * step
            Ft = _residual(p, zt, cfg)
            if Ft is not None and np.linalg.norm(Ft) < (1 - 1e-4 * alpha) * fn:
                break
            alpha *= 0.5
        else:
            return z, fn, it
        z, F, fn = zt, Ft, float(np.linalg.norm(Ft))
    return z, fn, it


def _solve(p, guess=None):
    shoot_cfg = replace(p.integrator, samples=2)
    base = guess or geodesic_guess(p)
    z0 = _from_vars(p, base)
    rng = np.random.default_rng(p.seed)
    best = (z0, math.inf, 0)
    total_it = 0
    for attempt in range(p.restarts + 1):
        if attempt == 0:
            start = z0
        else:
            start = z0 + rng.normal(scale=0.3, size=z0.size)
        z, fn, it = _newton(p, start, shoot_cfg)
        total_it += it
        if fn < best[1]:
            best = (z, fn, attempt)
        if fn < p.bvp_tol:
            break
    z, fn, attempt = best
    if not math.isfinite(fn):
        return ConnectionResult(p, False, None, None, fn, total_it, attempt, "every shooting evaluation failed")
    v = _to_vars(p, z)
    try:
        miss, w = shoot(p, v)
    except ShootError as exc:
        return ConnectionResult(p, False, exc.partial, v, fn, total_it, attempt, str(exc))
    fn = float(np.linalg.norm(miss))
    ok = fn < p.bvp_tol
    msg = "converged" if ok else f"no connecting solution found (best miss {fn:.3e})"
    return ConnectionResult(p, ok, w, v, fn, total_it, attempt, msg)


def solve_connection_lfe(p, guess=None):
    """Lorentz force connection with the prescribed ``p.ratio`` (problem B)."""
    if p.kind != "lfe":
        raise ConfigurationError("problem kind must be 'lfe'")
    return _solve(p, guess)


def solve_connection_efe(p, guess=None):
    """Any connecting solution of ``D v = Q Fhat v`` on a unit parameter span (problem A).

    The induced charge-to-mass ratio is ``Q / C`` with ``C`` the result's speed.
    """
    if p.kind != "efe":
        raise ConfigurationError("problem kind must be 'efe'")
    return _solve(p, guess)


# --------------------------------------------------------------------------- scans


@dataclass
class ScanEntry:
    ratio: float
    result: ConnectionResult
    proper_length: float
    action_I: float
    recovered: object = None
    efe_residual: float = math.nan


@dataclass
class ScanResult:
    entries: list
    separations: np.ndarray

    @property
    def successes(self):
        return sum(e.result.converged for e in self.entries)

    def min_separation(self):
        n = len(self.entries)
        off = [self.separations[i, j] for i in range(n) for j in range(i + 1, n)]
        return min(off) if off else math.inf


def _entry(metric, field, x0, x1, ratio, guess, cfg, seed, bvp_tol):
    from .functionals import PolylineCurve, action_I

    p = ConnectionProblem(metric, field, x0, x1, "lfe", ratio=ratio, seed=seed, integrator=cfg, bvp_tol=bvp_tol)
    res = solve_connection_lfe(p, guess)
    if not res.converged:
        return ScanEntry(ratio, res, math.nan, math.nan)
    w = res.worldline
    length = proper_length(metric, w)
    try:
        act = action_I(metric, field, ratio, PolylineCurve.from_worldline(w)).value if field.has_potential else math.nan
    except EmflowError:
        act = math.nan
    try:
        rec, _ = recover_charge_to_mass(metric, field, w)
    except NotLFESolutionError:
        rec = None
    eres = math.nan
    if ratio != 0:
        charge = math.copysign(1.0, ratio)
        eres = efe_residual(metric, field, lfe_to_efe(w, ratio, charge), charge)
    return ScanEntry(ratio, res, length, act, rec, eres)


def _chunk(args):
    metric, field, x0, x1, ratios, cfg, seed, bvp_tol = args
    out, guess = [], None
    for r in ratios:
        e = _entry(metric, field, x0, x1, r, guess, cfg, seed, bvp_tol)
        if e.result.converged:
            guess = e.result.variables
        out.append(e)
    return out


def scan_charge_to_mass(metric, field, x0, x1, grid, cfg=None, seed=0, workers=1, bvp_tol=None,
                        chunk=16):
    """Solve the Lorentz force connection problem for every ratio in ``grid``.

    The grid is cut into contiguous chunks of ``chunk`` ratios; inside a chunk
    each entry is warm-started from the previous converged one. Chunks are
    independent jobs, so the output does not depend on ``workers`` and keeps
    grid order.
    """
    cfg = cfg or IntegratorConfig()
    grid = [float(r) for r in grid]
    if not grid:
        raise ConfigurationError("empty ratio grid")
    chunks = [grid[i:i + chunk] for i in range(0, len(grid), chunk)]
    jobs = [(metric, field, x0, x1, c, cfg, seed, bvp_tol) for c in chunks]
    workers = max(1, min(int(workers), len(jobs)))
    if workers == 1:
        entries = [e for job in jobs for e in _chunk(job)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = [e for part in pool.map(_chunk, jobs) for e in part]
    n = len(entries)
    sep = np.full((n, n), np.nan)
    for i in range(n):
        sep[i, i] = 0.0
        for j in range(i + 1, n):
            wi, wj = entries[i].result.worldline, entries[j].result.worldline
            if entries[i].result.converged and entries[j].result.converged:
                sep[i, j] = sep[j, i] = image_distance(wi, wj)
    return ScanResult(entries, sep)


@dataclass
class DistanceEstimate:
    lower_bound: float
    witness: object
    lengths: list


def lorentzian_distance_estimate(metric, field, x0, x1, ratios=(), cfg=None, seed=0):
    """Largest proper length among connecting curves found (a lower bound for ``l``).

    Always includes the geodesic (``q/m = 0``) connection attempt.
    """
    grid = [0.0] + [float(r) for r in ratios if r != 0.0]
    scan = scan_charge_to_mass(metric, field, x0, x1, grid, cfg, seed)
    found = [(e.proper_length, e.result.worldline) for e in scan.entries if e.result.converged]
    if not found:
        raise NotConnectedError("no connecting curve found; the distance is unknown")
    best = max(found, key=lambda t: t[0])
    return DistanceEstimate(best[0], best[1], [t[0] for t in found])
