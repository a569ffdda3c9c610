"""``emflow`` command line: integrate, connect, scan, action, check.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Output files go to ``--out``, else ``$EMFLOW_OUTPUT_DIR``, else the
current directory.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as eio
from .connect import (
    ConnectionProblem,
    NotConnectedError,
    lorentzian_distance_estimate,
    scan_charge_to_mass,
    solve_connection_efe,
    solve_connection_lfe,
)
from .dynamics import (
    CotangentFlow,
    CotangentState,
    FlowEquation,
    LorentzForce,
    MagneticFlow,
    TwistedHamiltonian,
    Worldline,
    integrate,
    lfe_residual,
    recover_charge_to_mass,
)
from .errors import CausalityError, ChartDomainError, ConfigurationError, EmflowError, NotLFESolutionError
from .functionals import (
    PolylineCurve,
    action_I,
    action_J,
    action_K,
    charge_bound,
    check_neo,
    extremize_J,
    lorentzian_interval,
)
from .geometry import metric_at, proper_length
from .scene import load_scene, parse_grid

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
OUTPUT_ENV = "EMFLOW_OUTPUT_DIR"


class NumericalFailure(Exception):
    pass


def _out_dir(args):
    d = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _stem(args, cmd):
    return f"{cmd}_{Path(args.scene).stem}"


def _opt(args, scene, name, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return scene.run.get(name, default)


def _write(args, cmd, suffix, text):
    path = _out_dir(args) / f"{_stem(args, cmd)}.{suffix}"
    path.write_text(text)
    return path


# --------------------------------------------------------------------------- integrate


def _initial_state(scene, system):
    n = scene.dimension
    if scene.initial is not None:
        x, v = scene.initial
    else:
        x = scene.events.get("x0", np.zeros(n))
        v = np.zeros(n)
        v[0] = 1.0
    if system == "lfe" and not scene.metric.riemannian:
        g = v @ metric_at(scene.metric, x) @ v
        if not g > 0:
            raise CausalityError("initial velocity is not timelike; the Lorentz force equation needs g(u,u) = 1")
        v = v / math.sqrt(g)
    return np.asarray(x, dtype=float), np.asarray(v, dtype=float)


def _system(scene, name, args):
    m, f = scene.metric, scene.field
    qm = _opt(args, scene, "qm", 0.0)
    charge = _opt(args, scene, "charge", 1.0)
    eps = _opt(args, scene, "eps", 1)
    if name == "lfe":
        return LorentzForce(m, f, qm)
    if name == "efe":
        return FlowEquation(m, f, charge)
    if name == "cotangent":
        return CotangentFlow(m, f, eps)
    if name == "twisted":
        return TwistedHamiltonian(m, f, charge)
    return MagneticFlow(m, f, qm)


def cmd_integrate(args, scene):
    system = _system(scene, args.system, args)
    if system.cotangent != (args.system in ("cotangent", "twisted")):
        raise ConfigurationError("inconsistent system selection")
    x, v = _initial_state(scene, args.system)
    init = CotangentState(x, metric_at(scene.metric, x) @ v) if system.cotangent else (x, v)
    span = _opt(args, scene, "span", 1.0)
    cfg = scene.integrator(method=args.method)
    try:
        w = integrate(system, init, (0.0, span), cfg)
        failure = None
    except EmflowError as exc:
        w, failure = getattr(exc, "partial", None), exc
    if w is not None:
        _write(args, "integrate", "csv", eio.worldline_csv(scene.metric, w))
        _write(args, "integrate", "json", eio.dumps(eio.worldline_dict(w)))
    if failure is not None:
        raise NumericalFailure(f"integration failed: {failure}")
    meta = w.metadata
    print(f"system={args.system} span={span:.9g} samples={len(w.lam)}")
    print("endpoint=" + " ".join(eio.fmt_csv(a) for a in w.end))
    print(f"norm_drift={meta['norm_drift']:.3e} relative_norm_drift={meta['relative_norm_drift']:.3e}")
    if "hamiltonian_drift" in meta:
        print(f"hamiltonian_drift={meta['hamiltonian_drift']:.3e}")
    return EXIT_OK


# --------------------------------------------------------------------------- connect


def _problem(scene, args, kind, **extra):
    opts = {
        "bvp_tol": _opt(args, scene, "bvp_tol"),
        "max_iter": _opt(args, scene, "max_iter", 60),
        "restarts": _opt(args, scene, "restarts", 8),
    }
    return ConnectionProblem(
        scene.metric, scene.field, scene.event("x0"), scene.event("x1"), kind,
        seed=scene.seed, integrator=scene.integrator(), **opts, **extra,
    )


def cmd_connect(args, scene):
    if args.kind == "lfe":
        p = _problem(scene, args, "lfe", ratio=_opt(args, scene, "qm", 0.0))
        res = solve_connection_lfe(p)
    else:
        charge = float(_opt(args, scene, "eps", 1)) if args.eps is not None else _opt(args, scene, "charge", 1.0)
        p = _problem(scene, args, "efe", charge=charge)
        res = solve_connection_efe(p)
    report = {
        "kind": args.kind,
        "converged": res.converged,
        "miss_norm": res.miss_norm,
        "iterations": res.iterations,
        "restarts_used": res.restarts_used,
        "message": res.message,
    }
    if res.converged:
        w = res.worldline
        report["proper_length"] = proper_length(scene.metric, w)
        if args.kind == "efe":
            report["speed"] = res.variables.speed
            report["induced_qm"] = p.charge / res.variables.speed
        try:
            rec, resid = recover_charge_to_mass(scene.metric, scene.field, w)
            report["recovered_qm"] = rec.value
            report["kernel_degenerate"] = rec.is_symbol_r
        except NotLFESolutionError as exc:
            report["recovered_qm"] = None
            report["recovery_error"] = str(exc)
        report["trajectory"] = eio.worldline_dict(w)
        _write(args, "connect", "csv", eio.worldline_csv(scene.metric, w))
    _write(args, "connect", "json", eio.dumps(report))
    print(f"kind={args.kind} converged={res.converged} miss={res.miss_norm:.3e} iterations={res.iterations}")
    if res.converged:
        print(f"proper_length={report['proper_length']:.12g}")
        if args.kind == "efe":
            print(f"speed={report['speed']:.12g} induced_qm={report['induced_qm']:.12g}")
        if report.get("recovered_qm") is not None:
            print(f"recovered_qm={report['recovered_qm']:.12g}")
        return EXIT_OK
    raise NumericalFailure(res.message)


# --------------------------------------------------------------------------- scan


def cmd_scan(args, scene):
    text = args.qm_grid or scene.run.get("qm_grid")
    if text is None:
        raise ConfigurationError("no ratio grid: pass --qm-grid a:b:steps or set run.qm_grid")
    grid = parse_grid(text)
    workers = args.workers or os.cpu_count() or 1
    scan = scan_charge_to_mass(
        scene.metric, scene.field, scene.event("x0"), scene.event("x1"), grid,
        scene.integrator(), scene.seed, workers, _opt(args, scene, "bvp_tol"),
    )
    _write(args, "scan", "csv", eio.scan_csv(scan))
    _write(args, "scan", "json", eio.dumps(eio.scan_dict(scan, args.trajectories)))
    lengths = [e.proper_length for e in scan.entries if e.result.converged]
    summary = f"successes={scan.successes}/{len(grid)}"
    if lengths:
        summary += f" min_proper_length={min(lengths):.9g} max_proper_length={max(lengths):.9g}"
        if len(lengths) > 1:
            summary += f" min_image_separation={scan.min_separation():.3e}"
    print(summary)
    return EXIT_OK if scan.successes == len(grid) else EXIT_NUMERIC


# --------------------------------------------------------------------------- action


def _curve_from_file(path, nodes):
    lam, x, v = eio.read_worldline_csv(path)
    return PolylineCurve.from_worldline(Worldline(lam, x, v), nodes)


def cmd_action(args, scene):
    m, f = scene.metric, scene.field
    which = args.which
    nodes = _opt(args, scene, "nodes", 200)
    charge = _opt(args, scene, "charge", 1.0)
    dlambda = _opt(args, scene, "dlambda", 1.0)
    half = which != "Jtilde"
    extra = {}
    if args.extremize:
        if which not in ("J", "Jtilde"):
            raise ConfigurationError("--extremize is available for J and Jtilde only")
        x0, x1 = scene.event("x0"), scene.event("x1")
        ext = extremize_J(m, f, charge, x0, x1, (0.0, dlambda), nodes, half=half)
        if not ext.converged:
            raise NumericalFailure(f"extremization stopped at |grad| = {ext.gradient_history[-1]:.3e}")
        report = ext.report
        # the unhalved energy term doubles the kinetic weight: effective charge Q/2
        effective = charge if half else 0.5 * charge
        neo = check_neo(m, f, ext.curve, effective, dlambda)
        l_est = lorentzian_interval(m, x0, x1) if m.name in ("minkowski", "constant") else None
        extra = {
            "iterations": ext.iterations,
            "recovered_qm": neo.ratio.value,
            "proper_length": neo.length,
            "effective_charge": effective,
            "beta": neo.beta,
            "neo_relative_error": neo.rel_error,
            "kernel_degenerate": neo.kernel_degenerate,
        }
        print(f"{report.which} extremal: iterations={ext.iterations} gradient_norm={report.gradient_norm:.3e}")
        if neo.kernel_degenerate:
            print("recovered_qm=R (kernel case)")
        else:
            print(f"recovered_qm={neo.ratio.value:.12g} proper_length={neo.length:.12g}")
            print(f"neo: (q/m)*length={neo.product:.12g} beta={neo.beta:.12g} relative_error={neo.rel_error:.3e}")
        if l_est:
            bound = charge_bound(neo.beta, l_est)
            extra["distance"] = l_est
            extra["bound"] = bound
            if not neo.kernel_degenerate:
                print(f"bound: |q/m|={abs(neo.ratio.value):.12g} >= |beta|/l={bound:.12g} "
                      f"{'holds' if abs(neo.ratio.value) >= bound - 1e-3 else 'VIOLATED'}")
        eio.write_json(_out_dir(args) / f"{_stem(args, 'action')}_curve.json",
                       {"lambda": ext.curve.lam, "nodes": ext.curve.nodes})
    else:
        if args.curve is None:
            raise ConfigurationError("pass --curve FILE or --extremize")
        curve = _curve_from_file(args.curve, nodes)
        if which == "I":
            report = action_I(m, f, _opt(args, scene, "qm", 0.0), curve)
        elif which == "K":
            beta = args.beta if args.beta is not None else charge * dlambda
            report = action_K(m, f, beta, curve)
        else:
            report = action_J(m, f, charge, curve.relabel(np.linspace(0.0, dlambda, len(curve.lam))), half)
        print(f"{report.which}={report.value:.17g} gradient_norm={report.gradient_norm:.3e}")
    out = report.to_dict()
    out.update(extra)
    _write(args, "action", "json", eio.dumps(out))
    return EXIT_OK


# --------------------------------------------------------------------------- check


def cmd_check(args, scene):
    worst = scene.validate()
    for part in ("metric", "field"):
        print(part + ": " + " ".join(f"{k}={v:.2e}" for k, v in worst[part].items()))
    m, f = scene.metric, scene.field
    results = {"validation": worst}
    failed = False
    if not m.riemannian:
        x, v = _initial_state(scene, "lfe")
        w = integrate(LorentzForce(m, f, _opt(args, scene, "qm", 1.0)), (x, v), (0.0, _opt(args, scene, "span", 1.0)),
                      scene.integrator())
        drift = w.metadata["norm_drift"]
        res = lfe_residual(m, f, w, _opt(args, scene, "qm", 1.0))
        ok = drift < 1e-8 and res < 1e-6
        print(f"lfe: norm_drift={drift:.2e} residual={res:.2e} {'ok' if ok else 'FAIL'}")
        failed |= not ok
        results["lfe"] = {"norm_drift": drift, "residual": res}
        p = CotangentState(x, metric_at(m, x) @ v)
        wt = integrate(TwistedHamiltonian(m, f, 1.0), p, (0.0, 1.0), scene.integrator())
        we = integrate(FlowEquation(m, f, 1.0), (x, v), (0.0, 1.0), scene.integrator())
        hd = wt.metadata["hamiltonian_drift"]
        sep = float(np.max(np.abs(wt.x - we.x)))
        ok = hd < 1e-8 and sep < 1e-8
        print(f"twisted: hamiltonian_drift={hd:.2e} projection_gap={sep:.2e} {'ok' if ok else 'FAIL'}")
        failed |= not ok
        results["twisted"] = {"hamiltonian_drift": hd, "projection_gap": sep}
        if "x0" in scene.events and "x1" in scene.events and m.name in ("minkowski", "constant"):
            try:
                est = lorentzian_distance_estimate(m, f, scene.event("x0"), scene.event("x1"), cfg=scene.integrator(),
                                                   seed=scene.seed)
                exact = lorentzian_interval(m, scene.event("x0"), scene.event("x1"))
                ok = est.lower_bound <= exact + 1e-8
                print(f"distance: estimate={est.lower_bound:.12g} chord={exact:.12g} {'ok' if ok else 'FAIL'}")
                failed |= not ok
                results["distance"] = {"estimate": est.lower_bound, "chord": exact}
            except NotConnectedError as exc:
                print(f"distance: {exc}")
    else:
        x, v = _initial_state(scene, "magnetic")
        w = integrate(MagneticFlow(m, f, _opt(args, scene, "qm", 1.0)), (x, v), (0.0, _opt(args, scene, "span", 1.0)),
                      scene.integrator())
        drift = w.metadata["relative_norm_drift"]
        ok = drift < 1e-8
        print(f"magnetic: speed_drift={drift:.2e} {'ok' if ok else 'FAIL'}")
        failed |= not ok
        results["magnetic"] = {"relative_norm_drift": drift}
    _write(args, "check", "json", eio.dumps(results))
    return EXIT_NUMERIC if failed else EXIT_OK


# --------------------------------------------------------------------------- entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="emflow", description="Charged-particle worldlines and flows on charts.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scene", required=True, help="TOML scene file")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
        p.add_argument("--qm", type=float, help="charge-to-mass ratio")
        p.add_argument("--charge", type=float, help="flow charge Q")
        p.add_argument("--eps", type=int, choices=(-1, 1), help="sign of the normalized flow charge")
        return p

    p = common(sub.add_parser("integrate", help="integrate one of the equations of motion"))
    p.add_argument("--system", choices=("lfe", "efe", "cotangent", "twisted", "magnetic"), default="lfe")
    p.add_argument("--span", type=float, help="parameter range length")
    p.add_argument("--method", choices=("rk45", "dop853", "rk4"))

    p = common(sub.add_parser("connect", help="connect events x0 and x1 by shooting"))
    p.add_argument("--kind", choices=("lfe", "efe"), default="lfe")
    p.add_argument("--bvp-tol", dest="bvp_tol", type=float)

    p = common(sub.add_parser("scan", help="connect x0 and x1 for a grid of ratios"))
    p.add_argument("--qm-grid", dest="qm_grid", help="a:b:steps")
    p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    p.add_argument("--trajectories", action="store_true", help="embed trajectories in the JSON output")
    p.add_argument("--bvp-tol", dest="bvp_tol", type=float)

    p = common(sub.add_parser("action", help="evaluate or extremize a discrete action"))
    p.add_argument("--which", choices=("I", "J", "Jtilde", "K"), default="J")
    p.add_argument("--curve", help="worldline CSV written by integrate or connect")
    p.add_argument("--extremize", action="store_true")
    p.add_argument("--nodes", type=int)
    p.add_argument("--dlambda", type=float)
    p.add_argument("--beta", type=float)

    common(sub.add_parser("check", help="run the invariant checks on a scene"))
    return parser


COMMANDS = {
    "integrate": cmd_integrate,
    "connect": cmd_connect,
    "scan": cmd_scan,
    "action": cmd_action,
    "check": cmd_check,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        scene = load_scene(args.scene)
        scene.validate()
        return COMMANDS[args.command](args, scene)
    except (ConfigurationError, ChartDomainError, CausalityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, EmflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
