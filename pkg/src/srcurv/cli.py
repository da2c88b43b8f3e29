"""Command-line workflows: ``srcurv <command> <scenario-file> [flags]``.

Every command writes a JSON :class:`~srcurv.reports.RunReport` (stdout, or
``<out>.json`` with ``--out``) and, where a time series exists, ``<out>.csv``.
Exit codes: 0 ok, 1 criterion violated / check failed, 2 input error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys as _sys
import time
from pathlib import Path

import numpy as np

from .curvature import CurvatureError, criterion_pointwise, criterion_theorem4
from .dynamics import FlowError, flow
from .exprfield import ExprError
from .geometry import GeometryError, k_max, rot
from .grassmann import OracleError, random_states, verify_theorem2
from .hyperbolic import cone_certificate, curvature_along, lyapunov, splitting
from .reports import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, EXIT_VIOLATED, RunReport, write_columns, write_csv
from .scenario import ScenarioError, ScenarioSpec, numbers
from .subriemannian import StructureError, check_level_rule, validate

NUMERIC_ERRORS = (FlowError, OracleError, CurvatureError, GeometryError, np.linalg.LinAlgError, ArithmeticError, OverflowError)


class CommandResult:
    """Result payload, verdict and optional time series of one command."""

    def __init__(self, payload, ok: bool = True, series=None, columns=None):
        self.payload = payload
        self.ok = ok
        self.series = series  # (header, rows)
        self.columns = columns  # (x, y) for the two-column export


def _probe_points(region):
    pts = [0.5 * (region.lo + region.hi)]
    pts += list(region.grid(2))
    return pts


# --------------------------------------------------------------------------
# commands


def cmd_validate(spec: ScenarioSpec, args) -> CommandResult:
    if not spec.is_sub_riemannian:
        spec.build()  # still parses every expression and checks the levels
        return CommandResult({"applicable": False, "passed": True, "note": "Riemannian scenario: no symmetry data to validate"})
    S = spec.structure()
    resolved = spec.resolved()
    region = spec.region(resolved)
    levels = numbers(resolved.get("levels", {}).get("c", []), "levels.c")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    samples = [S.slice_point(q) + _fibre_offset(S, rng) for q in region.sample(rng, args.samples or 16)]
    rep = validate(S, samples, levels if S.derived else None)
    return CommandResult(rep.to_dict(), rep.passed)


def _fibre_offset(S, rng):
    """Random shift along the symmetry coordinates so samples leave the slice."""
    off = np.zeros(S.n)
    off[S.m1 :] = rng.uniform(-1.0, 1.0, S.s)
    return off


def cmd_reduce(spec: ScenarioSpec, args) -> CommandResult:
    if spec.is_sub_riemannian:
        S = spec.structure()
        if S.derived:
            check_level_rule(S, numbers(spec.resolved().get("levels", {}).get("c", []), "levels.c"))
    M = spec.build()
    sysm = M.system
    probes = []
    for q in _probe_points(M.region):
        entry = {
            "q": q,
            "g": sysm.metric.metric(q),
            "J_i": [sysm.magnetic.J(q, i) for i in range(sysm.magnetic.s)],
            "J_c": sysm.magnetic.J(q),
            "W": sysm.potential(q),
        }
        if sysm.dim == 2:
            R = rot(sysm.metric, q)
            Jc = entry["J_c"]
            # J^c = b * rot on surfaces; report b
            entry["J_c_over_rot"] = float(np.trace(Jc @ np.linalg.inv(R)) / 2)
        probes.append(entry)
    payload = {
        "dim": sysm.dim,
        "c0": sysm.c0,
        "levels": sysm.levels,
        "passthrough": not spec.is_sub_riemannian,
        "probes": probes,
    }
    return CommandResult(payload)


def cmd_criterion(spec: ScenarioSpec, args) -> CommandResult:
    M = spec.build()
    gq = args.grid_q or M.grid_q
    gs = args.grid_sphere or M.grid_sphere
    if args.mode == "theorem3":
        rep = criterion_pointwise(M.system, M.region, gq, gs)
    else:
        km = k_max(M.system.metric, M.region, grid=gq)
        rep = criterion_theorem4(M.system, M.region, gq, gs, mode=args.mode, k_max=km.value)
        rep.extra["k_max_grid"] = {"q_points": km.grid_points, "planes": km.plane_samples, "refined": km.refined}
    return CommandResult(rep.to_dict(), rep.satisfied)


def cmd_verify_theorem2(spec: ScenarioSpec, args) -> CommandResult:
    M = spec.build()
    n = args.samples or 20
    seed = args.seed if args.seed is not None else M.seed
    pts = random_states(M.system, M.region, n, seed)
    rep = verify_theorem2(M.system, pts, tol=args.tol if args.tol is not None else 1e-3)
    rows = [[k, c.rel_error if c.rel_error is not None else float("nan")] for k, c in enumerate(rep.points)]
    return CommandResult(rep.to_dict(), rep.passed, (["point", "rel_error"], rows))


def cmd_flow(spec: ScenarioSpec, args) -> CommandResult:
    M = spec.build()
    o = M.integrator
    T = args.t if args.t is not None else o.T
    tr = flow(
        M.system,
        M.initial,
        T,
        method=args.method or o.method,
        dt=args.dt or o.dt,
        rtol=args.rtol or o.rtol,
        atol=o.atol,
    )
    payload = {"T": T, "steps": len(tr.t) - 1, "max_drift": tr.max_drift, "final": {"q": tr.q[-1], "p": tr.p[-1]}}
    q = tr.q
    return CommandResult(payload, True, (tr.header(), list(tr.rows())), (q[:, 0], q[:, 1] if q.shape[1] > 1 else tr.t))


def cmd_lyapunov(spec: ScenarioSpec, args) -> CommandResult:
    M = spec.build()
    T = args.t if args.t is not None else max(M.integrator.T, 20.0)
    seed = args.seed if args.seed is not None else M.seed
    kw = {"rtol": args.rtol} if args.rtol else {}
    rep = lyapunov(M.system, M.initial, T, renorm_dt=args.renorm_dt, seed=seed, **kw)
    payload = rep.to_dict()
    if args.splitting:
        payload["splitting"] = splitting(M.system, M.initial, seed=seed).to_dict()
    return CommandResult(payload, True, (rep.header(), list(rep.rows())), (rep.history_t, rep.history[:, 0]))


def cmd_cone(spec: ScenarioSpec, args) -> CommandResult:
    M = spec.build()
    T = args.t if args.t is not None else M.integrator.T
    dt = args.dt or 1e-2
    cert = cone_certificate(M.system, M.initial, T, dt)
    tr = flow(M.system, M.initial, T, method="rk4", dt=dt)
    R = curvature_along(M.system, tr.states)
    return CommandResult(cert.to_dict(), cert.passed, (["t", "R"], list(zip(tr.t, R))), (tr.t, R))


COMMANDS = {
    "validate": cmd_validate,
    "reduce": cmd_reduce,
    "criterion": cmd_criterion,
    "verify-theorem2": cmd_verify_theorem2,
    "flow": cmd_flow,
    "lyapunov": cmd_lyapunov,
    "cone": cmd_cone,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srcurv", description="Reduced curvature and hyperbolicity laboratory.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--out", help="output prefix: writes <out>.json and, for time series, <out>.csv")
        sp.add_argument("--gnuplot", action="store_true", help="also write <out>.dat two-column file")
        sp.add_argument("--seed", type=int)
        return sp

    sp = common(sub.add_parser("validate", help="check symmetry assumptions of a sub-Riemannian scenario"))
    sp.add_argument("--samples", type=int)
    common(sub.add_parser("reduce", help="reduce and print g, J_i, J^c, W at probe points"))
    sp = common(sub.add_parser("criterion", help="evaluate a hyperbolicity criterion"))
    sp.add_argument("--mode", choices=["theorem3", "theorem4", "corollary1", "corollary2"], default="theorem3")
    sp.add_argument("--grid-q", type=int)
    sp.add_argument("--grid-sphere", type=int)
    sp = common(sub.add_parser("verify-theorem2", help="compare closed-form curvature with the Jacobi-curve oracle"))
    sp.add_argument("--samples", type=int)
    sp.add_argument("--tol", type=float)
    sp = common(sub.add_parser("flow", help="integrate the reduced flow"))
    sp.add_argument("--t", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--rtol", type=float)
    sp.add_argument("--method", choices=["dop853", "rk4"])
    sp = common(sub.add_parser("lyapunov", help="Lyapunov spectrum along the initial state"))
    sp.add_argument("--t", type=float)
    sp.add_argument("--rtol", type=float)
    sp.add_argument("--renorm-dt", type=float, default=0.5)
    sp.add_argument("--splitting", action="store_true", help="also estimate the invariant splitting")
    sp = common(sub.add_parser("cone", help="cone-field certificate along the initial trajectory"))
    sp.add_argument("--t", type=float)
    sp.add_argument("--dt", type=float)
    return p


def run(argv=None) -> tuple[int, RunReport | None, str]:
    """Execute a command; returns (exit code, report, error message)."""
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        spec = ScenarioSpec.load(args.scenario)
    except ScenarioError as e:
        return EXIT_INPUT, None, str(e)
    report = RunReport.for_scenario(spec, args.seed)
    try:
        res = COMMANDS[args.command](spec, args)
        report.add(args.command, res.payload)
        report.exit_code = EXIT_OK if res.ok else EXIT_VIOLATED
        report.status = "ok" if res.ok else "violated"
    except (ScenarioError, ExprError, StructureError) as e:
        return _failed(report, args, EXIT_INPUT, "input error", e, t0)
    except NUMERIC_ERRORS as e:
        return _failed(report, args, EXIT_NUMERIC, "numeric failure", e, t0)
    except ValueError as e:
        return _failed(report, args, EXIT_INPUT, "input error", e, t0)
    report.wall_clock = time.perf_counter() - t0
    _emit(report, args, res)
    return report.exit_code, report, ""


def _failed(report, args, code, status, exc, t0):
    report.exit_code = code
    report.status = status
    report.add("error", {"type": type(exc).__name__, "message": str(exc)})
    report.wall_clock = time.perf_counter() - t0
    _emit(report, args, None)
    return code, report, f"{status}: {exc}"


def _emit(report, args, res):
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        report.write(out.with_suffix(".json"))
        if res is not None and res.series is not None:
            write_csv(out.with_suffix(".csv"), *res.series)
        if args.gnuplot and res is not None and res.columns is not None:
            write_columns(out.with_suffix(".dat"), *res.columns)
    else:
        print(report.to_json())


def main(argv=None) -> int:
    code, _, message = run(argv)
    if message:
        print(f"srcurv: {message}", file=_sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
