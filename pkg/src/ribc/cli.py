"""Command-line front end: problem files in, certificates and artifacts out.

A problem file is a JSON document with a plant, the nested polytopes,
optional witness candidates, and an optional steering request.  The
subcommands drive the library pipeline and report verdicts through the
exit code: 0 certified / contained, 2 refuted with an obstruction,
3 inconclusive or plan-failed, 1 bad input or usage.  Every claim in a
report is backed by the witness data needed to re-check it.
"""

import argparse
import json
import os
import sys as _sys
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import certify, construct, geometry, sim, steer, system
from .errors import InputError, PlanError, RibcError

EXIT_CERTIFIED = 0
EXIT_ERROR = 1
EXIT_REFUTED = 2
EXIT_INCONCLUSIVE = 3

# exit codes are a function of the verdict alone
VERDICT_EXIT = {
    "IBC-certified": EXIT_CERTIFIED,
    "RIBC-certified": EXIT_CERTIFIED,
    "not-IBC": EXIT_REFUTED,
    "not-RIBC": EXIT_REFUTED,
    "necessary-conditions-hold": EXIT_INCONCLUSIVE,
    "inconclusive": EXIT_INCONCLUSIVE,
}

PHASE_COLORS = {
    "stabilize": "#1f77b4",
    "bridge": "#2ca02c",
    "retrace": "#d62728",
    "gramian": "#ff7f0e",
}

FIXTURES = (
    ("example1", "coupled planar plant on the unit square",
     {"check-ibc": "not-IBC"}),
    ("example2", "coupled planar plant steered through the 2.5-scaled square",
     {"check-ribc": "RIBC-certified", "steer": "contained"}),
    ("example3", "double integrator with all equilibria outside the inner square",
     {"check-ribc": "RIBC-certified (case C)"}),
    ("example4", "cart on a bounded table: soft box through the strict box",
     {"check-ibc": "not-IBC", "check-ribc": "RIBC-certified"}),
    ("example5", "bench balance system with no equilibrium in the safe slab",
     {"check-ribc": "not-RIBC (case A)"}),
    ("example6", "two-loop circuit with ellipsoid invariants and a steering request",
     {"check-ribc": "RIBC-certified", "steer": "contained"}),
)


@dataclass(frozen=True)
class ProblemFile:
    path: str
    sys: object
    X: object
    Xprime: object
    X1: object
    X2: object
    steer: dict
    tolerances: dict


def _as_matrix(doc, field, rows=None, cols=None):
    try:
        M = np.array(doc, dtype=float)
    except (TypeError, ValueError):
        raise InputError("field %s is not a numeric matrix" % field)
    if M.ndim != 2:
        raise InputError("field %s must be a list of rows" % field)
    if rows is not None and M.shape[0] != rows:
        raise InputError("field %s must have %d rows, got %d"
                         % (field, rows, M.shape[0]))
    if cols is not None and M.shape[1] != cols:
        raise InputError("field %s must have %d columns, got %d"
                         % (field, cols, M.shape[1]))
    return M


def _as_vector(doc, field, length):
    try:
        v = np.array(doc, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise InputError("field %s is not a numeric vector" % field)
    if v.shape[0] != length:
        raise InputError("field %s must have %d entries, got %d"
                         % (field, length, v.shape[0]))
    return v


def _candidate_from_doc(doc, field, n, m, direction):
    if "vertices" in doc:
        V = _as_matrix(doc["vertices"], field + ".vertices", cols=n)
        return geometry.from_vertices(V)
    if "P" in doc:
        P = _as_matrix(doc["P"], field + ".P", rows=n, cols=n)
        c = float(doc.get("c", 1.0))
        if c <= 0:
            raise InputError("field %s.c must be positive" % field)
        K = None
        if doc.get("K") is not None:
            K = _as_matrix(np.atleast_2d(doc["K"]), field + ".K",
                           rows=m, cols=n)
        center = np.zeros(n)
        if doc.get("center") is not None:
            center = _as_vector(doc["center"], field + ".center", n)
        return construct.Ellipsoid(P, c, K, direction, center)
    raise InputError("field %s needs either vertices or a quadratic form"
                     % field)


def parse_problem(path):
    """Read and validate a problem JSON file."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise InputError("cannot read %s: %s" % (path, exc))
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError("parse error in %s at line %d column %d: %s"
                         % (path, exc.lineno, exc.colno, exc.msg))
    if not isinstance(doc, dict):
        raise InputError("problem file must hold a JSON object")
    for key in ("system", "X", "Xprime"):
        if key not in doc:
            raise InputError("field %s is missing" % key)

    plant = doc["system"]
    A = _as_matrix(plant.get("A"), "system.A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise InputError("field system.A must be square")
    B = _as_matrix(plant.get("B"), "system.B", rows=n)
    m = B.shape[1]
    a = np.zeros(n)
    if plant.get("a") is not None:
        a = _as_vector(plant["a"], "system.a", n)
    sys_ = system.AffineSystem(A, B, a)

    X = geometry.from_vertices(_as_matrix(doc["X"].get("vertices"),
                                          "X.vertices", cols=n))
    Xp = geometry.from_vertices(_as_matrix(doc["Xprime"].get("vertices"),
                                           "Xprime.vertices", cols=n))
    for v in X.vertices:
        if not Xp.contains(v, "closed"):
            raise InputError("field X is not contained in Xprime")

    X1 = X2 = None
    if doc.get("X1") is not None:
        X1 = _candidate_from_doc(doc["X1"], "X1", n, m, "forward")
    if doc.get("X2") is not None:
        X2 = _candidate_from_doc(doc["X2"], "X2", n, m, "backward")

    request = None
    if doc.get("steer") is not None:
        s = doc["steer"]
        request = {
            "x": _as_vector(s.get("x"), "steer.x", n),
            "y": _as_vector(s.get("y"), "steer.y", n),
            "t_f": float(s.get("t_f", 1.0)),
            "rho": None if s.get("rho") is None else float(s["rho"]),
        }
        if request["t_f"] <= 0:
            raise InputError("field steer.t_f must be positive")

    tolerances = doc.get("tolerances") or {}
    if not isinstance(tolerances, dict):
        raise InputError("field tolerances must be an object")
    return ProblemFile(path, sys_, X, Xp, X1, X2, request, tolerances)


def resolve_problem_path(arg):
    """Accept a real path or the bare name of a built-in fixture."""
    if os.path.exists(arg):
        return arg
    name = os.path.splitext(os.path.basename(arg))[0]
    packaged = resources.files("ribc").joinpath("fixtures", name + ".json")
    if packaged.is_file():
        return str(packaged)
    raise InputError("problem file %s not found" % arg)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _invariance_dict(rep):
    if rep is None:
        return None
    return {
        "direction": rep.direction,
        "solvable": rep.solvable,
        "strict": rep.strict,
        "margin": rep.margin,
        "max_norm": rep.max_norm,
        "outcomes": [{
            "index": o.index,
            "vertex": o.vertex,
            "feasible": o.feasible,
            "u": None if o.u is None else np.atleast_1d(o.u),
            "norm": o.norm,
            "residual": o.residual,
        } for o in rep.outcomes],
    }


def _beta_dict(beta):
    if beta is None:
        return None
    return {"beta": beta.beta, "mean_decrease": beta.mean_decrease}


def _candidate_dict(cand):
    if cand is None:
        return None
    s = cand.set if hasattr(cand, "set") else cand
    out = {"provenance": getattr(cand, "provenance", "user")}
    if isinstance(s, geometry.Polytope):
        out["kind"] = "polytope"
        out["vertices"] = s.vertices
    else:
        out.update(kind="ellipsoid", P=s.P, c=s.c, K=s.K,
                   center=s.center, direction=s.direction)
    return out


def _overrides(prob, args):
    merged = dict(prob.tolerances)
    for key in ("tol", "u_box", "margin", "alpha"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            merged[key] = val
    return merged


def cmd_check(args):
    prob = parse_problem(resolve_problem_path(args.problem))
    ov = _overrides(prob, args)
    kw = {}
    if "u_box" in ov:
        kw["u_box"] = float(ov["u_box"])
    if "tol" in ov:
        kw["tol"] = float(ov["tol"])
    if "margin" in ov:
        kw["margin"] = float(ov["margin"])

    if args.command == "check-ibc":
        rep = certify.check_ibc(prob.sys, prob.X, **kw)
        report = {
            "command": "check-ibc",
            "problem": prob.path,
            "verdict": rep.verdict,
            "controllable": rep.controllable,
            "ctrb_rank": rep.ctrb_rank,
            "forward": _invariance_dict(rep.forward),
            "backward": _invariance_dict(rep.backward),
            "obstruction": _beta_dict(rep.obstruction),
            "trace": list(rep.trace),
        }
        return report, VERDICT_EXIT[rep.verdict]

    if "alpha" in ov:
        kw["alpha"] = float(ov["alpha"])
    candidates = None
    if isinstance(prob.X1, geometry.Polytope) and \
            isinstance(prob.X2, geometry.Polytope):
        candidates = (prob.X1, prob.X2)
    cert = certify.check_ribc(prob.sys, prob.X, prob.Xprime,
                              candidates=candidates, **kw)
    report = {
        "command": "check-ribc",
        "problem": prob.path,
        "verdict": cert.verdict,
        "case": cert.case.name,
        "controllable": cert.controllable,
        "ctrb_rank": cert.ctrb_rank,
        "bound_M": cert.bound_M,
        "X1": _candidate_dict(cert.X1),
        "X2": _candidate_dict(cert.X2),
        "forward": _invariance_dict(cert.forward),
        "backward": _invariance_dict(cert.backward),
        "obstruction": _beta_dict(cert.beta),
        "trace": list(cert.trace),
        "warnings": list(cert.warnings),
    }
    return report, VERDICT_EXIT[cert.verdict]


def _order_loop(points, tol=1e-12):
    """Order the corners of a convex polygon counterclockwise."""
    pts = []
    for p in np.asarray(points, dtype=float):
        if not any(np.abs(p - q).max() <= tol for q in pts):
            pts.append(p)
    pts = np.array(pts)
    centroid = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0])
    return pts[np.argsort(ang)]


def write_trajectory_csv(path, segments, n, m):
    """One row per sample with a global clock and the phase name."""
    cols = (["t"] + ["x_%d" % (i + 1) for i in range(n)]
            + ["u_%d" % (i + 1) for i in range(m)] + ["phase"])
    offset = 0.0
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for seg_idx, (name, traj) in enumerate(segments):
            start = 0 if seg_idx == 0 else 1  # phase joints share a sample
            for k in range(start, traj.t.shape[0]):
                vals = [offset + traj.t[k]] + list(traj.x[k]) + list(traj.u[k])
                f.write(",".join("%.12g" % v for v in vals))
                f.write(",%s\n" % name)
            offset += float(traj.t[-1])


def write_plot_svg(path, polytopes, segments, proj, size=(640, 480)):
    """Hand-rolled SVG: one polygon per polytope, one polyline per phase."""
    i, j = proj
    loops = [_order_loop(P.vertices[:, (i, j)]) for _, P in polytopes]
    curves = [(name, traj.x[:, (i, j)]) for name, traj in segments]
    stack = np.vstack([p for p in loops] + [c for _, c in curves])
    lo = stack.min(axis=0)
    hi = stack.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    lo = lo - 0.06 * span
    hi = hi + 0.06 * span
    span = hi - lo
    W, H = size

    def at(p):
        return ((p[0] - lo[0]) / span[0] * W,
                H - (p[1] - lo[1]) / span[1] * H)

    def path_of(pts):
        return " ".join("%.2f,%.2f" % at(p) for p in pts)

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        'width="%d" height="%d" viewBox="0 0 %d %d">' % (W, H, W, H),
    ]
    for (name, _), loop in zip(polytopes, loops):
        lines.append('<polygon points="%s" fill="none" stroke="#555555" '
                     'stroke-width="1.5"><title>%s</title></polygon>'
                     % (path_of(loop), name))
    for name, pts in curves:
        color = PHASE_COLORS.get(name, "#333333")
        lines.append('<polyline points="%s" fill="none" stroke="%s" '
                     'stroke-width="2"><title>%s</title></polyline>'
                     % (path_of(pts), color, name))
    lines.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def cmd_steer(args):
    prob = parse_problem(resolve_problem_path(args.problem))
    if prob.steer is None:
        raise InputError("problem file has no steer request")
    ov = _overrides(prob, args)
    u_box = float(ov.get("u_box", certify.U_BOX_DEFAULT))
    n, m = prob.sys.n, prob.sys.m
    proj = args.proj or (1, 2)
    if n == 1:
        raise InputError("plotting needs at least two state coordinates")
    pi, pj = int(proj[0]) - 1, int(proj[1]) - 1
    if not (0 <= pi < n and 0 <= pj < n) or pi == pj:
        raise InputError("projection coordinates must be distinct and in"
                         " 1..%d" % n)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "trajectory.csv")
    svg_path = os.path.join(outdir, "plot.svg")
    x, y = prob.steer["x"], prob.steer["y"]
    polys = [("X", prob.X), ("Xprime", prob.Xprime)]

    if args.raw_gramian:
        law = steer.gramian_steer(prob.sys, x, y, prob.steer["t_f"])
        watch = sim.Monitor("Xprime", prob.Xprime, "open", "record")
        traj = sim.integrate(prob.sys, law, x, prob.steer["t_f"],
                             monitors=(watch,))
        segments = [("gramian", traj)]
        contained = "Xprime" not in traj.events
        write_trajectory_csv(csv_path, segments, n, m)
        write_plot_svg(svg_path, polys, segments, (pi, pj))
        report = {
            "command": "steer",
            "problem": prob.path,
            "mode": "raw-gramian",
            "verdict": "contained" if contained else "plan-failed",
            "contained": contained,
            "exit_time": traj.events.get("Xprime"),
            "endpoint_error": float(np.linalg.norm(traj.endpoint - y)),
            "max_control": float(np.abs(traj.u).max()),
            "artifacts": {"trajectory": csv_path, "plot": svg_path},
        }
        return report, EXIT_CERTIFIED if contained else EXIT_INCONCLUSIVE

    if prob.X1 is not None and prob.X2 is not None:
        S1, S2 = prob.X1, prob.X2
    else:
        cert = certify.check_ribc(prob.sys, prob.X, prob.Xprime, u_box=u_box)
        if cert.X1 is None or cert.X2 is None:
            report = {
                "command": "steer",
                "problem": prob.path,
                "verdict": "inconclusive",
                "reason": "no witness candidates available",
                "trace": list(cert.trace),
            }
            return report, EXIT_INCONCLUSIVE
        S1, S2 = cert.X1, cert.X2

    try:
        plan = steer.ribc_steering_plan(prob.sys, prob.X, prob.Xprime, S1, S2,
                                        x, y, rho=prob.steer["rho"],
                                        u_box=u_box)
    except PlanError as exc:
        report = {
            "command": "steer",
            "problem": prob.path,
            "verdict": "plan-failed",
            "phase": exc.phase,
            "reason": str(exc),
        }
        return report, EXIT_INCONCLUSIVE

    rep = sim.verify_plan(plan, prob.Xprime)
    segments = list(zip([p.name for p in plan.phases], rep.trajectories))
    write_trajectory_csv(csv_path, segments, n, m)
    write_plot_svg(svg_path, polys, segments, (pi, pj))
    report = {
        "command": "steer",
        "problem": prob.path,
        "mode": "plan",
        "verdict": "contained" if rep.contained else "plan-failed",
        "contained": rep.contained,
        "violated_phase": rep.violated_phase,
        "phases": [{"name": name, "duration": float(t)}
                   for name, t in rep.phase_times],
        "bound_M": plan.bound_M,
        "rho": plan.rho,
        "rho_prime": plan.rho_prime,
        "endpoint_error": rep.endpoint_error,
        "artifacts": {"trajectory": csv_path, "plot": svg_path},
    }
    return report, EXIT_CERTIFIED if rep.contained else EXIT_INCONCLUSIVE


def cmd_fixtures(args):
    rows = []
    for name, title, expected in FIXTURES:
        path = resolve_problem_path(name)
        prob = parse_problem(path)
        rows.append({
            "name": name,
            "file": path,
            "n": prob.sys.n,
            "m": prob.sys.m,
            "description": title,
            "expected": expected,
            "has_steer": prob.steer is not None,
        })
    return {"command": "fixtures", "fixtures": rows}, EXIT_CERTIFIED


def _print_text(report):
    cmd = report.get("command")
    if cmd == "fixtures":
        for row in report["fixtures"]:
            exp = "; ".join("%s: %s" % kv for kv in row["expected"].items())
            print("%-9s n=%d m=%d  %s" % (row["name"], row["n"], row["m"],
                                          row["description"]))
            print("          expected %s" % exp)
        return
    if cmd == "steer":
        print("verdict: %s" % report["verdict"])
        for key in ("phase", "reason", "violated_phase", "exit_time"):
            if report.get(key) is not None:
                print("%s: %s" % (key, report[key]))
        if report.get("phases"):
            print("phases: " + "  ".join("%s %.3fs" % (p["name"],
                                                       p["duration"])
                                         for p in report["phases"]))
        for key in ("bound_M", "max_control", "endpoint_error"):
            if report.get(key) is not None:
                print("%s: %.6g" % (key, report[key]))
        arts = report.get("artifacts")
        if arts:
            print("wrote %s and %s" % (arts["trajectory"], arts["plot"]))
        return
    print("verdict: %s" % report["verdict"])
    if report.get("case"):
        print("case: %s" % report["case"])
    if report.get("controllable") is not None:
        print("controllable: %s (rank %s)" % (report["controllable"],
                                              report["ctrb_rank"]))
    if report.get("obstruction"):
        print("monotone direction: %s (mean decrease %.3g)"
              % (np.array2string(np.asarray(report["obstruction"]["beta"]),
                                 precision=4),
                 report["obstruction"]["mean_decrease"]))
    for line in report.get("trace", ()):
        print("  - %s" % line)


class _Parser(argparse.ArgumentParser):
    # argparse wants to exit(2) on usage errors; 2 means refuted here
    def error(self, message):
        self.print_usage(_sys.stderr)
        raise SystemExit(EXIT_ERROR)


def build_parser():
    parser = _Parser(prog="ribc", description=__doc__.splitlines()[0])
    parser.add_argument("--json", action="store_true",
                        help="emit the report as JSON on stdout")
    parser.add_argument("--tol", type=float, default=None,
                        help="geometric tolerance override")
    sub = parser.add_subparsers(dest="command", required=True)

    def global_flags(p):
        # accepted after the subcommand too; SUPPRESS keeps an absent flag
        # from clobbering the value parsed before the subcommand
        p.add_argument("--json", action="store_true",
                       default=argparse.SUPPRESS)
        p.add_argument("--tol", type=float, default=argparse.SUPPRESS)
        return p

    def add_check(name, help_):
        p = global_flags(sub.add_parser(name, help=help_))
        p.add_argument("problem")
        p.add_argument("--u-box", dest="u_box", type=float, default=None)
        p.add_argument("--margin", type=float, default=None)
        if name == "check-ribc":
            p.add_argument("--alpha", type=float, default=None)
        return p

    add_check("check-ibc", "certify mutual accessibility inside one polytope")
    add_check("check-ribc", "certify accessibility through a larger polytope")

    p_steer = global_flags(sub.add_parser(
        "steer", help="build and validate a three-phase plan, writing CSV"
        " and SVG artifacts"))
    p_steer.add_argument("problem")
    p_steer.add_argument("--proj", nargs=2, type=int, metavar=("I", "J"),
                         default=None,
                         help="1-based state coordinates for the plot")
    p_steer.add_argument("--raw-gramian", action="store_true",
                         help="run the open-loop law alone instead of the plan")
    p_steer.add_argument("--out", default=None, help="artifact directory")
    p_steer.add_argument("--u-box", dest="u_box", type=float, default=None)

    global_flags(sub.add_parser("fixtures",
                                help="list the built-in example problems"))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("check-ibc", "check-ribc"):
            report, code = cmd_check(args)
        elif args.command == "steer":
            report, code = cmd_steer(args)
        else:
            report, code = cmd_fixtures(args)
    except RibcError as exc:
        if args.json:
            print(json.dumps({"error": str(exc)}))
        else:
            print("error: %s" % exc, file=_sys.stderr)
        return EXIT_ERROR
    if args.json:
        print(json.dumps(_jsonable(report), indent=2))
    else:
        _print_text(report)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
