"""Verdict engine: vertex invariance LPs and the certification pipelines.

Solvability of the flow conditions at the vertices extends to the whole
boundary by convexity, so every check here reduces to small LPs over the
input u at each vertex.  The top-level routines assemble those answers,
the controllability test, and the equilibrium-set geometry into in-block
and relaxed verdicts with machine-checkable witnesses attached.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics, system
from .errors import InputError
from .geometry import GEOM_TOL, Polytope

U_BOX_DEFAULT = 1e3
STRICT_SCALE = 1e-6


@dataclass(frozen=True)
class VertexOutcome:
    index: int
    vertex: np.ndarray
    feasible: bool
    u: np.ndarray = None
    norm: float = None
    residual: float = None  # least achievable worst-facet outflow when infeasible
    warning: str = None


@dataclass(frozen=True)
class InvarianceReport:
    direction: str
    margin: float
    outcomes: tuple
    solvable: bool
    strict: bool
    max_norm: float
    warnings: tuple = ()

    def witness_controls(self):
        return {o.index: o.u for o in self.outcomes if o.feasible}


@dataclass(frozen=True)
class BetaObstruction:
    """Kernel direction of B' whose component can only decrease inside the set."""
    beta: np.ndarray
    mean_decrease: float


@dataclass(frozen=True)
class IbcReport:
    verdict: str  # IBC-certified / necessary-conditions-hold / not-IBC
    controllable: bool
    ctrb_rank: int
    forward: InvarianceReport = None
    backward: InvarianceReport = None
    obstruction: BetaObstruction = None
    trace: tuple = ()


@dataclass(frozen=True)
class RibcCertificate:
    verdict: str  # RIBC-certified / not-RIBC / inconclusive
    case: object
    X1: object = None
    X2: object = None
    beta: BetaObstruction = None
    forward: InvarianceReport = None
    backward: InvarianceReport = None
    bound_M: float = None
    controllable: bool = None
    ctrb_rank: int = None
    kalman: object = None
    trace: tuple = ()
    warnings: tuple = ()


def _vertex_index(P, v, tol):
    v = np.asarray(v, dtype=float)
    scale = max(1.0, np.abs(P.vertices).max())
    for i, w in enumerate(P.vertices):
        if np.abs(w - v).max() <= tol * scale:
            return i
    raise InputError("point is not a vertex of the polytope")


def invariance_lp(sys, P, v, direction="forward", margin=0.0,
                  u_box=U_BOX_DEFAULT, tol=numerics.LP_TOL):
    """Feasibility of holding the flow inside the tangent cone at vertex v.

    Solves for u with minimal sup norm such that every facet active at v
    sees the (possibly time-reversed) field pointing inward by at least
    the margin.  Returns a VertexOutcome either way; infeasible outcomes
    carry the least achievable worst-facet outflow as a residual.
    """
    if direction not in ("forward", "backward"):
        raise InputError("direction must be forward or backward")
    s = 1.0 if direction == "forward" else -1.0
    idx = _vertex_index(P, v, 1e-9)
    vert = P.vertices[idx]
    active = [j for j, inc in enumerate(P.incidence) if idx in inc]
    m = sys.m
    drift = sys.A @ vert + sys.a
    Gu = np.array([s * (P.normals[j] @ sys.B) for j in active]).reshape(len(active), m)
    rhs = np.array([-margin - s * (P.normals[j] @ drift) for j in active])

    # variables (u, tau), minimize tau with |u_i| <= tau
    def solve(with_box):
        rows = [np.hstack([Gu, np.zeros((len(active), 1))])]
        cut = [rhs]
        eye = np.eye(m)
        rows.append(np.hstack([eye, -np.ones((m, 1))]))
        cut.append(np.zeros(m))
        rows.append(np.hstack([-eye, -np.ones((m, 1))]))
        cut.append(np.zeros(m))
        rows.append(np.hstack([np.zeros((1, m)), -np.ones((1, 1))]))
        cut.append(np.zeros(1))
        if with_box:
            rows.append(np.hstack([np.zeros((1, m)), np.ones((1, 1))]))
            cut.append(np.array([u_box]))
        c = np.zeros(m + 1)
        c[m] = 1.0
        return numerics.lp_solve(c, np.vstack(rows), np.concatenate(cut), tol)

    res = solve(True)
    warning = None
    if not res.optimal:
        res = solve(False)
        if res.optimal:
            warning = ("control norm %.3g exceeds the bound %.3g"
                       % (res.x[m], u_box))
    if res.optimal:
        return VertexOutcome(idx, vert, True, res.x[:m], float(res.x[m]),
                             warning=warning)

    # least achievable violation: minimize rho with outflow <= -margin + rho
    mm = len(active)
    Gres = np.vstack([
        np.hstack([Gu, -np.ones((mm, 1))]),
        np.hstack([np.eye(m), np.zeros((m, 1))]),
        np.hstack([-np.eye(m), np.zeros((m, 1))]),
    ])
    hres = np.concatenate([rhs, np.full(2 * m, u_box)])
    cres = np.zeros(m + 1)
    cres[m] = 1.0
    rr = numerics.lp_solve(cres, Gres, hres, tol)
    residual = float(rr.value) if rr.optimal else None
    return VertexOutcome(idx, vert, False, residual=residual)


def check_invariance(sys, P, direction="forward", margin=0.0,
                     u_box=U_BOX_DEFAULT, tol=numerics.LP_TOL):
    """Run the vertex LP at every vertex of P and aggregate."""
    if not isinstance(P, Polytope):
        raise InputError("expected a polytope")
    outcomes = []
    for v in P.vertices:
        outcomes.append(invariance_lp(sys, P, v, direction, margin, u_box, tol))
    solvable = all(o.feasible for o in outcomes)
    norms = [o.norm for o in outcomes if o.feasible]
    warnings = tuple(o.warning for o in outcomes if o.warning)
    return InvarianceReport(direction, margin, tuple(outcomes), solvable,
                            margin > 0.0, max(norms) if norms else None,
                            warnings)


def obstruction_beta(sys, Xprime, tol=GEOM_TOL):
    """Search ker(B') for a direction that the flow can only push down.

    Looks for beta with beta.(Av+a) <= 0 at every vertex of X', maximizing
    the mean decrease; a strictly positive mean makes beta.x decreasing on
    the whole open interior.  Returns None when no such direction exists.
    """
    N = numerics.kernel(sys.B.T)
    q = N.shape[1]
    if q == 0:
        return None
    drift = Xprime.vertices @ sys.A.T + sys.a  # rows: Av + a
    W = drift @ N  # rows: N'(Av+a)
    p = W.shape[0]
    G = np.vstack([W, np.eye(q), -np.eye(q)])
    h = np.concatenate([np.zeros(p), np.ones(2 * q)])
    c = W.sum(axis=0)  # minimize sum of beta.(Av+a)
    res = numerics.lp_solve(c, G, h)
    if not res.optimal:
        return None
    mean_dec = -float(res.value) / p
    if mean_dec <= tol:
        return None
    return BetaObstruction(N @ res.x, mean_dec)


def check_ibc(sys, X, u_box=U_BOX_DEFAULT, tol=GEOM_TOL, margin=0.0):
    """Mutual accessibility of interior points through the interior of X.

    Certified exactly when (A,B) is controllable and both the forward and
    backward vertex conditions are solvable on a simplicial X containing
    equilibria in its interior.  For non-simplicial X the same conditions
    are only necessary, which the verdict string reflects.  A positive
    margin demands strict inflow instead of mere solvability.
    """
    O = system.equilibrium_set(sys)
    trace = []
    if not O.nonempty or not X.intersects_affine_open(O.x0, O.basis).hit:
        trace.append("no equilibrium point lies in the interior of X")
        beta = obstruction_beta(sys, X, tol)
        if beta is not None:
            trace.append("kernel direction beta certifies a monotone "
                         "component (mean decrease %.3g)" % beta.mean_decrease)
        return IbcReport("not-IBC", *system.is_controllable(sys),
                         obstruction=beta, trace=tuple(trace))

    controllable, r = system.is_controllable(sys)
    fwd = check_invariance(sys, X, "forward", margin, u_box)
    bwd = check_invariance(sys, X, "backward", margin, u_box)
    if not controllable:
        trace.append("pair (A, B) is uncontrollable (rank %d < %d)" % (r, sys.n))
    for rep in (fwd, bwd):
        if not rep.solvable:
            bad = [o.index for o in rep.outcomes if not o.feasible]
            trace.append("%s conditions fail at vertex index %s"
                         % (rep.direction, bad))
    if controllable and fwd.solvable and bwd.solvable:
        if X.is_simplicial():
            verdict = "IBC-certified"
            trace.append("all conditions hold and X is simplicial")
        else:
            verdict = "necessary-conditions-hold"
            trace.append("all conditions hold but X is not simplicial; "
                         "they are only necessary here")
    else:
        verdict = "not-IBC"
    return IbcReport(verdict, controllable, r, fwd, bwd, trace=tuple(trace))


def _strict_margin(P):
    return STRICT_SCALE * max(1.0, float(np.abs(P.offsets).max()))


def _polytope_gate(sys, P, direction, u_box, tol, margin=None):
    """Sufficiency gate for one polytope: simplicial, or strictly invariant."""
    if P.is_simplicial():
        return True, "simplicial"
    if margin is None:
        margin = _strict_margin(P)
    rep = check_invariance(sys, P, direction, margin, u_box, tol)
    if rep.solvable:
        return True, "strict-margin"
    return False, None


def _candidate_gate(sys, cand, direction, u_box, tol, margin=None):
    if getattr(cand, "shape", "polytope") == "ellipsoid":
        return True, "lyapunov-ellipsoid"
    P = cand.set if hasattr(cand, "set") else cand
    return _polytope_gate(sys, P, direction, u_box, tol, margin)


def _pair_meets_O(c1, c2, O, tol):
    """Do the two candidate interiors share a point with the equilibrium set."""
    p1 = getattr(c1, "set", c1)
    p2 = getattr(c2, "set", c2)
    if isinstance(p1, Polytope) and isinstance(p2, Polytope):
        D = O.basis
        k = D.shape[1]
        rows = []
        cut = []
        for P in (p1, p2):
            rows.append(np.hstack([P.normals @ D, np.ones((P.n_facets, 1))]))
            cut.append(P.offsets - P.normals @ O.x0)
        c = np.zeros(k + 1)
        c[k] = -1.0
        res = numerics.lp_solve(c, np.vstack(rows), np.concatenate(cut))
        if res.optimal and res.x[k] > tol:
            return True, O.x0 + D @ res.x[:k]
        return False, None
    # ellipsoids are built around a chosen equilibrium point; check it
    for cand in (c1, c2):
        xbar = getattr(cand, "xbar", None)
        if xbar is not None:
            if all(_cand_contains_open(c, xbar) for c in (c1, c2)):
                return True, xbar
    return False, None


def _cand_contains_open(cand, x):
    p = getattr(cand, "set", cand)
    if isinstance(p, Polytope):
        return p.contains(x, "open")
    return p.contains_open(x)


def _validate_user_candidate(sys, P, X, Xprime, direction, u_box, tol):
    for v in X.vertices:
        if not P.contains(v, "closed", tol=tol):
            return None, "does not contain X"
    for v in P.vertices:
        if not Xprime.contains(v, "closed", tol=tol):
            return None, "is not contained in X'"
    rep = check_invariance(sys, P, direction, 0.0, u_box)
    if not rep.solvable:
        return None, "%s conditions are not solvable" % direction
    return rep, None


def check_ribc(sys, X, Xprime, candidates=None, u_box=U_BOX_DEFAULT,
               alpha=1.5, tol=GEOM_TOL, margin=None):
    """Mutual accessibility of interior points of X through the interior of X'.

    Pipeline: classify where the equilibrium set sits, reject the hopeless
    geometry outright, then assemble forward/backward invariant witness
    sets (user-supplied candidates first, construction routines second)
    and apply the sufficiency gates.  margin overrides the strict-inflow
    level used by the non-simplicial sufficiency gate.
    """
    case = system.classify_case(sys, X, Xprime, tol)
    trace = ["equilibrium set meets: inner interior %s, outer interior %s (case %s)"
             % (case.witness_inner is not None, case.name != "A", case.name)]
    warnings = list(case.warnings)

    if case.name == "A":
        beta = obstruction_beta(sys, Xprime, tol)
        if beta is not None:
            trace.append("kernel direction beta decreases everywhere inside X' "
                         "(mean decrease %.3g)" % beta.mean_decrease)
        else:
            trace.append("no kernel-direction certificate found; the verdict "
                         "rests on the equilibrium set missing the interior of X'")
        return RibcCertificate("not-RIBC", case, beta=beta, trace=tuple(trace),
                               warnings=tuple(warnings))

    controllable, r = system.is_controllable(sys)
    if not controllable:
        dec = system.kalman_decomposition(sys)
        tags = sorted(set(t for _, t in dec.eig_tags))
        trace.append("pair (A, B) is uncontrollable (rank %d < %d); "
                     "unreachable modes: %s" % (r, sys.n, ", ".join(tags)))
        return RibcCertificate("not-RIBC", case, controllable=False,
                               ctrb_rank=r, kalman=dec, trace=tuple(trace),
                               warnings=tuple(warnings))
    trace.append("pair (A, B) is controllable")

    O = system.equilibrium_set(sys)
    cand1 = cand2 = None
    fwd_rep = bwd_rep = None
    if candidates is not None:
        user1, user2 = candidates
        rep1, err1 = _validate_user_candidate(sys, user1, X, Xprime,
                                              "forward", u_box, tol)
        rep2, err2 = _validate_user_candidate(sys, user2, X, Xprime,
                                              "backward", u_box, tol)
        if err1 is None and err2 is None:
            cand1, cand2 = user1, user2
            fwd_rep, bwd_rep = rep1, rep2
            trace.append("user candidates validate for both directions")
        else:
            for label, err in (("X1", err1), ("X2", err2)):
                if err:
                    trace.append("user candidate %s rejected: %s" % (label, err))

    if cand1 is None:
        from . import construct
        try:
            built1, built2 = construct.search_candidates(sys, X, Xprime, case,
                                                         alpha=alpha, u_box=u_box)
        except Exception as exc:  # construction-failed is an honest dead end
            trace.append("candidate construction failed: %s" % exc)
            return RibcCertificate("inconclusive", case, controllable=True,
                                   ctrb_rank=r, trace=tuple(trace),
                                   warnings=tuple(warnings))
        cand1, cand2 = built1, built2
        trace.append("constructed candidates: %s / %s"
                     % (built1.provenance, built2.provenance))
        fwd_rep = getattr(built1, "report", None)
        bwd_rep = getattr(built2, "report", None)

    if case.name == "C":
        ok, witness = _pair_meets_O(cand1, cand2, O, tol)
        if not ok:
            trace.append("candidate interiors do not share an equilibrium point")
            return RibcCertificate("inconclusive", case, cand1, cand2,
                                   controllable=True, ctrb_rank=r,
                                   forward=fwd_rep, backward=bwd_rep,
                                   trace=tuple(trace), warnings=tuple(warnings))
        trace.append("candidate interiors share the equilibrium point %s"
                     % np.array2string(np.asarray(witness), precision=4))

    ok1, how1 = _candidate_gate(sys, cand1, "forward", u_box, tol, margin)
    ok2, how2 = _candidate_gate(sys, cand2, "backward", u_box, tol, margin)
    norms = [rep.max_norm for rep in (fwd_rep, bwd_rep)
             if rep is not None and rep.max_norm is not None]
    for cand in (cand1, cand2):
        extra = getattr(cand, "bound", None)
        if extra is not None:
            norms.append(extra)
    bound = max(norms) if norms else None
    if ok1 and ok2:
        trace.append("sufficiency gates: forward %s, backward %s" % (how1, how2))
        verdict = "RIBC-certified"
    else:
        for label, ok, d in (("forward", ok1, "X1"), ("backward", ok2, "X2")):
            if not ok:
                trace.append("%s witness %s is neither simplicial nor strictly "
                             "invariant; conditions remain necessary only"
                             % (label, d))
        verdict = "inconclusive"
    return RibcCertificate(verdict, case, cand1, cand2, forward=fwd_rep,
                           backward=bwd_rep, bound_M=bound, controllable=True,
                           ctrb_rank=r, trace=tuple(trace),
                           warnings=tuple(warnings))
