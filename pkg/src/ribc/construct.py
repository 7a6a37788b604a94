"""Builders for forward/backward invariant witness sets between X and X'.

Two routes: push the failing vertices of X outward along the equilibrium
set (possible exactly when equilibrium directions plus input directions
span the state space), or fall back to a quadratic-form sublevel set of a
stabilized closed loop.  Both re-verify everything they claim.
"""

from dataclasses import dataclass

import numpy as np

from . import certify, geometry, numerics, system
from .errors import ConstructionError, InputError, PreconditionError
from .geometry import GEOM_TOL, Polytope


@dataclass(frozen=True)
class Ellipsoid:
    """Sublevel set {x : (x-center)'P(x-center) <= c} of a decaying quadratic."""
    P: np.ndarray
    c: float
    K: np.ndarray
    direction: str
    center: np.ndarray

    def contains_open(self, x, tol=GEOM_TOL):
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ self.P @ d) < self.c - tol

    def contains_closed(self, x, tol=GEOM_TOL):
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ self.P @ d) <= self.c + tol

    def facet_max(self, h):
        """Largest value of h.x over the set (exact)."""
        Pinv_h = np.linalg.solve(self.P, h)
        return float(h @ self.center) + np.sqrt(self.c * float(h @ Pinv_h))

    def boundary_points(self, count, seed=0):
        """Sample points on the boundary shell."""
        rng = np.random.default_rng(seed)
        n = self.P.shape[0]
        L = np.linalg.cholesky(self.P)
        z = rng.standard_normal((count, n))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        # x solves L'(x-center)/sqrt(c) mapped from the unit sphere
        return self.center + np.sqrt(self.c) * np.linalg.solve(L.T, z.T).T


@dataclass(frozen=True)
class InvariantCandidate:
    shape: str  # "polytope" or "ellipsoid"
    set: object
    direction: str
    provenance: str
    report: object = None
    xbar: np.ndarray = None
    ubar: np.ndarray = None
    bound: float = None


def _directed(sys, direction):
    if direction == "forward":
        return sys
    if direction == "backward":
        return system.backward(sys)
    raise InputError("direction must be forward or backward")


def extend_polytope_along_O(sys, X, Xprime, direction="forward", alpha=1.5,
                            u_box=certify.U_BOX_DEFAULT, tol=GEOM_TOL):
    """Grow X along the equilibrium set until the vertex conditions solve.

    Each failing vertex v splits as v = o + b with o an equilibrium point
    and b an input-reachable offset; appending a stretched copy of o gives
    the flow room to push -b back.  The stretch shrinks geometrically
    toward 1 until the new points sit strictly inside X' and the vertex
    conditions of the grown polytope solve.
    """
    if alpha <= 1.0:
        raise InputError("stretch factor must exceed 1")
    if np.abs(sys.a).max() > 1e-9:
        raise PreconditionError("extension expects the offset-free normal form")
    O = system.equilibrium_set(sys)
    if not O.nonempty:
        raise PreconditionError("equilibrium set is empty")
    span = np.hstack([O.basis, sys.B])
    if numerics.rank(span) < sys.n:
        raise PreconditionError("equilibrium directions plus inputs do not "
                                "span the state space")

    failing = []
    for v in X.vertices:
        out = certify.invariance_lp(sys, X, v, direction, 0.0, u_box)
        if not out.feasible:
            failing.append(v)
    if not failing:
        rep = certify.check_invariance(sys, X, direction, 0.0, u_box)
        return InvariantCandidate("polytope", X, direction, "already-invariant",
                                  rep)

    anchors = []
    for v in failing:
        z, *_ = np.linalg.lstsq(span, v, rcond=None)
        anchors.append(O.basis @ z[:O.kappa])

    for k in range(21):
        ak = 1.0 + (alpha - 1.0) * 0.5 ** k
        stretched = [ak * o for o in anchors]
        if not all(Xprime.contains(p, "open", tol=tol) for p in stretched):
            continue
        try:
            cand = geometry.from_vertices(np.vstack([X.vertices, stretched]))
        except InputError:
            continue
        if not all(Xprime.contains(v, "closed", tol=tol) for v in cand.vertices):
            continue
        if not all(cand.contains(o, "open", tol=tol) for o in anchors):
            continue
        rep = certify.check_invariance(sys, cand, direction, 0.0, u_box)
        if rep.solvable:
            return InvariantCandidate("polytope", cand, direction,
                                      "equilibrium-extension", rep)
    raise ConstructionError("no stretch factor produced an invariant polytope "
                            "inside X'")


def ellipsoid_invariant(sys, X, Xprime, direction="forward", pole_margin=0.5,
                        tol=GEOM_TOL):
    """Quadratic sublevel set containing X, inside X', invariant by feedback.

    Stabilizes the (possibly time-reversed) pair, solves for a decaying
    quadratic, and levels it to cover the vertices of X.  The pole margin
    doubles on containment failure; a quadratic-regulator solve is the
    last resort since it tends to balance the axes better.
    """
    if np.abs(sys.a).max() > 1e-9:
        raise PreconditionError("ellipsoid route expects the offset-free "
                                "normal form")
    d = _directed(sys, direction)
    n = sys.n

    tried = []
    for attempt in range(5):
        try:
            K = numerics.stabilize(d.A, d.B, pole_margin * 2 ** attempt)
            P = numerics.solve_lyapunov(d.A + d.B @ K, np.eye(n))
        except Exception:
            continue
        tried.append(("lyapunov-ellipsoid", P, K))
    try:
        Pr, Kr = numerics.solve_riccati(d.A, d.B)
        tried.append(("riccati-ellipsoid", Pr, Kr))
    except Exception:
        pass

    for label, P, K in tried:
        c = max(float(v @ P @ v) for v in X.vertices)
        E = Ellipsoid(P, c, K, direction, np.zeros(n))
        if all(E.facet_max(h) <= off + tol
               for h, off in zip(Xprime.normals, Xprime.offsets)):
            Acl = d.A + d.B @ K
            decay = Acl.T @ P + P @ Acl
            eigs = numerics.eigenvalues((decay + decay.T) / 2.0)
            if max(e.real for e in eigs) > -1e-9:
                continue
            bound = float(max(np.sqrt(c * k_row @ np.linalg.solve(P, k_row))
                              for k_row in K))
            return InvariantCandidate("ellipsoid", E, direction, label,
                                      xbar=np.zeros(n), bound=bound)
    raise ConstructionError("no stabilizing quadratic set fits inside X'")


def _chebyshev_along_O(O, Xprime, tol=GEOM_TOL):
    """Point of the equilibrium set with the largest margin inside X'."""
    D = O.basis
    k = D.shape[1]
    G = np.hstack([Xprime.normals @ D, np.ones((Xprime.n_facets, 1))])
    h = Xprime.offsets - Xprime.normals @ O.x0
    c = np.zeros(k + 1)
    c[k] = -1.0
    res = numerics.lp_solve(c, G, h)
    if not res.optimal or res.x[k] <= tol:
        raise ConstructionError("no equilibrium point clears the interior of X'")
    return O.x0 + D @ res.x[:k]


def search_candidates(sys, X, Xprime, case, alpha=1.5,
                      u_box=certify.U_BOX_DEFAULT, pole_margin=0.5,
                      tol=GEOM_TOL):
    """Find a forward-invariant and a backward-invariant set between X and X'.

    Tries, per direction: X itself, the equilibrium extension, then the
    quadratic sublevel route.  Everything runs in coordinates centered on
    an equilibrium point inside X (or inside X' when X has none), and the
    winners are mapped back and re-verified in the original frame.
    """
    if case.name not in ("B", "C"):
        raise InputError("candidate search applies to cases B and C only")
    O = system.equilibrium_set(sys)
    if case.name == "B":
        xbar = case.witness_inner
    else:
        xbar = _chebyshev_along_O(O, Xprime, tol)
    lin, ubar = system.translate_to_linear(sys, xbar)
    Xn = X.translate(-xbar)
    Xpn = Xprime.translate(-xbar)
    On = system.equilibrium_set(lin)

    def admissible(cand):
        if case.name != "C":
            return True
        # the pair condition later needs each interior to reach equilibria
        if cand.shape == "polytope":
            return cand.set.intersects_affine_open(On.x0, On.basis).hit
        return True  # quadratic sets are centered on an equilibrium point

    def build(direction):
        routes = []

        def route_self():
            rep = certify.check_invariance(lin, Xn, direction, 0.0, u_box)
            if rep.solvable:
                return InvariantCandidate("polytope", Xn, direction,
                                          "inner-polytope", rep)
            return None

        def route_extend():
            try:
                return extend_polytope_along_O(lin, Xn, Xpn, direction,
                                               alpha, u_box, tol)
            except (PreconditionError, ConstructionError):
                return None

        def route_ellipsoid():
            try:
                return ellipsoid_invariant(lin, Xn, Xpn, direction,
                                           pole_margin, tol)
            except (PreconditionError, ConstructionError):
                return None

        for route in (route_self, route_extend, route_ellipsoid):
            cand = route()
            if cand is not None and admissible(cand):
                return cand
        raise ConstructionError("no %s-invariant candidate found" % direction)

    return (_to_original(build("forward"), sys, X, Xprime, xbar, ubar, u_box, tol),
            _to_original(build("backward"), sys, X, Xprime, xbar, ubar, u_box, tol))


def _to_original(cand, sys, X, Xprime, xbar, ubar, u_box, tol):
    """Shift a candidate back to the original frame and re-verify it there."""
    if cand.shape == "polytope":
        P = cand.set.translate(xbar)
        rep = certify.check_invariance(sys, P, cand.direction, 0.0, u_box)
        if not rep.solvable:
            raise ConstructionError("candidate failed re-verification in the "
                                    "original frame")
        _check_nesting(P, X, Xprime, tol)
        return InvariantCandidate("polytope", P, cand.direction,
                                  cand.provenance, rep, xbar, ubar)
    E = cand.set
    E = Ellipsoid(E.P, E.c, E.K, E.direction, xbar + E.center)
    for v in X.vertices:
        if not E.contains_closed(v, tol):
            raise ConstructionError("candidate does not cover X")
    for h, off in zip(Xprime.normals, Xprime.offsets):
        if E.facet_max(h) > off + tol:
            raise ConstructionError("candidate leaks out of X'")
    bound = cand.bound + float(np.abs(ubar).max()) if cand.bound is not None else None
    return InvariantCandidate("ellipsoid", E, cand.direction, cand.provenance,
                              None, xbar, ubar, bound)


def _check_nesting(P, X, Xprime, tol):
    for v in X.vertices:
        if not P.contains(v, "closed", tol=tol):
            raise ConstructionError("candidate does not cover X")
    for v in P.vertices:
        if not Xprime.contains(v, "closed", tol=tol):
            raise ConstructionError("candidate leaks out of X'")
