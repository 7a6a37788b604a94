"""Controller synthesis: open-loop Gramian steering, piecewise affine
vertex feedback on a star triangulation, growth-factor estimation, and
the three-phase safe steering plan.

The plan stabilizes to a small ball at the origin inside the first
invariant set, bridges with an open-loop Gramian law whose horizon is
halved until the bridge stays strictly inside the outer set, and then
replays a time-reversed run of the second set's contracting law.  Every
piece is validated by simulation while the plan is assembled.

Polytope candidates whose vertices sit on the equilibrium set admit no
strictly inward control there, so no piecewise affine law can contract
them to the origin; those phases fall back to a plain stabilizing gain
and rely on the safety monitor for containment.
"""

from dataclasses import dataclass

import numpy as np

from . import certify, geometry, numerics, sim, system
from .certify import U_BOX_DEFAULT
from .errors import (InputError, NumericalError, PlanError,
                     PreconditionError, SimulationError)
from .geometry import GEOM_TOL
from .sim import DT_DEFAULT, PWA_TIE_TOL, Monitor

PHASE_CAP_STEPS = 10 ** 4
BRIDGE_TF = 1.0
BRIDGE_RETRIES = 12
RHO_SCALE = 1e-3
RHO_PRIME_FACTOR = 10.0


class AffineFeedback:
    """u = K (x - center) + offset."""

    kind = "affine-feedback"
    horizon = None

    def __init__(self, K, offset=None, center=None):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        m, n = self.K.shape
        self.offset = (np.zeros(m) if offset is None
                       else np.asarray(offset, dtype=float).reshape(m))
        self.center = (np.zeros(n) if center is None
                       else np.asarray(center, dtype=float).reshape(n))

    def __call__(self, t, x):
        return self.K @ (np.asarray(x, dtype=float) - self.center) + self.offset

    def closed_loop_affine(self, sys):
        M = sys.A + sys.B @ self.K
        c = sys.a + sys.B @ (self.offset - self.K @ self.center)
        return M, c

    def lift(self, x0):
        return np.asarray(x0, dtype=float)

    def split(self, Z):
        Z = np.atleast_2d(Z)
        return Z, (Z - self.center) @ self.K.T + self.offset


class GramianLaw:
    """Open-loop minimum-energy law between two states of a linear system.

    u(t) = B' exp(-A't) w with w = W^{-1} (-x + exp(-A t_f) y), where W
    is the weighted reachability Gramian on [0, t_f].  Simulation runs
    the law through the augmented linear system in (x, q) with q' = -A'q
    and u = B'q, so no matrix exponentials appear along the path.
    """

    kind = "open-loop-gramian"

    def __init__(self, A, B, x, y, t_f, w, W):
        self.A, self.B = A, B
        self.x, self.y = x, y
        self.t_f = float(t_f)
        self.w, self.W = w, W
        self.horizon = self.t_f

    def __call__(self, t, x):
        return self.B.T @ (numerics.expm(-self.A.T * t) @ self.w)

    def closed_loop_affine(self, sys):
        n = self.A.shape[0]
        M = np.zeros((2 * n, 2 * n))
        M[:n, :n] = sys.A
        M[:n, n:] = self.B @ self.B.T
        M[n:, n:] = -self.A.T
        c = np.concatenate([sys.a, np.zeros(n)])
        return M, c

    def lift(self, x0):
        return np.concatenate([np.asarray(x0, dtype=float), self.w])

    def split(self, Z):
        Z = np.atleast_2d(Z)
        n = self.A.shape[0]
        return Z[:, :n], Z[:, n:] @ self.B


class PwaLaw:
    """Continuous piecewise affine feedback over a star triangulation.

    Each simplex stores the inverse of its augmented vertex matrix, so
    barycentric coordinates are a single matrix-vector product; the
    control is the same combination of the vertex controls.  Boundary
    ties resolve to the lowest simplex index.
    """

    kind = "pwa-feedback"
    horizon = None

    def __init__(self, simplices, Minvs, Us, domain):
        self.simplices = tuple(simplices)
        self.Minvs = Minvs
        self.Us = Us
        self.domain = domain

    def pwa_tables(self):
        return self.Minvs, self.Us

    def __call__(self, t, x):
        xa = np.append(np.asarray(x, dtype=float), 1.0)
        for s in range(self.Minvs.shape[0]):
            lam = self.Minvs[s] @ xa
            if lam.min() >= -PWA_TIE_TOL:
                return self.Us[s] @ lam
        raise SimulationError("state %s is outside the feedback triangulation"
                              % np.array2string(xa[:-1], precision=6))


class SampledLaw:
    """Control samples on a time grid, linearly interpolated, ends held."""

    kind = "sampled"

    def __init__(self, ts, us):
        self.ts = np.asarray(ts, dtype=float)
        self.us = np.atleast_2d(np.asarray(us, dtype=float))
        if self.ts.ndim != 1 or self.us.shape[0] != self.ts.shape[0]:
            raise InputError("need one control row per time sample")
        self.horizon = float(self.ts[-1] - self.ts[0])

    def __call__(self, t, x):
        return np.array([np.interp(t, self.ts, col) for col in self.us.T])


def gramian_steer(sys, x, y, t_f):
    """Law driving a linear system from x to y over [0, t_f] exactly."""
    if t_f <= 0:
        raise InputError("steering horizon must be positive")
    scale = max(1.0, np.abs(sys.A).max(), np.abs(sys.B).max())
    if np.abs(sys.a).max() > 1e-9 * scale:
        raise PreconditionError("open-loop steering needs a driftless system;"
                                " translate an equilibrium to the origin first")
    x = np.asarray(x, dtype=float).reshape(sys.n)
    y = np.asarray(y, dtype=float).reshape(sys.n)
    W = numerics.gramian(sys.A, sys.B, t_f)
    if not numerics.is_positive_definite(W, tol=1e-14 * max(1.0, np.trace(W))):
        raise PreconditionError("reachability Gramian is singular; the pair"
                                " is not controllable over this horizon")
    rhs = -x + numerics.expm(-sys.A * t_f) @ y
    w = np.linalg.solve(W, rhs)
    return GramianLaw(sys.A, sys.B, x, y, t_f, w, W)


def strict_witnesses(sys, P, u_box=U_BOX_DEFAULT, tol=numerics.LP_TOL):
    """Vertex controls pushing strictly inward, at a common margin.

    First maximizes the worst-facet inflow at each vertex; the shared
    margin is the smallest of those best margins, capped at 1 so the
    controls stay minimal-norm.  Returns (controls, margin).
    """
    best = []
    for idx, v in enumerate(P.vertices):
        active = [j for j, inc in enumerate(P.incidence) if idx in inc]
        drift = sys.A @ v + sys.a
        m = sys.m
        rows = [np.hstack([np.array([P.normals[j] @ sys.B]).reshape(1, m),
                           np.ones((1, 1))]) for j in active]
        cut = [np.array([-(P.normals[j] @ drift)]) for j in active]
        eye = np.eye(m)
        rows.append(np.hstack([eye, np.zeros((m, 1))]))
        cut.append(np.full(m, u_box))
        rows.append(np.hstack([-eye, np.zeros((m, 1))]))
        cut.append(np.full(m, u_box))
        rows.append(np.hstack([np.zeros((1, m)), -np.ones((1, 1))]))
        cut.append(np.zeros(1))
        c = np.zeros(m + 1)
        c[m] = -1.0
        res = numerics.lp_solve(c, np.vstack(rows), np.concatenate(cut))
        delta = -res.value if res.optimal else 0.0
        if delta <= tol:
            raise PreconditionError(
                "vertex %d admits no strictly inward control" % idx)
        best.append(delta)
    margin = min(1.0, min(best))
    controls = np.empty((P.n_vertices, sys.m))
    for idx, v in enumerate(P.vertices):
        out = certify.invariance_lp(sys, P, v, "forward", margin, u_box)
        if not out.feasible:
            raise NumericalError("margin re-solve failed at vertex %d" % idx)
        controls[idx] = out.u
    return controls, margin


def pwa_feedback(sys, X1, controls, tol=GEOM_TOL):
    """Interpolate strict vertex controls over a star triangulation at 0.

    The law is zero at the apex and matches the given control at every
    vertex, hence continuous across shared faces.  Controls that fail
    strict inwardness on any active facet are rejected.
    """
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape != (X1.n_vertices, sys.m):
        raise InputError("need one control row per vertex")
    n = X1.dim
    origin = np.zeros(n)
    if not X1.contains(origin, "open", tol=tol):
        raise PreconditionError("the apex 0 must lie strictly inside the set")
    for idx, v in enumerate(X1.vertices):
        f = sys.A @ v + sys.B @ controls[idx] + sys.a
        for j, inc in enumerate(X1.incidence):
            if idx in inc and X1.normals[j] @ f >= 0.0:
                raise PreconditionError(
                    "control at vertex %d is not strictly inward" % idx)
    simplices = geometry.star_triangulate(X1, origin)
    S = len(simplices)
    Minvs = np.empty((S, n + 1, n + 1))
    Us = np.empty((S, sys.m, n + 1))
    scale = max(1.0, np.abs(X1.vertices).max())
    for s, simp in enumerate(simplices):
        pts = simp.points
        Minvs[s] = np.linalg.inv(np.vstack([pts.T, np.ones((1, n + 1))]))
        for k, row in enumerate(pts):
            if np.abs(row).max() <= tol * scale:
                Us[s][:, k] = 0.0
                continue
            gaps = np.abs(X1.vertices - row).max(axis=1)
            idx = int(np.argmin(gaps))
            if gaps[idx] > 1e-9 * scale:
                raise InputError("triangulation produced an unknown vertex")
            Us[s][:, k] = controls[idx]
    return PwaLaw(simplices, Minvs, Us, X1)


@dataclass(frozen=True)
class LambdaEstimate:
    per_horizon: dict
    value: float


def estimate_lambda(sys, X, t_f_grid, eps=1e-3, dt=DT_DEFAULT):
    """Worst dilation of X needed to hold vertex-to-vertex steering runs.

    Steers between every ordered pair of vertices pulled inward by eps,
    records the largest gauge value along each run, and returns the
    best (smallest) worst case over the candidate horizons.
    """
    verts = (1.0 - eps) * X.vertices
    per = {}
    for t_f in t_f_grid:
        worst = 0.0
        for i in range(len(verts)):
            for j in range(len(verts)):
                if i == j:
                    continue
                law = gramian_steer(sys, verts[i], verts[j], t_f)
                traj = sim.integrate(sys, law, verts[i], t_f, dt)
                g = float((traj.x @ X.normals.T / X.offsets).max())
                worst = max(worst, g)
        per[float(t_f)] = worst
    return LambdaEstimate(per, min(per.values()))


@dataclass(frozen=True)
class Phase:
    name: str
    law: object
    horizon: float
    until: tuple  # (center, radius) ball termination, or None
    container: object


@dataclass(frozen=True)
class SteeringPlan:
    sys: object
    start: np.ndarray
    target: np.ndarray
    phases: tuple
    rho: float
    rho_prime: float
    bound_M: float
    endpoint_error: float


def _unwrap(candidate):
    return candidate.set if hasattr(candidate, "provenance") else candidate


def _candidate_radius(s):
    if hasattr(s, "vertices"):
        return float(np.linalg.norm(s.vertices, axis=1).min())
    lam_max = max(e.real for e in numerics.eigenvalues(s.P))
    return float(np.sqrt(s.c / lam_max))


def _phase_law(dir_sys, cand_set, u_box):
    """Contracting law on a candidate set, for the already-directed system."""
    if hasattr(cand_set, "P"):
        return AffineFeedback(cand_set.K, center=cand_set.center)
    try:
        controls, _ = strict_witnesses(dir_sys, cand_set, u_box)
        return pwa_feedback(dir_sys, cand_set, controls)
    except PreconditionError:
        return AffineFeedback(numerics.stabilize(dir_sys.A, dir_sys.B))


def ribc_steering_plan(sys, X, Xprime, X1, X2, x, y, rho=None,
                       dt=DT_DEFAULT, u_box=U_BOX_DEFAULT):
    """Assemble and validate the stabilize / bridge / retrace plan.

    Phase 1 contracts X1 until the state enters the rho-ball at the
    origin; phase 3 runs the time-reversed dynamics from the target
    under X2's law until the same ball, and its reversed control tape
    is what the plan executes forward; phase 2 bridges the two ball
    points with an open-loop law whose horizon is halved until the
    bridge stays strictly inside Xprime.  The returned plan carries the
    measured control bound and final-state error.
    """
    x = np.asarray(x, dtype=float).reshape(sys.n)
    y = np.asarray(y, dtype=float).reshape(sys.n)
    scale = max(1.0, np.abs(sys.A).max(), np.abs(sys.B).max())
    if np.abs(sys.a).max() > 1e-9 * scale:
        raise PreconditionError("plan assembly expects the equilibrium"
                                " translated to the origin")
    if not (X.contains(x, "open") and X.contains(y, "open")):
        raise PreconditionError("start and target must be interior points")
    S1, S2 = _unwrap(X1), _unwrap(X2)
    if rho is None:
        rho = RHO_SCALE * min(_candidate_radius(S1), _candidate_radius(S2))
    rho = float(rho)
    rho_prime = RHO_PRIME_FACTOR * rho
    origin = np.zeros(sys.n)
    cap = PHASE_CAP_STEPS * dt
    guard = Monitor("Xprime", Xprime, "open", "abort")

    law1 = _phase_law(sys, S1, u_box)
    traj1 = sim.integrate(sys, law1, x, cap, dt, monitors=(guard,),
                          until_ball=(origin, rho))
    if "Xprime" in traj1.events:
        raise PlanError("stabilize", "left the safe interior at t=%.4f"
                        % traj1.events["Xprime"])
    if "ball" not in traj1.events:
        raise PlanError("stabilize", "did not reach the %.3g-ball within"
                        " %g time units" % (rho, cap))
    p1 = traj1.endpoint

    bsys = system.backward(sys)
    law3b = _phase_law(bsys, S2, u_box)
    traj3b = sim.integrate(bsys, law3b, y, cap, dt, monitors=(guard,),
                           until_ball=(origin, rho))
    if "Xprime" in traj3b.events:
        raise PlanError("retrace", "reversed run left the safe interior"
                        " at t=%.4f" % traj3b.events["Xprime"])
    if "ball" not in traj3b.events:
        raise PlanError("retrace", "reversed run did not reach the %.3g-ball"
                        " within %g time units" % (rho, cap))
    p3 = traj3b.endpoint
    T3 = traj3b.duration
    law3 = SampledLaw((T3 - traj3b.t)[::-1], traj3b.u[::-1])

    t_f = BRIDGE_TF
    traj2 = None
    law2 = None
    for attempt in range(BRIDGE_RETRIES + 1):
        try:
            law2 = gramian_steer(sys, p1, p3, t_f)
        except PreconditionError:
            if attempt == 0:
                raise  # singular at the base horizon: not a retry artifact
            raise PlanError("bridge", "still unsafe at horizon %.3g and the"
                            " steering problem degenerates below it"
                            % (2.0 * t_f))
        traj2 = sim.integrate(sys, law2, p1, t_f, dt, monitors=(guard,))
        if "Xprime" not in traj2.events:
            break
        t_f *= 0.5
    else:
        raise PlanError("bridge", "left the safe interior even at the"
                        " shortest horizon %.3g" % t_f)

    traj3f = sim.integrate(sys, law3, traj2.endpoint, T3, dt,
                           monitors=(guard,))
    if "Xprime" in traj3f.events:
        raise PlanError("retrace", "forward replay left the safe interior"
                        " at t=%.4f" % traj3f.events["Xprime"])
    err = float(np.linalg.norm(traj3f.endpoint - y))
    if err > rho_prime:
        raise PlanError("retrace", "endpoint missed the target by %.3g"
                        " (allowed %.3g)" % (err, rho_prime))

    bound = 0.0
    for traj in (traj1, traj2, traj3f):
        if traj.u.size:
            bound = max(bound, float(np.abs(traj.u).max()))
    phases = (Phase("stabilize", law1, cap, (origin, rho), S1),
              Phase("bridge", law2, law2.t_f, None, Xprime),
              Phase("retrace", law3, T3, None, S2))
    return SteeringPlan(sys, x, y, phases, rho, rho_prime, bound, err)
