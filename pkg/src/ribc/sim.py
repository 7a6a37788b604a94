"""Trajectory integration with containment monitoring and exit events.

Laws plug in through a small protocol instead of a base class.  A law
that exposes closed_loop_affine/lift/split runs through the compiled
affine kernel (state feedback, and open-loop Gramian laws via state
augmentation).  A law that exposes pwa_tables runs through the
piecewise kernel.  Anything else is treated as a plain callable
u = law(t, x) and stepped in Python.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InputError, SimulationError

DT_DEFAULT = 1e-3
# bisection stops on a 1e-10 time bracket; the facet functional at the
# returned instant then sits well under 1e-9 for unit-scale fields
EVENT_WINDOW = 1e-10
CHUNK = 4096
PWA_TIE_TOL = 1e-12


@dataclass(frozen=True)
class Monitor:
    """A named set watched along the trajectory.

    mode "open" flags any sample on or outside the boundary, "closed"
    only samples strictly outside.  Action "abort" truncates the run at
    the refined crossing; "record" notes the first crossing and keeps
    integrating.
    """
    name: str
    region: object
    mode: str = "open"
    action: str = "record"

    def __post_init__(self):
        if self.mode not in ("open", "closed"):
            raise InputError("monitor mode must be open or closed")
        if self.action not in ("record", "abort"):
            raise InputError("monitor action must be record or abort")


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    events: dict = field(default_factory=dict)

    @property
    def endpoint(self):
        return self.x[-1]

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])


@dataclass(frozen=True)
class PlanReport:
    contained: bool
    violated_phase: str
    endpoint_error: float
    max_control: float
    phase_times: tuple
    trajectories: tuple


def region_functional(region, X):
    """Signed containment values, one per row; negative strictly inside."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if hasattr(region, "normals"):
        return (X @ region.normals.T - region.offsets).max(axis=1)
    if hasattr(region, "P"):
        D = X - region.center
        return np.einsum("ij,jk,ik->i", D, region.P, D) - region.c
    raise InputError("monitor region must expose facets or a quadratic form")


def _violated(mon, vals):
    return vals >= 0.0 if mon.mode == "open" else vals > 0.0


def _rk4_step(fieldfun, t, z, s):
    k1 = fieldfun(t, z)
    k2 = fieldfun(t + 0.5 * s, z + (0.5 * s) * k1)
    k3 = fieldfun(t + 0.5 * s, z + (0.5 * s) * k2)
    k4 = fieldfun(t + s, z + s * k3)
    return z + (s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _refine_event(mon, fieldfun, state_of_z, t_prev, z_prev, step):
    """Bisect the crossing time inside one step; g(prev) < 0 <= g(next)."""
    lo, hi = 0.0, step
    z_hi = _rk4_step(fieldfun, t_prev, z_prev, step)
    for _ in range(80):
        if hi - lo <= EVENT_WINDOW:
            break
        mid = 0.5 * (lo + hi)
        z_mid = _rk4_step(fieldfun, t_prev, z_prev, mid)
        val = region_functional(mon.region, state_of_z(z_mid))[0]
        if _violated(mon, np.array([val]))[0]:
            hi, z_hi = mid, z_mid
        else:
            lo = mid
    return t_prev + hi, z_hi


def integrate(sys, law, x0, horizon, dt=DT_DEFAULT, monitors=(),
              until_ball=None):
    """Fixed-step classical 4th-order run of the closed loop.

    The grid is uniform with step dt plus one shortened final step that
    lands exactly on the horizon.  The run ends there, at an abort
    monitor's refined crossing, or at the first sample inside the
    until_ball target (center, radius), whichever comes first.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != sys.n:
        raise InputError("initial state has dimension %d, system needs %d"
                         % (x0.shape[0], sys.n))
    if dt <= 0:
        raise InputError("dt must be positive")
    if horizon < 0:
        raise InputError("horizon must be nonnegative")
    nsteps = int(np.floor(horizon / dt + 1e-9))
    remainder = horizon - nsteps * dt
    if remainder <= 1e-12 * max(1.0, horizon):
        remainder = 0.0

    if hasattr(law, "closed_loop_affine"):
        M, c = law.closed_loop_affine(sys)
        z0 = law.lift(x0)

        def advance(z, t0, k):
            Z = _kernels.rk4_affine(M, c, z, dt, k)
            return Z, None, k

        def fieldfun(t, z):
            return M @ z + c

        def state_of(Z):
            return law.split(np.atleast_2d(Z))[0]

        def controls_of(Z, U):
            return law.split(np.atleast_2d(Z))[1]

    elif hasattr(law, "pwa_tables"):
        Minvs, Us = law.pwa_tables()
        z0 = x0

        def advance(z, t0, k):
            st, ct, stop = _kernels.rk4_pwa(sys.A, sys.B, sys.a, Minvs, Us,
                                            z, dt, k, PWA_TIE_TOL)
            return st, ct, (stop if stop >= 0 else k)

        def fieldfun(t, z):
            return sys.A @ z + sys.B @ law(t, z) + sys.a

        def state_of(Z):
            return np.atleast_2d(Z)

        def controls_of(Z, U):
            return U

    else:
        z0 = x0

        def fieldfun(t, z):
            return sys.A @ z + sys.B @ law(t, z) + sys.a

        def advance(z, t0, k):
            Z = np.empty((k + 1, sys.n))
            U = np.empty((k + 1, sys.m))
            Z[0] = z
            U[0] = law(t0, z)
            x = z
            for i in range(k):
                x = _rk4_step(fieldfun, t0 + i * dt, x, dt)
                Z[i + 1] = x
                U[i + 1] = law(t0 + (i + 1) * dt, x)
            return Z, U, k

        def state_of(Z):
            return np.atleast_2d(Z)

        def controls_of(Z, U):
            return U

    def state_row(z):
        return state_of(z[None, :])[0]

    def control_at(t, z):
        if hasattr(law, "closed_loop_affine"):
            return law.split(z[None, :])[1][0]
        return law(t, state_row(z))

    n, m = sys.n, sys.m
    X = np.empty((nsteps + 2, n))
    U = np.empty((nsteps + 2, m))
    X[0] = x0
    U[0] = control_at(0.0, z0)
    events = {}
    fired = set()
    center = radius = None
    if until_ball is not None:
        center = np.asarray(until_ball[0], dtype=float)
        radius = float(until_ball[1])

    # scan the initial sample before stepping
    terminated = False
    for mon in monitors:
        val = region_functional(mon.region, x0)[0]
        if _violated(mon, np.array([val]))[0]:
            events[mon.name] = 0.0
            fired.add(mon.name)
            if mon.action == "abort":
                terminated = True
    if not terminated and center is not None:
        if np.linalg.norm(x0 - center) <= radius:
            events["ball"] = 0.0
            terminated = True
    if terminated or (nsteps == 0 and remainder == 0.0):
        return Trajectory(np.zeros(1), X[:1].copy(), U[:1].copy(), events)

    count = 1
    zcur = z0
    refined_tail = None  # (t_e, x_e, u_e) appended after an abort
    while count <= nsteps and not terminated:
        k = min(CHUNK, nsteps - (count - 1))
        t0 = (count - 1) * dt
        Zfull, Uraw, n_good = advance(zcur, t0, k)
        S = state_of(Zfull)[1:]

        hits = []  # (local_index, monitor)
        for mon in monitors:
            if mon.name in fired:
                continue
            mask = _violated(mon, region_functional(mon.region, S))
            where = np.flatnonzero(mask)
            if where.size:
                hits.append((int(where[0]), mon))
        abort_hits = [h for h in hits if h[1].action == "abort"]
        j_abort = min(h[0] for h in abort_hits) if abort_hits else None
        j_ball = None
        if center is not None and S.shape[0]:
            dist = np.linalg.norm(S - center, axis=1)
            where = np.flatnonzero(dist <= radius)
            if where.size:
                j_ball = int(where[0])

        if j_abort is not None and (j_ball is None or j_abort <= j_ball):
            cutoff, outcome = j_abort, "abort"
        elif j_ball is not None:
            cutoff, outcome = j_ball, "ball"
        elif n_good < k:
            cutoff, outcome = n_good, "domain"
        else:
            cutoff, outcome = k, None

        # record monitors that fired inside the kept range
        for j, mon in sorted(hits, key=lambda h: h[0]):
            if j > cutoff or mon.name in fired:
                continue
            t_e, _ = _refine_event(mon, fieldfun, state_of,
                                   t0 + j * dt, Zfull[j], dt)
            events[mon.name] = t_e
            fired.add(mon.name)

        if outcome == "abort":
            mon = min(abort_hits, key=lambda h: h[0])[1]
            t_e, z_e = _refine_event(mon, fieldfun, state_of,
                                     t0 + j_abort * dt, Zfull[j_abort], dt)
            kept = j_abort  # new rows strictly before the crossing
            X[count:count + kept] = S[:kept]
            U[count:count + kept] = controls_of(Zfull, Uraw)[1:][:kept]
            count += kept
            if t_e > (count - 1) * dt + 1e-15:
                refined_tail = (t_e, state_row(z_e), control_at(t_e, z_e))
            terminated = True
        elif outcome == "ball":
            kept = j_ball + 1
            X[count:count + kept] = S[:kept]
            U[count:count + kept] = controls_of(Zfull, Uraw)[1:][:kept]
            count += kept
            events["ball"] = (count - 1) * dt
            terminated = True
        elif outcome == "domain":
            X[count:count + n_good] = S
            U[count:count + n_good] = controls_of(Zfull, Uraw)[1:][:n_good]
            count += n_good
            t_bad = (count - 1) * dt
            raise SimulationError(
                "law has no value just past t=%.6f near x=%s"
                % (t_bad, np.array2string(X[count - 1], precision=6)))
        else:
            X[count:count + k] = S
            U[count:count + k] = controls_of(Zfull, Uraw)[1:]
            count += k
            zcur = Zfull[-1]

    tail_time = None
    if not terminated and remainder > 0.0:
        t0 = nsteps * dt
        z_end = _rk4_step(fieldfun, t0, zcur, remainder)
        x_end = state_row(z_end)
        aborted = None
        for mon in monitors:
            if mon.name in fired:
                continue
            val = region_functional(mon.region, x_end)[0]
            if not _violated(mon, np.array([val]))[0]:
                continue
            t_e, z_e = _refine_event(mon, fieldfun, state_of, t0, zcur,
                                     remainder)
            events[mon.name] = t_e
            fired.add(mon.name)
            if mon.action == "abort" and (aborted is None or t_e < aborted[0]):
                aborted = (t_e, z_e)
        if aborted is not None:
            t_e, z_e = aborted
            if t_e > t0 + 1e-15:
                refined_tail = (t_e, state_row(z_e), control_at(t_e, z_e))
        else:
            X[count] = x_end
            U[count] = control_at(horizon, z_end)
            count += 1
            tail_time = horizon
            if center is not None and np.linalg.norm(x_end - center) <= radius:
                events["ball"] = horizon

    t = np.arange(count, dtype=float) * dt
    if tail_time is not None:
        t[-1] = tail_time
    Xo, Uo = X[:count].copy(), U[:count].copy()
    if refined_tail is not None:
        t_e, x_e, u_e = refined_tail
        t = np.append(t, t_e)
        Xo = np.vstack([Xo, x_e])
        Uo = np.vstack([Uo, u_e])
    return Trajectory(t, Xo, Uo, events)


def verify_plan(plan, Xprime, dt=DT_DEFAULT):
    """Re-execute a steering plan phase by phase under an abort guard.

    Every phase runs with an open-mode abort monitor on Xprime; the
    report carries the first violating phase (or none), the distance of
    the final state from the plan target, the largest sampled control
    sup norm, and per-phase durations.
    """
    guard = Monitor("Xprime", Xprime, "open", "abort")
    x = np.asarray(plan.start, dtype=float)
    trajectories = []
    times = []
    violated = None
    max_u = 0.0
    for phase in plan.phases:
        traj = integrate(plan.sys, phase.law, x, phase.horizon, dt,
                         monitors=(guard,), until_ball=phase.until)
        trajectories.append(traj)
        times.append((phase.name, traj.duration))
        if traj.u.size:
            max_u = max(max_u, float(np.abs(traj.u).max()))
        x = traj.endpoint
        if "Xprime" in traj.events:
            violated = phase.name
            break
    err = float(np.linalg.norm(x - np.asarray(plan.target, dtype=float)))
    return PlanReport(violated is None, violated, err, max_u,
                      tuple(times), tuple(trajectories))
