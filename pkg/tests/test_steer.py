import numpy as np
import pytest

from conftest import cube
from ribc import certify, geometry, numerics, sim, steer, system
from ribc.errors import InputError, PlanError, PreconditionError


def reference_endpoint(sys, law, x0, horizon, tol=1e-7):
    """Halve the step until the endpoint settles, then return it."""
    dt = 1e-3
    prev = sim.integrate(sys, law, x0, horizon, dt=dt).endpoint
    for _ in range(6):
        dt *= 0.5
        cur = sim.integrate(sys, law, x0, horizon, dt=dt).endpoint
        if np.linalg.norm(cur - prev) < tol:
            return cur
        prev = cur
    return prev


def hexagon():
    return geometry.from_vertices([(2.25, 0), (1, 1), (-1, 1),
                                   (-2.25, 0), (-1, -1), (1, -1)])


def test_gramian_round_trip(skew_pair):
    x = np.array([0.4, -0.1])
    law = steer.gramian_steer(skew_pair, x, x, 1.5)
    traj = sim.integrate(skew_pair, law, x, 1.5)
    assert np.linalg.norm(traj.endpoint - x) <= 1e-9


def test_gramian_double_integrator(dbl_int):
    y = np.array([1.0, 0.0])
    law = steer.gramian_steer(dbl_int, np.zeros(2), y, 1.0)
    end = reference_endpoint(dbl_int, law, np.zeros(2), 1.0)
    assert np.linalg.norm(end - y) <= 1e-5 * (1 + np.linalg.norm(y))


def test_gramian_endpoint_accuracy_random(skew_pair, circuit):
    rng = np.random.default_rng(7)
    for k in range(50):
        plant = skew_pair if k % 2 == 0 else circuit
        x = rng.uniform(-1, 1, plant.n)
        y = rng.uniform(-1, 1, plant.n)
        t_f = rng.uniform(0.3, 2.5)
        law = steer.gramian_steer(plant, x, y, t_f)
        traj = sim.integrate(plant, law, x, t_f)
        err = np.linalg.norm(traj.endpoint - y)
        assert err <= 1e-5 * (1 + np.linalg.norm(y))


def test_gramian_law_matches_closed_form(circuit):
    # the simulated control channel must track B' exp(-A't) w
    x = np.array([0.2, 0.2, 0.2])
    y = np.array([-0.1, 0.1, -0.1])
    law = steer.gramian_steer(circuit, x, y, 1.0)
    traj = sim.integrate(circuit, law, x, 1.0)
    for k in (0, 137, 500, 999, len(traj.t) - 1):
        u_formula = law(traj.t[k], None)
        assert np.abs(traj.u[k] - u_formula).max() <= 1e-9


def test_gramian_linearity(skew_pair):
    x = np.array([0.7, -0.4])
    y = np.array([-0.2, 0.5])
    fwd = sim.integrate(skew_pair, steer.gramian_steer(skew_pair, x, y, 1.2),
                        x, 1.2)
    neg = sim.integrate(skew_pair, steer.gramian_steer(skew_pair, -x, -y, 1.2),
                        -x, 1.2)
    assert np.abs(fwd.x + neg.x).max() <= 1e-9


def test_gramian_preconditions(skew_pair, dbl_int):
    with pytest.raises(InputError):
        steer.gramian_steer(skew_pair, np.zeros(2), np.ones(2), 0.0)
    drifting = system.AffineSystem(skew_pair.A, skew_pair.B,
                                   np.array([0.3, 0.0]))
    with pytest.raises(PreconditionError):
        steer.gramian_steer(drifting, np.zeros(2), np.ones(2), 1.0)
    decoupled = system.AffineSystem(np.diag([1.0, 2.0]),
                                    np.array([[1.0], [0.0]]), np.zeros(2))
    with pytest.raises(PreconditionError):
        steer.gramian_steer(decoupled, np.zeros(2), np.ones(2), 1.0)


def test_strict_witnesses_square(skew_pair, square):
    controls, margin = steer.strict_witnesses(skew_pair, square, u_box=2.0)
    assert margin == pytest.approx(0.5, abs=1e-9)
    known = {(1.0, 1.0): -1.5, (1.0, -1.0): 0.5,
             (-1.0, -1.0): 1.5, (-1.0, 1.0): -0.5}
    for v, u in zip(square.vertices, controls):
        assert u[0] == pytest.approx(known[tuple(v)], abs=1e-9)
    # every vertex control clears all its facets by the shared margin
    for idx, v in enumerate(square.vertices):
        f = skew_pair.A @ v + skew_pair.B @ controls[idx]
        for j, inc in enumerate(square.incidence):
            if idx in inc:
                assert square.normals[j] @ f <= -margin + 1e-9


def test_strict_witnesses_need_input_room(skew_pair, square):
    # at (1,1) the drift alone uses up a unit input; no margin is left
    with pytest.raises(PreconditionError):
        steer.strict_witnesses(skew_pair, square, u_box=1.0)


def test_strict_witnesses_equilibrium_vertices(skew_pair):
    # the axis vertices are possible equilibria; nothing points inward there
    with pytest.raises(PreconditionError):
        steer.strict_witnesses(system.backward(skew_pair), hexagon(),
                               u_box=8.0)


def test_pwa_feedback_interpolates(skew_pair, square):
    controls, _ = steer.strict_witnesses(skew_pair, square, u_box=2.0)
    law = steer.pwa_feedback(skew_pair, square, controls)
    assert np.abs(law(0.0, np.zeros(2))).max() == 0.0
    for v, u in zip(square.vertices, controls):
        assert law(0.0, v) == pytest.approx(u, abs=1e-9)
    # spoke midpoints lie on shared faces; both simplices must agree
    Minvs, Us = law.pwa_tables()
    for v in square.vertices:
        mid = np.append(0.5 * v, 1.0)
        owners = [s for s in range(Minvs.shape[0])
                  if (Minvs[s] @ mid).min() >= -1e-9]
        assert len(owners) == 2
        u_a = Us[owners[0]] @ (Minvs[owners[0]] @ mid)
        u_b = Us[owners[1]] @ (Minvs[owners[1]] @ mid)
        assert np.abs(u_a - u_b).max() <= 1e-12


def test_pwa_feedback_rejects_weak_controls(skew_pair, square):
    # feasible-but-tangent witnesses cannot make a contracting law
    flat = {(-1.0, -1.0): 1.0, (1.0, -1.0): 0.0,
            (1.0, 1.0): -1.0, (-1.0, 1.0): 0.0}
    controls = np.array([[flat[tuple(v)]] for v in square.vertices])
    with pytest.raises(PreconditionError):
        steer.pwa_feedback(skew_pair, square, controls)


def test_pwa_feedback_validates_inputs(skew_pair, square):
    controls, _ = steer.strict_witnesses(skew_pair, square, u_box=2.0)
    with pytest.raises(InputError):
        steer.pwa_feedback(skew_pair, square, controls[:2])
    shifted = geometry.from_vertices(square.vertices + np.array([2.0, 0.0]))
    with pytest.raises(PreconditionError):
        steer.pwa_feedback(skew_pair, shifted, controls)


def test_pwa_closed_loop_invariance(skew_pair, square):
    controls, _ = steer.strict_witnesses(skew_pair, square, u_box=2.0)
    law = steer.pwa_feedback(skew_pair, square, controls)
    horizon = 10.0 / np.linalg.norm(skew_pair.A, 2)
    rng = np.random.default_rng(11)
    starts = 0.999 * rng.uniform(-1.0, 1.0, size=(500, 2))
    for x0 in starts:
        traj = sim.integrate(skew_pair, law, x0, horizon)
        assert np.abs(traj.x).max() <= 1.0 + 1e-9


def test_sampled_law_interpolation():
    law = steer.SampledLaw([0.0, 1.0], [[0.0], [2.0]])
    assert law(0.5, None) == pytest.approx([1.0])
    assert law(-1.0, None) == pytest.approx([0.0])  # ends held
    assert law(5.0, None) == pytest.approx([2.0])
    with pytest.raises(InputError):
        steer.SampledLaw([0.0, 1.0, 2.0], [[0.0], [2.0]])


def test_estimate_lambda_square(skew_pair, square):
    est = steer.estimate_lambda(skew_pair, square, (0.25, 0.5, 1.0, 2.0, 4.0))
    assert set(est.per_horizon) == {0.25, 0.5, 1.0, 2.0, 4.0}
    for worst in est.per_horizon.values():
        assert worst > 1.8
    assert est.value == min(est.per_horizon.values())
    assert est.value > 1.8


def test_estimate_lambda_single_integrator():
    plant = system.AffineSystem(np.zeros((1, 1)), np.ones((1, 1)), np.zeros(1))
    seg = geometry.from_vertices([[-1.0], [1.0]])
    est = steer.estimate_lambda(plant, seg, (0.5, 1.0), eps=1e-3)
    # monotone steering never leaves the shrunk segment
    assert est.value == pytest.approx(1.0 - 1e-3, abs=1e-6)


def test_estimate_lambda_symmetry(skew_pair, square):
    verts = (1.0 - 1e-3) * square.vertices

    def gauge(i, j, t_f=0.5):
        law = steer.gramian_steer(skew_pair, verts[i], verts[j], t_f)
        traj = sim.integrate(skew_pair, law, verts[i], t_f)
        return float((traj.x @ square.normals.T / square.offsets).max())

    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            ni = int(np.argmin(np.abs(square.vertices + verts[i] / (1 - 1e-3)).sum(axis=1)))
            nj = int(np.argmin(np.abs(square.vertices + verts[j] / (1 - 1e-3)).sum(axis=1)))
            assert gauge(i, j) == pytest.approx(gauge(ni, nj), abs=1e-9)


def example2_sets():
    square = geometry.from_vertices([(1, 1), (1, -1), (-1, -1), (-1, 1)])
    outer = geometry.from_vertices(2.5 * square.vertices)
    return square, outer


def test_plan_example2(skew_pair):
    square, outer = example2_sets()
    plan = steer.ribc_steering_plan(skew_pair, square, outer, square,
                                    hexagon(), np.array([-0.5, -0.5]),
                                    np.array([0.5, 0.5]), rho=0.01)
    assert [p.name for p in plan.phases] == ["stabilize", "bridge", "retrace"]
    assert [p.law.kind for p in plan.phases] == [
        "pwa-feedback", "open-loop-gramian", "sampled"]
    assert plan.rho_prime == pytest.approx(0.1)
    assert plan.endpoint_error <= plan.rho_prime
    rep = sim.verify_plan(plan, outer)
    assert rep.contained and rep.violated_phase is None
    assert rep.endpoint_error <= plan.rho_prime
    # the reported bound is the sampled sup norm and tops every control
    assert rep.max_control == pytest.approx(plan.bound_M, abs=1e-12)
    for traj in rep.trajectories:
        assert np.abs(traj.u).max() <= plan.bound_M + 1e-12


def test_plan_degenerate_round_trip(skew_pair):
    square, outer = example2_sets()
    x = np.array([0.3, -0.2])
    plan = steer.ribc_steering_plan(skew_pair, square, outer, square,
                                    hexagon(), x, x, rho=0.01)
    assert plan.endpoint_error <= plan.rho_prime
    rep = sim.verify_plan(plan, outer)
    assert rep.contained
    assert np.linalg.norm(rep.trajectories[-1].endpoint - x) <= plan.rho_prime


def test_plan_retrace_replay(skew_pair):
    # the retrace tape re-runs the reversed contraction within tolerance
    bsys = system.backward(skew_pair)
    law_b = steer.AffineFeedback(numerics.stabilize(bsys.A, bsys.B))
    back = sim.integrate(bsys, law_b, np.array([0.5, 0.5]), 100.0,
                         until_ball=(np.zeros(2), 0.01))
    T = back.duration
    tape = steer.SampledLaw((T - back.t)[::-1], back.u[::-1])
    fwd = sim.integrate(skew_pair, tape, back.endpoint, T)
    assert fwd.x.shape == back.x.shape
    assert np.abs(fwd.x - back.x[::-1]).max() <= 1e-5


def test_plan_unreachable_ball(skew_pair):
    square, outer = example2_sets()
    with pytest.raises(PlanError) as err:
        steer.ribc_steering_plan(skew_pair, square, outer, square, hexagon(),
                                 np.array([-0.5, -0.5]), np.array([0.5, 0.5]),
                                 rho=1e-9)
    assert err.value.phase == "stabilize"


def test_plan_preconditions(skew_pair):
    square, outer = example2_sets()
    drifting = system.AffineSystem(skew_pair.A, skew_pair.B,
                                   np.array([0.1, 0.0]))
    with pytest.raises(PreconditionError):
        steer.ribc_steering_plan(drifting, square, outer, square, hexagon(),
                                 np.zeros(2), np.zeros(2))
    for bad in (np.array([2.0, 0.0]), np.array([1.0, 1.0])):
        with pytest.raises(PreconditionError):
            steer.ribc_steering_plan(skew_pair, square, outer, square,
                                     hexagon(), bad, np.zeros(2))


def test_plan_circuit_with_ellipsoid_candidates(circuit):
    X, outer = cube(0.25), cube(1.0)
    res = certify.check_ribc(circuit, X, outer)
    assert res.verdict == "RIBC-certified"
    plan = steer.ribc_steering_plan(circuit, X, outer, res.X1, res.X2,
                                    np.array([0.2, 0.2, 0.2]),
                                    np.array([-0.1, 0.1, -0.1]), rho=0.01)
    rep = sim.verify_plan(plan, outer)
    assert rep.contained
    assert rep.endpoint_error <= plan.rho_prime
    assert rep.max_control == pytest.approx(plan.bound_M, abs=1e-12)


def test_plan_bridge_gives_up(circuit):
    # a huge handoff ball leaves the bridge endpoints too far apart: the
    # swing through the coupling directions only grows as t_f shrinks
    X, outer = cube(0.25), cube(1.0)
    res = certify.check_ribc(circuit, X, outer)
    with pytest.raises(PlanError) as err:
        steer.ribc_steering_plan(circuit, X, outer, res.X1, res.X2,
                                 np.array([0.2, 0.2, 0.2]),
                                 np.array([-0.1, 0.1, -0.1]), rho=0.3)
    assert err.value.phase == "bridge"
