import numpy as np
import pytest

from ribc import certify, geometry, numerics, system
from ribc.errors import InputError


def verify_witness(sys, P, v, u, direction, tol=1e-9):
    """Direct substitution check of a claimed vertex control."""
    s = 1.0 if direction == "forward" else -1.0
    idx = min(range(P.n_vertices),
              key=lambda i: np.abs(P.vertices[i] - v).max())
    f = s * (sys.A @ P.vertices[idx] + sys.B @ np.atleast_1d(u) + sys.a)
    for j, inc in enumerate(P.incidence):
        if idx in inc:
            assert P.normals[j] @ f <= tol
    return True


def test_invariance_lp_square_forward(skew_pair, square):
    # hand solutions at the four corners, by coordinates
    known = {(-1.0, -1.0): 1.0, (1.0, -1.0): 0.0,
             (1.0, 1.0): -1.0, (-1.0, 1.0): 0.0}
    for v, u in known.items():
        out = certify.invariance_lp(skew_pair, square, v, "forward")
        assert out.feasible
        verify_witness(skew_pair, square, v, u, "forward")
        # the hand value is minimal in magnitude, so the LP must match it
        assert out.norm == pytest.approx(abs(u), abs=1e-9)


def test_invariance_lp_square_backward_infeasible(skew_pair, square):
    out = certify.invariance_lp(skew_pair, square, (1.0, -1.0), "backward")
    assert not out.feasible
    assert out.residual == pytest.approx(0.5, abs=1e-9)  # best split of 1-u vs u


def test_invariance_lp_validates_vertex(skew_pair, square):
    with pytest.raises(InputError):
        certify.invariance_lp(skew_pair, square, (0.5, 0.5), "forward")
    with pytest.raises(InputError):
        certify.invariance_lp(skew_pair, square, (1.0, 1.0), "sideways")


def test_invariance_lp_zero_control_accepted(square):
    sink = system.AffineSystem(-np.eye(2), np.array([[0.0], [1.0]]), np.zeros(2))
    for v in square.vertices:
        out = certify.invariance_lp(sink, square, v, "forward")
        assert out.feasible and out.norm <= 1e-9


def test_check_invariance_square(skew_pair, square):
    rep = certify.check_invariance(skew_pair, square, "forward")
    assert rep.solvable and not rep.strict
    assert rep.max_norm == pytest.approx(1.0, abs=1e-9)
    rep_b = certify.check_invariance(skew_pair, square, "backward")
    assert not rep_b.solvable
    bad = [tuple(o.vertex) for o in rep_b.outcomes if not o.feasible]
    assert (1.0, -1.0) in bad and (-1.0, 1.0) in bad


def test_check_invariance_hexagon_backward(skew_pair, square):
    hexagon = geometry.from_vertices(
        np.vstack([square.vertices, [(2.25, 0.0), (-2.25, 0.0)]]))
    rep = certify.check_invariance(skew_pair, hexagon, "backward")
    assert rep.solvable
    known = {(-1.0, -1.0): 0.0, (1.0, -1.0): -4.0, (1.0, 1.0): 0.0,
             (-1.0, 1.0): 4.0, (2.25, 0.0): 0.0, (-2.25, 0.0): 0.0}
    for v, u in known.items():
        verify_witness(skew_pair, hexagon, v, u, "backward")


def test_check_invariance_case_c_hexagon(dbl_int):
    Xpp = geometry.from_vertices([(1, 1), (0, 1), (0, -1), (1, -1),
                                  (1.25, 0), (-0.25, 0)])
    fwd = certify.check_invariance(dbl_int, Xpp, "forward")
    bwd = certify.check_invariance(dbl_int, Xpp, "backward")
    assert fwd.solvable and bwd.solvable
    known = {(1.0, 1.0): -4.0, (0.0, 1.0): 0.0, (0.0, -1.0): 4.0,
             (1.0, -1.0): 0.0, (1.25, 0.0): 0.0, (-0.25, 0.0): 0.0}
    for v, u in known.items():
        verify_witness(dbl_int, Xpp, v, u, "forward")


def test_check_invariance_cart_forward_fails(cart, square):
    rep = certify.check_invariance(cart, square, "forward")
    assert not rep.solvable
    out = {tuple(o.vertex): o for o in rep.outcomes}
    bad = out[(1.0, 1.0)]
    assert not bad.feasible
    # the first facet functional is stuck at +1 whatever u does
    assert bad.residual == pytest.approx(1.0, abs=1e-9)


def test_boundary_solvability_extends_from_vertices(skew_pair, square):
    # vertex solvability carries over to every boundary point by convexity
    rng = np.random.default_rng(61)
    rep = certify.check_invariance(skew_pair, square, "forward")
    assert rep.solvable
    for _ in range(200):
        j = rng.integers(square.n_facets)
        inc = square.incidence[j]
        w = rng.dirichlet(np.ones(len(inc)))
        x = w @ square.vertices[list(inc)]
        cone = square.tangent_cone(x)
        G = np.array([h @ skew_pair.B for h in cone.normals]).reshape(-1, 1)
        h = np.array([-(hh @ (skew_pair.A @ x + skew_pair.a))
                      for hh in cone.normals])
        assert numerics.lp_solve(np.zeros(1), G, h).optimal


def test_obstruction_beta_balance(balance, balance_boxes):
    _, outer = balance_boxes
    obs = certify.obstruction_beta(balance, outer)
    assert obs is not None and obs.mean_decrease > 1.0
    # found direction annihilates the input channel
    assert np.abs(obs.beta @ balance.B).max() <= 1e-9
    # the hand-derived kernel direction passes the same constraints
    M, m, J, ell = 1.0, 0.2, 0.01, 0.5
    gamma = 0.01
    Jt, Mt = J + m * ell ** 2, M + m
    mu = Mt * Jt - m ** 2 * ell ** 2
    beta_hand = np.array([0.0, -gamma * (Mt * Jt - Jt * ell ** 2 * m ** 2) / mu ** 2,
                          ell * m / mu, -Jt / mu])
    assert np.abs(beta_hand @ balance.B).max() <= 1e-12
    drops = [beta_hand @ (balance.A @ v) for v in outer.vertices]
    assert max(drops) <= 1e-12


def test_obstruction_beta_none_for_square_input():
    sys = system.AffineSystem(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.eye(2),
                              np.zeros(2))
    X = geometry.from_vertices([(1, 1), (1, -1), (-1, -1), (-1, 1)])
    assert certify.obstruction_beta(sys, X) is None


def test_obstruction_beta_pure_drift():
    sys = system.AffineSystem(np.zeros((1, 1)), np.zeros((1, 0)),
                              np.array([1.0]))
    X = geometry.from_vertices([(0.0,), (1.0,)])
    obs = certify.obstruction_beta(sys, X)
    assert obs is not None
    assert obs.beta[0] == pytest.approx(-1.0)
    assert obs.mean_decrease == pytest.approx(1.0)


def test_beta_soundness_along_trajectories(balance, balance_boxes):
    _, outer = balance_boxes
    obs = certify.obstruction_beta(balance, outer)
    rng = np.random.default_rng(67)
    dt = 1e-3
    for _ in range(5):
        x = np.array([rng.uniform(-0.9, 0.9), rng.uniform(0.21, 0.29),
                      rng.uniform(-0.09, 0.09), rng.uniform(-0.09, 0.09)])
        prev = obs.beta @ x
        for _ in range(400):
            u = rng.uniform(-5.0, 5.0, size=1)
            k1 = balance.field_at(x, u)
            k2 = balance.field_at(x + 0.5 * dt * k1, u)
            k3 = balance.field_at(x + 0.5 * dt * k2, u)
            k4 = balance.field_at(x + dt * k3, u)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not outer.contains(x, "open"):
                break
            cur = obs.beta @ x
            assert cur <= prev + 1e-10
            prev = cur


def test_check_ibc_square_not_ibc(skew_pair, square):
    rep = certify.check_ibc(skew_pair, square)
    assert rep.verdict == "not-IBC"
    assert rep.controllable and rep.forward.solvable
    assert not rep.backward.solvable


def test_check_ibc_cart(cart, square):
    rep = certify.check_ibc(cart, square)
    assert rep.verdict == "not-IBC"
    assert not rep.forward.solvable


def test_check_ibc_scalar_certified():
    sys = system.AffineSystem(np.zeros((1, 1)), np.eye(1), np.zeros(1))
    X = geometry.from_vertices([(-1.0,), (1.0,)])
    rep = certify.check_ibc(sys, X)
    assert rep.verdict == "IBC-certified"


def test_check_ibc_no_interior_equilibria(dbl_int):
    X = geometry.from_vertices([(0, 0), (1, 0), (1, 1), (0, 1)])
    rep = certify.check_ibc(dbl_int, X)
    assert rep.verdict == "not-IBC"
    assert rep.obstruction is not None


def test_check_ribc_case_b_square(skew_pair, square):
    cert = certify.check_ribc(skew_pair, square, square.scale(2.5))
    assert cert.verdict == "RIBC-certified"
    assert cert.case.name == "B"
    assert cert.X1.provenance == "inner-polytope"
    assert cert.X2.provenance == "equilibrium-extension"
    got = sorted(tuple(np.round(v, 9)) for v in cert.X2.set.vertices)
    assert (2.25, 0.0) in got and (-2.25, 0.0) in got
    assert cert.bound_M is not None and cert.bound_M >= 4.0 - 1e-9


def test_check_ribc_case_c_user_candidates(dbl_int):
    X = geometry.from_vertices([(0, 0), (1, 0), (1, 1), (0, 1)])
    Xp = geometry.from_vertices([(-2, -1), (2, -1), (2, 1), (-2, 1)])
    Xpp = geometry.from_vertices([(1, 1), (0, 1), (0, -1), (1, -1),
                                  (1.25, 0), (-0.25, 0)])
    cert = certify.check_ribc(dbl_int, X, Xp, candidates=(Xpp, Xpp))
    assert cert.verdict == "RIBC-certified"
    assert cert.case.name == "C"
    assert any("share the equilibrium point" in t for t in cert.trace)


def test_check_ribc_case_a_balance(balance, balance_boxes):
    inner, outer = balance_boxes
    cert = certify.check_ribc(balance, inner, outer)
    assert cert.verdict == "not-RIBC"
    assert cert.case.name == "A"
    assert cert.beta is not None and cert.beta.mean_decrease > 0


def test_check_ribc_uncontrollable():
    sys = system.AffineSystem(np.diag([0.0, 1.0]), np.array([[1.0], [0.0]]),
                              np.zeros(2))
    X = geometry.from_vertices([(1, 1), (1, -1), (-1, -1), (-1, 1)])
    cert = certify.check_ribc(sys, X, X.scale(2.0))
    assert cert.verdict == "not-RIBC"
    assert cert.controllable is False and cert.ctrb_rank == 1
    assert cert.kalman is not None
    assert [t for _, t in cert.kalman.eig_tags] == ["unstable"]


def test_check_ribc_rejects_bad_nesting(skew_pair, square):
    with pytest.raises(InputError):
        certify.check_ribc(skew_pair, square.scale(2.0), square)


def test_check_ribc_monotone_in_outer_set(dbl_int):
    X = geometry.from_vertices([(0, 0), (1, 0), (1, 1), (0, 1)])
    Xpp = geometry.from_vertices([(1, 1), (0, 1), (0, -1), (1, -1),
                                  (1.25, 0), (-0.25, 0)])
    for spread in (1.0, 1.5, 3.0):
        Xp = geometry.from_vertices([(-2 * spread, -spread), (2 * spread, -spread),
                                     (2 * spread, spread), (-2 * spread, spread)])
        cert = certify.check_ribc(dbl_int, X, Xp, candidates=(Xpp, Xpp))
        assert cert.verdict == "RIBC-certified"


def test_not_ribc_always_carries_obstruction(balance, balance_boxes):
    inner, outer = balance_boxes
    cert = certify.check_ribc(balance, inner, outer)
    assert cert.verdict != "not-RIBC" or (
        cert.beta is not None or (cert.ctrb_rank or 0) < balance.n)
