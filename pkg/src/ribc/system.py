"""Affine plant ẋ = Ax + Bu + a and the geometry of its equilibrium set.

The set O = {x : Ax + a ∈ Im(B)} collects every point that some constant
input can hold fixed.  Where O meets the interiors of a nested polytope
pair (X inside X′) decides which certification route applies, so the
classifier here is the entry point for everything downstream.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import DomainError, InputError, NumericalError
from .geometry import GEOM_TOL, Polytope


@dataclass(frozen=True)
class AffineSystem:
    A: np.ndarray
    B: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        a = np.asarray(self.a, dtype=float).reshape(-1)
        n = A.shape[0]
        if A.shape != (n, n):
            raise InputError("A must be square, got %s" % (A.shape,))
        if B.shape[0] != n:
            raise InputError("B has %d rows, expected %d" % (B.shape[0], n))
        if a.shape != (n,):
            raise InputError("offset has shape %s, expected (%d,)" % (a.shape, n))
        if numerics.rank(B) != B.shape[1]:
            raise InputError("input matrix must have full column rank")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "a", a)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def field_at(self, x, u):
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float) + self.a


@dataclass(frozen=True)
class EquilibriumSet:
    """Affine set {x : Ax + a ∈ Im(B)}, stored as x0 + span(basis)."""
    nonempty: bool
    x0: np.ndarray = None
    basis: np.ndarray = None  # n×κ, orthonormal columns
    kappa: int = 0

    def contains(self, x, tol=1e-8):
        if not self.nonempty:
            return False
        d = np.asarray(x, dtype=float) - self.x0
        resid = d - self.basis @ (self.basis.T @ d)
        return bool(np.abs(resid).max() <= tol * max(1.0, np.abs(d).max()))


@dataclass(frozen=True)
class GeometricCase:
    """Which interiors the equilibrium set reaches: A none, B inner, C outer only."""
    name: str  # "A", "B", or "C"
    witness_inner: np.ndarray = None
    witness_outer: np.ndarray = None
    warnings: tuple = field(default=())


def equilibrium_set(sys):
    """Solve N'(Ax + a) = 0 for N spanning ker(B'); empty if inconsistent."""
    n = sys.n
    N = numerics.kernel(sys.B.T)
    if N.shape[1] == 0:
        # inputs span the whole space, every point can be held
        return EquilibriumSet(True, np.zeros(n), np.eye(n), n)
    M = N.T @ sys.A
    rhs = -(N.T @ sys.a)
    x0, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    resid = M @ x0 - rhs
    scale = max(1.0, np.abs(rhs).max(), np.abs(M).max())
    if np.abs(resid).max() > 1e-9 * scale:
        return EquilibriumSet(False)
    basis = numerics.kernel(M)
    return EquilibriumSet(True, x0, basis, basis.shape[1])


def is_controllable(sys, tol=numerics.RANK_TOL):
    """Rank test on [B AB ... A^(n-1)B]; returns (flag, rank)."""
    r = numerics.rank(numerics.ctrb(sys.A, sys.B), tol)
    return r == sys.n, r


def translate_to_linear(sys, xbar):
    """Shift coordinates so xbar becomes an equilibrium at input ubar.

    Requires A·xbar + a ∈ Im(B); returns the offset-free system and ubar.
    """
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    if xbar.shape != (sys.n,):
        raise InputError("point has shape %s, expected (%d,)" % (xbar.shape, sys.n))
    rhs = -(sys.A @ xbar + sys.a)
    ubar, *_ = np.linalg.lstsq(sys.B, rhs, rcond=None)
    resid = sys.B @ ubar - rhs
    if np.abs(resid).max() > 1e-9 * max(1.0, np.abs(rhs).max()):
        raise DomainError("point cannot be held by any constant input")
    return AffineSystem(sys.A, sys.B, np.zeros(sys.n)), ubar


def backward(sys):
    """Time-reversed plant (-A, -B, -a); applying it twice returns the original."""
    return AffineSystem(-sys.A, -sys.B, -sys.a)


def classify_case(sys, X, Xprime, tol=GEOM_TOL):
    """Locate the equilibrium set relative to the nested pair X ⊂ X′.

    A: misses the interior of X′ entirely.  B: meets the interior of X.
    C: meets the interior of X′ but not of X.
    """
    if not isinstance(X, Polytope) or not isinstance(Xprime, Polytope):
        raise InputError("expected two polytopes")
    for v in X.vertices:
        if not Xprime.contains(v, "closed", tol=tol):
            raise InputError("inner polytope is not contained in the outer one")
    if all(X.contains(v, "closed", tol=tol) for v in Xprime.vertices):
        raise InputError("outer polytope must be strictly larger")

    O = equilibrium_set(sys)
    if not O.nonempty:
        return GeometricCase("A")

    warnings = []
    hit_inner = X.intersects_affine_open(O.x0, O.basis)
    hit_outer = Xprime.intersects_affine_open(O.x0, O.basis)
    for label, hit in (("inner", hit_inner), ("outer", hit_outer)):
        if hit.slack is not None and abs(hit.slack) <= 10 * tol:
            warnings.append("equilibrium set grazes the %s boundary "
                            "(slack %.3g); classification is marginal"
                            % (label, hit.slack))
    warnings = tuple(warnings)
    if hit_inner.hit:
        return GeometricCase("B", hit_inner.witness, hit_outer.witness, warnings)
    if hit_outer.hit:
        return GeometricCase("C", None, hit_outer.witness, warnings)
    return GeometricCase("A", warnings=warnings)


@dataclass(frozen=True)
class KalmanDecomposition:
    """Orthogonal change of basis splitting reachable and unreachable parts."""
    P: np.ndarray
    A11: np.ndarray
    A12: np.ndarray
    A22: np.ndarray
    B1: np.ndarray
    rank: int
    eig_tags: tuple  # ((eigenvalue, tag), ...) for the unreachable block


def _tag_eigenvalue(lam, tol=1e-9):
    if lam.real > tol:
        return "unstable"
    if lam.real < -tol:
        return "stable"
    if abs(lam.imag) <= tol:
        return "zero"
    return "pure-imaginary"


def kalman_decomposition(sys, tol=numerics.RANK_TOL):
    n = sys.n
    Qc = numerics.ctrb(sys.A, sys.B)
    r = numerics.rank(Qc, tol)
    if r == n:
        return KalmanDecomposition(np.eye(n), sys.A.copy(),
                                   np.zeros((n, 0)), np.zeros((0, 0)),
                                   sys.B.copy(), r, ())
    null_basis = numerics.kernel(Qc.T)
    range_basis = numerics.kernel(null_basis.T)
    P = np.hstack([range_basis, null_basis])
    Abar = P.T @ sys.A @ P
    Bbar = P.T @ sys.B
    if np.abs(Abar[r:, :r]).max() > 1e-8 * max(1.0, np.abs(sys.A).max()):
        raise NumericalError("reachable subspace failed to decouple")
    A22 = Abar[r:, r:]
    tags = tuple((lam, _tag_eigenvalue(lam)) for lam in numerics.eigenvalues(A22))
    return KalmanDecomposition(P, Abar[:r, :r], Abar[:r, r:], A22,
                               Bbar[:r], r, tags)
