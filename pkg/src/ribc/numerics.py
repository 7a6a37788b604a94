"""Dense linear algebra and optimization kernels.

Everything here is self-contained on purpose: a two-phase simplex solver,
rank/kernel via column-pivoted Householder QR, eigenvalues via shifted QR on
a Hessenberg form, a Pade matrix exponential, a Lyapunov solver, stabilizing
feedback synthesis, and the controllability Gramian.  All routines operate on
plain numpy arrays and are sized for the small dense problems this toolkit
meets (n up to about 10).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError, PreconditionError

LP_TOL = 1e-9
RANK_TOL = 1e-9

_SIMPLEX_PIVOT_TOL = 1e-11
_SIMPLEX_MAX_ITERS = 20000


# ---------------------------------------------------------------------------
# Linear programming
# ---------------------------------------------------------------------------

@dataclass
class LpResult:
    status: str          # "optimal", "infeasible" or "unbounded"
    x: np.ndarray        # witness when optimal, else None
    value: float         # objective at the witness, else nan

    @property
    def optimal(self):
        return self.status == "optimal"


def lp_solve(c, G, h, tol=LP_TOL):
    """Minimize c.x subject to G x <= h over free variables x.

    Two-phase primal simplex with Bland's rule.  Free variables are split
    into positive and negative parts internally; every row gets a slack and,
    where needed, a phase-1 artificial.  Returns an LpResult; when the status
    is "optimal" the witness has been re-checked against every constraint row
    (normalized) within ``tol``.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    G = np.asarray(G, dtype=float)
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if G.size == 0:
        G = G.reshape(h.shape[0], c.shape[0])
    if G.ndim != 2 or G.shape[0] != h.shape[0] or G.shape[1] != c.shape[0]:
        raise InputError("inconsistent LP dimensions")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(G)) and np.all(np.isfinite(h))):
        raise InputError("LP data must be finite")

    n = c.shape[0]
    m = G.shape[0]
    if n == 0:
        feasible = np.all(h >= -tol)
        return LpResult("optimal" if feasible else "infeasible",
                        np.zeros(0) if feasible else None,
                        0.0 if feasible else float("nan"))
    if m == 0:
        # no constraints: optimum exists only for zero objective
        if np.all(c == 0.0):
            return LpResult("optimal", np.zeros(n), 0.0)
        return LpResult("unbounded", None, float("nan"))

    # columns: x+ (n), x- (n), slacks (m), artificials appended as needed
    A = np.hstack([G, -G, np.eye(m)])
    b = h.copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    basis = np.empty(m, dtype=int)
    art_cols = []
    for i in range(m):
        if neg[i]:
            col = np.zeros((m, 1))
            col[i, 0] = 1.0
            A = np.hstack([A, col])
            basis[i] = A.shape[1] - 1
            art_cols.append(A.shape[1] - 1)
        else:
            basis[i] = 2 * n + i
    art_cols = np.asarray(art_cols, dtype=int)

    tableau = np.hstack([A, b[:, None]])
    # reduce basic columns to identity (artificial/slack columns already are)

    def pivot(t, row, col):
        t[row] /= t[row, col]
        for r in range(t.shape[0]):
            if r != row and t[r, col] != 0.0:
                t[r] -= t[r, col] * t[row]

    def run_phase(t, basis, cost, allowed):
        for _ in range(_SIMPLEX_MAX_ITERS):
            cb = cost[basis]
            reduced = cost - cb @ t[:, :-1]
            reduced[basis] = 0.0
            entering = -1
            for j in allowed:
                if reduced[j] < -_SIMPLEX_PIVOT_TOL:
                    entering = j
                    break
            if entering < 0:
                return cb @ t[:, -1]
            col = t[:, entering]
            ratios = np.full(t.shape[0], np.inf)
            ok = col > _SIMPLEX_PIVOT_TOL
            ratios[ok] = t[ok, -1] / col[ok]
            if not ok.any():
                return None  # unbounded
            best = np.min(ratios)
            # Bland tie-break: smallest basic variable index among minimizers
            rows = np.where(ratios <= best + 1e-15)[0]
            leave = rows[np.argmin(basis[rows])]
            pivot(t, leave, entering)
            basis[leave] = entering
        raise NumericalError("simplex iteration cap exceeded")

    ncols = tableau.shape[1] - 1
    if len(art_cols):
        cost1 = np.zeros(ncols)
        cost1[art_cols] = 1.0
        allowed = [j for j in range(ncols) if j not in set(art_cols)]
        val = run_phase(tableau, basis, cost1, allowed)
        if val is None or val > max(tol, 1e-7 * max(1.0, np.abs(b).max())):
            return LpResult("infeasible", None, float("nan"))
        # drive leftover artificials out of the basis where possible
        artset = set(art_cols)
        for i in range(m):
            if basis[i] in artset:
                row = tableau[i, :-1]
                cand = [j for j in allowed if abs(row[j]) > _SIMPLEX_PIVOT_TOL]
                if cand:
                    pivot(tableau, i, cand[0])
                    basis[i] = cand[0]
    else:
        allowed = list(range(ncols))

    cost2 = np.zeros(ncols)
    cost2[:n] = c
    cost2[n:2 * n] = -c
    allowed2 = [j for j in range(2 * n + m)]
    val = run_phase(tableau, basis, cost2, allowed2)
    if val is None:
        return LpResult("unbounded", None, float("nan"))

    xfull = np.zeros(ncols)
    xfull[basis] = tableau[:, -1]
    x = xfull[:n] - xfull[n:2 * n]

    # every optimal witness is re-verified against the normalized rows
    scale = np.maximum(np.linalg.norm(G, axis=1), 1.0)
    viol = (G @ x - h) / scale
    if viol.size and viol.max() > 10 * tol:
        raise NumericalError("simplex witness violates constraints by %g" % viol.max())
    return LpResult("optimal", x, float(c @ x))


# ---------------------------------------------------------------------------
# Rank and kernel via column-pivoted Householder QR
# ---------------------------------------------------------------------------

def _qr_column_pivot(M):
    """Householder QR with column pivoting; returns (R, perm)."""
    R = np.array(M, dtype=float, copy=True)
    m, n = R.shape
    perm = np.arange(n)
    for k in range(min(m, n)):
        norms = np.sqrt(np.sum(R[k:, k:] ** 2, axis=0))
        j = int(np.argmax(norms)) + k
        if j != k:
            R[:, [k, j]] = R[:, [j, k]]
            perm[[k, j]] = perm[[j, k]]
        x = R[k:, k]
        nx = np.linalg.norm(x)
        if nx == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(nx, x[0] if x[0] != 0 else 1.0)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        v /= nv
        R[k:, k:] -= 2.0 * np.outer(v, v @ R[k:, k:])
        R[k + 1:, k] = 0.0
    return R, perm


def rank(M, tol=RANK_TOL):
    """Numerical rank from column-pivoted QR pivot magnitudes."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InputError("rank expects a matrix")
    if min(M.shape) == 0:
        return 0
    R, _ = _qr_column_pivot(M)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return 0
    return int(np.sum(d > tol * d[0]))


def kernel(M, tol=RANK_TOL):
    """Orthonormal basis (columns) of the null space of M."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InputError("kernel expects a matrix")
    m, n = M.shape
    if n == 0:
        return np.zeros((0, 0))
    if m == 0:
        return np.eye(n)
    R, perm = _qr_column_pivot(M)
    d = np.abs(np.diag(R))
    r = 0 if (d.size == 0 or d[0] == 0.0) else int(np.sum(d > tol * d[0]))
    if r == n:
        return np.zeros((n, 0))
    if r == 0:
        return np.eye(n)
    # R[:r,:r] W = R[:r,r:]  by back substitution
    R11 = R[:r, :r]
    R12 = R[:r, r:n]
    W = np.zeros((r, n - r))
    for i in range(r - 1, -1, -1):
        W[i] = (R12[i] - R11[i, i + 1:] @ W[i + 1:]) / R11[i, i]
    N = np.vstack([-W, np.eye(n - r)])
    out = np.zeros((n, n - r))
    out[perm] = N
    # orthonormalize with two rounds of modified Gram-Schmidt
    for _ in range(2):
        for j in range(out.shape[1]):
            for i in range(j):
                out[:, j] -= (out[:, i] @ out[:, j]) * out[:, i]
            nj = np.linalg.norm(out[:, j])
            if nj < 1e-300:
                raise NumericalError("kernel basis degenerated")
            out[:, j] /= nj
    resid = np.abs(M @ out).max() if out.size else 0.0
    if resid > tol * max(1.0, np.abs(M).max() * n):
        raise NumericalError("kernel verification failed, residual %g" % resid)
    return out


# ---------------------------------------------------------------------------
# Matrix exponential (Pade order 13 with scaling and squaring)
# ---------------------------------------------------------------------------

_PADE13 = (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
           1187353796428800.0, 129060195264000.0, 10559470521600.0,
           670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
           960960.0, 16380.0, 182.0, 1.0)


def expm(M):
    """Matrix exponential by scaling and squaring with a [13/13] Pade step."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError("expm expects a square matrix")
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norm = np.linalg.norm(M, 1)
    if norm == 0.0:
        return np.eye(n)
    # theta_13 from the standard Pade error analysis
    s = max(0, int(np.ceil(np.log2(norm / 5.371920351148152))))
    A = M / (2.0 ** s)
    b = _PADE13
    I = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I)
    F = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        F = F @ F
    return F


# ---------------------------------------------------------------------------
# Eigenvalues: Hessenberg reduction + shifted complex QR with deflation
# ---------------------------------------------------------------------------

def _hessenberg(M):
    H = np.array(M, dtype=float, copy=True)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1:, k]
        nx = np.linalg.norm(x)
        if nx == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(nx, x[0] if x[0] != 0 else 1.0)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        v /= nv
        H[k + 1:, k:] -= 2.0 * np.outer(v, v @ H[k + 1:, k:])
        H[:, k + 1:] -= 2.0 * np.outer(H[:, k + 1:] @ v, v)
        H[k + 2:, k] = 0.0
    return H


def _eig2(a, b, c, d):
    tr = a + d
    disc = np.sqrt(complex((a - d) * (a - d) + 4.0 * b * c))
    return [(tr + disc) / 2.0, (tr - disc) / 2.0]


def _qr_eig_block(H, cap, budget):
    """Eigenvalues of an unreduced complex Hessenberg block (recursive)."""
    n = H.shape[0]
    if n == 0:
        return []
    if n == 1:
        return [H[0, 0]]
    if n == 2:
        return _eig2(H[0, 0], H[0, 1], H[1, 0], H[1, 1])
    eps = np.finfo(float).eps
    out = []
    a = n
    stall = 0
    while a > 2:
        # deflation scan: split at any negligible subdiagonal entry
        split = -1
        for k in range(a - 1):
            if abs(H[k + 1, k]) <= eps * (abs(H[k, k]) + abs(H[k + 1, k + 1])):
                H[k + 1, k] = 0.0
                split = k
        if split >= 0:
            stall = 0
            if split == a - 2:
                out.append(H[a - 1, a - 1])
                a -= 1
                continue
            out += _qr_eig_block(H[split + 1:a, split + 1:a].copy(), cap, budget)
            a = split + 1
            continue
        if budget[0] <= 0:
            raise NumericalError("eigenvalue iteration cap exceeded")
        budget[0] -= 1
        stall += 1
        # Wilkinson shift from the trailing 2x2
        p, q = H[a - 2, a - 2], H[a - 2, a - 1]
        r, t = H[a - 1, a - 2], H[a - 1, a - 1]
        delta = (p - t) / 2.0
        rad = np.sqrt(complex(delta * delta + q * r))
        denom = delta + rad if abs(delta + rad) >= abs(delta - rad) else delta - rad
        mu = t if denom == 0 else t - (q * r) / denom
        if stall % 10 == 0:
            # exceptional shift to break symmetric stalls
            mu = t + 0.75 * abs(H[a - 1, a - 2])
        # explicit shifted QR step with Givens rotations on the active block
        Hb = H[:a, :a]
        for k in range(a):
            Hb[k, k] -= mu
        rot = []
        for k in range(a - 1):
            x1, x2 = Hb[k, k], Hb[k + 1, k]
            nr = np.sqrt(abs(x1) ** 2 + abs(x2) ** 2)
            if nr == 0.0:
                cth, sth = 1.0, 0.0
            else:
                cth, sth = x1 / nr, x2 / nr
            rot.append((cth, sth))
            r1 = np.conj(cth) * Hb[k, k:] + np.conj(sth) * Hb[k + 1, k:]
            r2 = -sth * Hb[k, k:] + cth * Hb[k + 1, k:]
            Hb[k, k:], Hb[k + 1, k:] = r1, r2
        for k in range(a - 1):
            cth, sth = rot[k]
            c1 = Hb[:k + 2, k] * cth + Hb[:k + 2, k + 1] * sth
            c2 = -Hb[:k + 2, k] * np.conj(sth) + Hb[:k + 2, k + 1] * np.conj(cth)
            Hb[:k + 2, k], Hb[:k + 2, k + 1] = c1, c2
        for k in range(a):
            Hb[k, k] += mu
    out += _eig2(H[0, 0], H[0, 1], H[1, 0], H[1, 1]) if a == 2 else [H[0, 0]]
    return out


def eigenvalues(M):
    """All eigenvalues of a real square matrix, sorted by (real, imag)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError("eigenvalues expects a square matrix")
    n = M.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    if not np.all(np.isfinite(M)):
        raise InputError("eigenvalues expects finite entries")
    H = _hessenberg(M).astype(complex)
    budget = [100 * n]  # sweep cap shared across deflated blocks
    vals = _qr_eig_block(H, 100 * n, budget)
    vals = np.asarray(vals, dtype=complex)
    order = np.lexsort((vals.imag, vals.real))
    return vals[order]


def spectral_abscissa(M):
    """Largest real part over the spectrum."""
    return float(eigenvalues(M).real.max())


def is_positive_definite(P, tol=0.0):
    """Symmetric positive definiteness via the eigenvalue routine."""
    P = np.asarray(P, dtype=float)
    if np.abs(P - P.T).max() > 1e-8 * max(1.0, np.abs(P).max()):
        return False
    return bool(eigenvalues(0.5 * (P + P.T)).real.min() > tol)


# ---------------------------------------------------------------------------
# Lyapunov equation
# ---------------------------------------------------------------------------

def solve_lyapunov(A_cl, Q):
    """Solve A_cl' P + P A_cl = -Q for symmetric positive definite P.

    The symmetric unknowns p_ij (i <= j) are assembled into one dense linear
    system of size n(n+1)/2, which is ample at this toolkit's scale.
    """
    A_cl = np.asarray(A_cl, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = A_cl.shape[0]
    if A_cl.shape != (n, n) or Q.shape != (n, n):
        raise InputError("solve_lyapunov expects square matrices of equal size")
    if np.abs(Q - Q.T).max() > 1e-9 * max(1.0, np.abs(Q).max()):
        raise PreconditionError("Q must be symmetric")
    if eigenvalues(0.5 * (Q + Q.T)).real.min() <= 0:
        raise PreconditionError("Q must be positive definite")
    if spectral_abscissa(A_cl) >= 0:
        raise PreconditionError("closed-loop matrix is not Hurwitz")

    idx = {}
    for i in range(n):
        for j in range(i, n):
            idx[(i, j)] = len(idx)
    N = len(idx)
    Msys = np.zeros((N, N))
    rhs = np.zeros(N)
    row = 0
    for i in range(n):
        for j in range(i, n):
            for k in range(n):
                Msys[row, idx[(min(k, j), max(k, j))]] += A_cl[k, i]
                Msys[row, idx[(min(i, k), max(i, k))]] += A_cl[k, j]
            rhs[row] = -Q[i, j]
            row += 1
    p = np.linalg.solve(Msys, rhs)
    P = np.zeros((n, n))
    for (i, j), k in idx.items():
        P[i, j] = P[j, i] = p[k]
    resid = np.abs(A_cl.T @ P + P @ A_cl + Q).max()
    if resid > 1e-8 * max(1.0, np.abs(Q).max()):
        raise NumericalError("Lyapunov residual %g too large" % resid)
    if eigenvalues(P).real.min() <= 0:
        raise NumericalError("Lyapunov solution is not positive definite")
    return P


# ---------------------------------------------------------------------------
# Stabilizing feedback
# ---------------------------------------------------------------------------

def ctrb(A, B):
    """Controllability matrix [B, AB, ..., A^(n-1) B]."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    blocks = []
    Ak = B.copy()
    for _ in range(n):
        blocks.append(Ak)
        Ak = A @ Ak
    return np.hstack(blocks) if blocks else np.zeros((n, 0))


def _acker(A, b, poles):
    """Single-input pole placement; returns K with eig(A + bK) at poles."""
    n = A.shape[0]
    Qc = ctrb(A, b.reshape(n, 1))
    pA = np.eye(n)
    for p in poles:
        pA = pA @ (A - p * np.eye(n))
    k_row = np.linalg.solve(Qc.T, np.eye(n)[:, -1]) @ pA
    return -k_row.reshape(1, n)


def stabilize(A, B, pole_margin=0.5):
    """Feedback K (for u = Kx) with eig(A + BK) real parts <= -pole_margin.

    Single-input pairs use Ackermann's formula directly.  Multi-input pairs
    are reduced through a random input-combination vector, redrawn up to 8
    times until the resulting single-input pair is controllable.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    if B.ndim != 2 or B.shape[0] != n:
        raise InputError("B must have as many rows as A")
    m = B.shape[1]
    if m == 0:
        raise PreconditionError("cannot stabilize without inputs")
    if rank(ctrb(A, B)) < n:
        raise PreconditionError("uncontrollable pair")
    poles = [-(pole_margin + 0.5 + 0.5 * k) for k in range(n)]
    if m == 1:
        K = _acker(A, B[:, 0], poles)
    else:
        rng = np.random.default_rng(20240817)
        scale = max(1.0, np.abs(A).max()) / max(1.0, np.abs(B).max())
        for attempt in range(8):
            w = rng.standard_normal(m)
            # a small random pre-feedback breaks eigenvalue multiplicity,
            # so some single input combination can reach every mode
            F = np.zeros((m, n)) if attempt < 2 else \
                0.1 * scale * rng.standard_normal((m, n))
            Af = A + B @ F
            bvec = B @ w
            if rank(ctrb(Af, bvec.reshape(n, 1))) == n:
                K = F + np.outer(w, _acker(Af, bvec, poles)[0])
                break
        else:
            raise PreconditionError("no controllable single-input reduction found")
    if spectral_abscissa(A + B @ K) > -pole_margin + 1e-6:
        raise NumericalError("pole placement failed the margin check")
    return K


def solve_riccati(A, B, Q=None, R=None):
    """Stabilizing solution of A'P + PA - P B R^-1 B' P + Q = 0.

    Newton-Kleinman iteration seeded by a pole-placement gain; each step is
    one Lyapunov solve, so convergence is quadratic near the fixed point.
    Returns (P, K) with K = -R^-1 B' P the optimal feedback for u = Kx.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    m = B.shape[1]
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(m) if R is None else np.asarray(R, dtype=float)
    Rinv = np.linalg.inv(R)
    K = np.zeros((m, n)) if spectral_abscissa(A) < -1e-9 else stabilize(A, B)
    P_prev = None
    for _ in range(60):
        P = solve_lyapunov(A + B @ K, Q + K.T @ R @ K)
        K = -Rinv @ (B.T @ P)
        if P_prev is not None and np.abs(P - P_prev).max() <= 1e-12 * max(1.0, np.abs(P).max()):
            resid = np.abs(A.T @ P + P @ A - P @ B @ Rinv @ B.T @ P + Q).max()
            if resid > 1e-7 * max(1.0, np.abs(Q).max()):
                raise NumericalError("Riccati residual %g too large" % resid)
            return P, K
        P_prev = P
    raise NumericalError("Riccati iteration did not converge")


# ---------------------------------------------------------------------------
# Controllability Gramian
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def gramian(A, B, t_f, rtol=1e-9):
    """W_c(0, t_f) = integral of e^(-A t) B B' e^(-A' t) over [0, t_f].

    Composite 10-node Gauss-Legendre quadrature, doubling the panel count
    until the relative Frobenius change drops below ``rtol``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if t_f <= 0:
        raise InputError("t_f must be positive")
    n = A.shape[0]

    def integrate(panels):
        W = np.zeros((n, n))
        width = t_f / panels
        for p in range(panels):
            mid = (p + 0.5) * width
            for node, wgt in zip(_GL_NODES, _GL_WEIGHTS):
                t = mid + 0.5 * width * node
                E = expm(-A * t) @ B
                W += (0.5 * width * wgt) * (E @ E.T)
        return W

    W_prev = integrate(1)
    panels = 2
    while panels <= 4096:
        W = integrate(panels)
        denom = max(np.linalg.norm(W), 1e-300)
        if np.linalg.norm(W - W_prev) / denom < rtol:
            return 0.5 * (W + W.T)
        W_prev = W
        panels *= 2
    raise NumericalError("Gramian quadrature did not converge")
