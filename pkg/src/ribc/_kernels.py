"""Fixed-step integration kernels in two interchangeable backends.

The classical fourth-order scheme dominates the runtime of plan
validation, so it is compiled when numba is available.  Setting
RIBC_DISABLE_NUMBA=1 (or lacking numba entirely) selects the plain
numpy implementations.  The compiled kernels spell out the small
matrix-vector products as scalar loops; BLAS dispatch costs more than
the arithmetic at these sizes.  Each backend is deterministic run to
run, and the two agree to floating-point roundoff.
"""

import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

_DISABLED = os.environ.get("RIBC_DISABLE_NUMBA", "").strip() not in ("", "0")
BACKEND = "numba" if (HAVE_NUMBA and not _DISABLED) else "numpy"


def rk4_affine_numpy(M, c, x0, dt, nsteps):
    """Integrate xdot = Mx + c from x0; returns (nsteps+1, d) states."""
    d = x0.shape[0]
    out = np.empty((nsteps + 1, d))
    out[0] = x0
    x = x0.copy()
    for i in range(nsteps):
        k1 = M @ x + c
        k2 = M @ (x + 0.5 * dt * k1) + c
        k3 = M @ (x + 0.5 * dt * k2) + c
        k4 = M @ (x + dt * k3) + c
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = x
    return out


def _pwa_locate_numpy(Minvs, xa, tol):
    for s in range(Minvs.shape[0]):
        lam = Minvs[s] @ xa
        if lam.min() >= -tol:
            return s
    return -1


def rk4_pwa_numpy(A, B, a, Minvs, Us, x0, dt, nsteps, tol):
    """Closed-loop run under a piecewise affine law on a triangulation.

    Returns (states, controls, stop) where stop is the first step index
    at which the law stopped being defined (a stage point or the new
    state fell outside every simplex), or -1 when the run completed.
    Both arrays include the initial sample; on a stop they are cut back
    to the last well-defined sample.
    """
    n = x0.shape[0]
    m = B.shape[1]
    states = np.empty((nsteps + 1, n))
    controls = np.empty((nsteps + 1, m))
    states[0] = x0
    x = x0.copy()
    xa = np.empty(n + 1)
    xa[n] = 1.0

    def field(x):
        xa[:n] = x
        s = _pwa_locate_numpy(Minvs, xa, tol)
        if s < 0:
            return None, None
        u = Us[s] @ (Minvs[s] @ xa)
        return A @ x + B @ u + a, u

    f0, u0 = field(x)
    if f0 is None:
        return states[:1], controls[:0], 0
    controls[0] = u0
    for i in range(nsteps):
        k1, _ = field(x)
        k2 = k3 = k4 = None
        if k1 is not None:
            k2, _ = field(x + 0.5 * dt * k1)
        if k2 is not None:
            k3, _ = field(x + 0.5 * dt * k2)
        if k3 is not None:
            k4, _ = field(x + dt * k3)
        if k4 is None:
            return states[:i + 1], controls[:i + 1], i
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        fu = field(x)
        if fu[0] is None:
            return states[:i + 1], controls[:i + 1], i
        states[i + 1] = x
        controls[i + 1] = fu[1]
    return states, controls, -1


rk4_affine_numba = None
rk4_pwa_numba = None

if HAVE_NUMBA:
    @numba.njit(cache=True)
    def _rk4_affine_jit(M, c, x0, dt, nsteps):
        d = x0.shape[0]
        out = np.empty((nsteps + 1, d))
        x = x0.copy()
        xs = np.empty(d)
        ks = np.empty((4, d))
        out[0] = x0
        for i in range(nsteps):
            for st in range(4):
                if st == 0:
                    for r in range(d):
                        xs[r] = x[r]
                elif st == 1:
                    for r in range(d):
                        xs[r] = x[r] + 0.5 * dt * ks[0, r]
                elif st == 2:
                    for r in range(d):
                        xs[r] = x[r] + 0.5 * dt * ks[1, r]
                else:
                    for r in range(d):
                        xs[r] = x[r] + dt * ks[2, r]
                for r in range(d):
                    v = c[r]
                    for q in range(d):
                        v += M[r, q] * xs[q]
                    ks[st, r] = v
            for r in range(d):
                x[r] += (dt / 6.0) * (ks[0, r] + 2.0 * ks[1, r]
                                      + 2.0 * ks[2, r] + ks[3, r])
                out[i + 1, r] = x[r]
        return out

    @numba.njit(cache=True)
    def _pwa_locate_fill(Minvs, xa, lam, tol):
        S = Minvs.shape[0]
        n1 = Minvs.shape[1]
        for s in range(S):
            neg = False
            for r in range(n1):
                v = 0.0
                for q in range(n1):
                    v += Minvs[s, r, q] * xa[q]
                lam[r] = v
                if v < -tol:
                    neg = True
                    break
            if not neg:
                return s
        return -1

    @numba.njit(cache=True)
    def _rk4_pwa_jit(A, B, a, Minvs, Us, x0, dt, nsteps, tol):
        n = x0.shape[0]
        m = B.shape[1]
        states = np.empty((nsteps + 1, n))
        controls = np.empty((nsteps + 1, m))
        states[0] = x0
        x = x0.copy()
        xa = np.empty(n + 1)
        lam = np.empty(n + 1)
        u = np.empty(m)
        ks = np.empty((4, n))
        xs = np.empty(n)
        xa[n] = 1.0

        for r in range(n):
            xa[r] = x[r]
        s = _pwa_locate_fill(Minvs, xa, lam, tol)
        if s < 0:
            return states[:1], controls[:0], 0
        for r in range(m):
            v = 0.0
            for q in range(n + 1):
                v += Us[s, r, q] * lam[q]
            controls[0, r] = v

        for i in range(nsteps):
            bad = False
            for st in range(4):
                if st == 0:
                    for r in range(n):
                        xs[r] = x[r]
                elif st == 1:
                    for r in range(n):
                        xs[r] = x[r] + 0.5 * dt * ks[0, r]
                elif st == 2:
                    for r in range(n):
                        xs[r] = x[r] + 0.5 * dt * ks[1, r]
                else:
                    for r in range(n):
                        xs[r] = x[r] + dt * ks[2, r]
                for r in range(n):
                    xa[r] = xs[r]
                s = _pwa_locate_fill(Minvs, xa, lam, tol)
                if s < 0:
                    bad = True
                    break
                for r in range(m):
                    v = 0.0
                    for q in range(n + 1):
                        v += Us[s, r, q] * lam[q]
                    u[r] = v
                for r in range(n):
                    v = a[r]
                    for q in range(n):
                        v += A[r, q] * xs[q]
                    for q in range(m):
                        v += B[r, q] * u[q]
                    ks[st, r] = v
            if bad:
                return states[:i + 1], controls[:i + 1], i
            for r in range(n):
                x[r] += (dt / 6.0) * (ks[0, r] + 2.0 * ks[1, r]
                                      + 2.0 * ks[2, r] + ks[3, r])
                xa[r] = x[r]
            s = _pwa_locate_fill(Minvs, xa, lam, tol)
            if s < 0:
                return states[:i + 1], controls[:i + 1], i
            for r in range(n):
                states[i + 1, r] = x[r]
            for r in range(m):
                v = 0.0
                for q in range(n + 1):
                    v += Us[s, r, q] * lam[q]
                controls[i + 1, r] = v
        return states, controls, -1

    def rk4_affine_numba(M, c, x0, dt, nsteps):
        return _rk4_affine_jit(M, c, x0, float(dt), nsteps)

    def rk4_pwa_numba(A, B, a, Minvs, Us, x0, dt, nsteps, tol):
        return _rk4_pwa_jit(A, B, a, Minvs, Us, x0, float(dt), nsteps,
                            float(tol))


if BACKEND == "numba":
    rk4_affine = rk4_affine_numba
    rk4_pwa = rk4_pwa_numba
else:
    rk4_affine = rk4_affine_numpy
    rk4_pwa = rk4_pwa_numpy
