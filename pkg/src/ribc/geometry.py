"""Polytopes, tangent cones and triangulations.

A Polytope is held in dual form: the vertex list and the facet halfspaces
{x : h_i.x <= c_i} with unit outward normals, plus the facet-vertex incidence
lists that connect the two.  Facets are enumerated by brute force over vertex
subsets, which is exact and entirely adequate in the low dimensions this
toolkit targets.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import DomainError, InputError, NumericalError

GEOM_TOL = 1e-9


@dataclass(frozen=True)
class Simplex:
    """n+1 affinely independent points in R^n (rows)."""
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        n = pts.shape[1]
        if pts.shape[0] != n + 1:
            raise InputError("a simplex in R^%d needs %d points" % (n, n + 1))
        if numerics.rank(pts[1:] - pts[0]) != n:
            raise InputError("simplex points are affinely dependent")

    @property
    def volume(self):
        d = self.points[1:] - self.points[0]
        n = d.shape[0]
        det = np.linalg.det(d)
        fact = 1.0
        for k in range(2, n + 1):
            fact *= k
        return abs(det) / fact


@dataclass(frozen=True)
class TangentCone:
    """Active facet set J(x) and the corresponding outward normals."""
    active: tuple
    normals: np.ndarray

    def contains_direction(self, y, tol=GEOM_TOL):
        if len(self.active) == 0:
            return True
        return bool(np.max(self.normals @ np.asarray(y, dtype=float)) <= tol)


@dataclass(frozen=True)
class AffineHit:
    hit: bool
    witness: np.ndarray  # None when no interior intersection
    slack: float         # max-min facet slack over the affine set


@dataclass(frozen=True)
class Polytope:
    vertices: np.ndarray   # p x n
    normals: np.ndarray    # r x n, unit rows
    offsets: np.ndarray    # r
    incidence: tuple       # per facet: tuple of vertex indices

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_facets(self):
        return self.normals.shape[0]

    def contains(self, x, mode="closed", margin=0.0, tol=GEOM_TOL):
        """Containment test; mode is one of closed, open, margin."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InputError("point has dimension %s, polytope lives in %d-space"
                             % (x.shape, self.dim))
        vals = self.normals @ x - self.offsets
        if mode == "closed":
            return bool(np.all(vals <= tol))
        if mode == "open":
            return bool(np.all(vals < -tol))
        if mode == "margin":
            return bool(np.all(vals <= -margin))
        raise InputError("unknown containment mode %r" % (mode,))

    def tangent_cone(self, x, tol=GEOM_TOL):
        x = np.asarray(x, dtype=float)
        if not self.contains(x, "closed", tol=tol):
            raise DomainError("point lies outside the polytope")
        vals = self.normals @ x - self.offsets
        active = tuple(int(j) for j in np.where(np.abs(vals) <= tol)[0])
        return TangentCone(active, self.normals[list(active)].copy())

    def scale(self, lam):
        """Scale about the origin: vertices and offsets by lam, normals kept."""
        if lam <= 0:
            raise InputError("scale factor must be positive")
        return Polytope(self.vertices * lam, self.normals.copy(),
                        self.offsets * lam, self.incidence)

    def translate(self, d):
        d = np.asarray(d, dtype=float)
        return Polytope(self.vertices + d, self.normals.copy(),
                        self.offsets + self.normals @ d, self.incidence)

    def is_simplicial(self):
        n = self.dim
        return all(len(inc) == n for inc in self.incidence)

    def gauge(self, x):
        """min { lam >= 0 : x in lam * P }; requires 0 in the interior."""
        if np.any(self.offsets <= 0):
            raise DomainError("gauge needs the origin strictly inside")
        x = np.asarray(x, dtype=float)
        return float(np.max((self.normals @ x) / self.offsets))

    def intersects_affine_open(self, base, directions, tol=GEOM_TOL):
        """Does {base + span(directions)} meet the open interior?

        Solved as an LP that maximizes the minimum facet slack over the
        affine set; the optimizer doubles as the deepest witness point.
        """
        base = np.asarray(base, dtype=float)
        D = np.asarray(directions, dtype=float)
        if D.size == 0:
            D = D.reshape(self.dim, 0)
        k = D.shape[1]
        # variables (t, s): h_i.(base + D t) + s <= c_i, maximize s
        G = np.hstack([self.normals @ D, np.ones((self.n_facets, 1))])
        h = self.offsets - self.normals @ base
        c = np.zeros(k + 1)
        c[-1] = -1.0
        res = numerics.lp_solve(c, G, h)
        if res.status != "optimal":
            raise NumericalError("affine intersection LP returned %s" % res.status)
        s = -res.value
        if s > tol:
            return AffineHit(True, base + D @ res.x[:k], s)
        return AffineHit(False, None, s)


def from_vertices(points, tol=GEOM_TOL):
    """Build a full-dimensional polytope from a point cloud.

    Enumerates facets by checking, for every affinely independent size-n
    subset, whether its hyperplane supports the whole cloud; interior and
    other non-extreme points are then dropped by the incidence-rank test.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise InputError("expected a nonempty list of points")
    n = pts.shape[1]
    scale_abs = max(1.0, np.abs(pts).max())
    atol = tol * scale_abs

    # drop duplicates, keeping first occurrences
    keep = []
    for i, p in enumerate(pts):
        if not any(np.abs(p - pts[j]).max() <= atol for j in keep):
            keep.append(i)
    pts = pts[keep]
    p = pts.shape[0]

    if numerics.rank(pts[1:] - pts[0]) != n:
        raise InputError("points do not span an n-dimensional hull")

    facets = {}
    for subset in itertools.combinations(range(p), n):
        base = pts[subset[0]]
        D = pts[list(subset[1:])] - base
        N = numerics.kernel(D) if n > 1 else np.eye(1)
        if N.shape[1] != 1:
            continue  # affinely dependent subset
        h = N[:, 0]
        c = float(h @ base)
        vals = pts @ h - c
        if np.max(vals) <= atol:
            pass
        elif np.min(vals) >= -atol:
            h, c, vals = -h, -c, -vals
        else:
            continue  # not a supporting hyperplane
        incident = tuple(int(i) for i in np.where(np.abs(vals) <= atol)[0])
        if len(incident) >= n:
            facets.setdefault(incident, (h, c))

    if not facets:
        raise InputError("no supporting facets found")

    # a kept point is a vertex iff its incident facet normals span R^n
    normals_all = {inc: hc[0] for inc, hc in facets.items()}
    is_vertex = []
    for i in range(p):
        rows = [normals_all[inc] for inc in facets if i in inc]
        is_vertex.append(len(rows) >= n and numerics.rank(np.array(rows)) == n)
    vmap = {}
    verts = []
    for i in range(p):
        if is_vertex[i]:
            vmap[i] = len(verts)
            verts.append(pts[i])
    verts = np.array(verts)

    normals, offsets, incidence = [], [], []
    for inc in sorted(facets, key=lambda t: tuple(sorted(t))):
        h, c = facets[inc]
        new_inc = tuple(sorted(vmap[i] for i in inc if i in vmap))
        if len(new_inc) < n:
            raise NumericalError("facet with too few vertices survived filtering")
        D = verts[list(new_inc[1:])] - verts[new_inc[0]]
        if numerics.rank(D) != n - 1:
            raise NumericalError("facet vertex set is not (n-1)-dimensional")
        normals.append(h)
        offsets.append(c)
        incidence.append(new_inc)

    poly = Polytope(verts, np.array(normals), np.array(offsets), tuple(incidence))
    worst = (poly.normals @ poly.vertices.T - poly.offsets[:, None]).max()
    if worst > atol:
        raise NumericalError("vertex violates a facet by %g" % worst)
    return poly


def _match_rows(candidates, targets, atol):
    """Index of each target row within candidates (exact geometric match)."""
    out = []
    for t in targets:
        d = np.abs(candidates - t).max(axis=1)
        j = int(np.argmin(d))
        if d[j] > atol:
            raise NumericalError("triangulation lost track of a vertex")
        out.append(j)
    return out


def _facet_simplices(poly, facet_index):
    """Decompose one facet into (n-1)-simplices of local vertex indices."""
    n = poly.dim
    inc = poly.incidence[facet_index]
    if len(inc) == n:
        return [inc]
    fpts = poly.vertices[list(inc)]
    centroid = fpts.mean(axis=0)
    D = fpts - centroid
    # orthonormal chart of the facet plane
    basis = numerics.kernel(numerics.kernel(D).T) if n > 1 else np.eye(1)
    if basis.shape[1] != n - 1:
        raise NumericalError("facet chart is not (n-1)-dimensional")
    flat = D @ basis
    sub = from_vertices(flat)
    back = _match_rows(flat, sub.vertices, 1e-7 * max(1.0, np.abs(flat).max()))
    simplices = []
    for tri in _fan_triangulate(sub):
        simplices.append(tuple(inc[back[j]] for j in tri))
    return simplices


def _fan_triangulate(poly):
    """Pulling triangulation from the polytope's first vertex."""
    n = poly.dim
    if poly.n_vertices == n + 1:
        return [tuple(range(n + 1))]
    apex = 0
    tris = []
    for fi, inc in enumerate(poly.incidence):
        if apex in inc:
            continue
        for s in _facet_simplices(poly, fi):
            tris.append(s + (apex,))
    return tris


def star_triangulate(poly, apex, tol=GEOM_TOL):
    """Triangulate the polytope into simplices sharing an interior apex."""
    apex = np.asarray(apex, dtype=float)
    if not poly.contains(apex, "open", tol=tol):
        raise DomainError("star apex must lie strictly inside")
    out = []
    for fi in range(poly.n_facets):
        for s in _facet_simplices(poly, fi):
            out.append(Simplex(np.vstack([poly.vertices[list(s)], apex])))
    return out
