"""Convex-body kernel: John ellipsoids, dilations, dual norms, supporting
hyperplanes, strong-convexity radius, and the slice x projection volume bound.

Bodies are point clouds with qhull facet/vertex data (n = 2, 3) or intervals
(n = 1).  Volumes are exact hull volumes; no Monte-Carlo on acceptance paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .errors import (
    DegenerateBody,
    EmptySlice,
    NotWellCentered,
    NoWitnessFound,
)

JOHN_TOL = 1e-6


class ConvexBody:
    """Convex hull of a generating point cloud in dimension 1, 2 or 3."""

    def __init__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.ndim != 2 or not (1 <= pts.shape[1] <= 3):
            raise ValueError("points must be (m, n) with n in {1,2,3}")
        self.points = pts
        self.n = pts.shape[1]
        self._john = None
        if self.n == 1:
            lo, hi = pts.min(), pts.max()
            if hi - lo <= 0:
                raise DegenerateBody("interval has empty interior")
            self.vertices = np.array([[lo], [hi]])
            self.volume = float(hi - lo)
            self.equations = np.array([[1.0, -hi], [-1.0, lo]])
        else:
            try:
                hull = ConvexHull(pts)
            except QhullError as exc:
                raise DegenerateBody(f"hull construction failed: {exc}") from exc
            if hull.volume <= 0:
                raise DegenerateBody("hull has empty interior")
            self.vertices = pts[hull.vertices]
            self.volume = float(hull.volume)
            self.equations = hull.equations
            self._hull = hull

    @property
    def diameter(self):
        v = self.vertices
        d = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
        return float(d.max())

    def contains(self, x, tol=0.0):
        x = np.atleast_2d(np.asarray(x, float))
        a = self.equations[:, :-1]
        b = self.equations[:, -1]
        return (x @ a.T + b <= tol).all(axis=-1)

    def support(self, d):
        """Support function h(d) = max over vertices of v . d."""
        d = np.asarray(d, float)
        return (self.vertices @ d.T if d.ndim > 1 else self.vertices @ d).max(0)

    def gauge(self, x, center):
        """Minkowski gauge of x - center w.r.t. the body translated by center."""
        x = np.atleast_2d(np.asarray(x, float))
        a = self.equations[:, :-1]
        b = self.equations[:, -1]
        denom = -b - a @ np.asarray(center, float)
        num = (x - center) @ a.T
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(denom > 1e-300, num / denom, np.inf)
        return g.max(axis=-1)

    def chord_length(self, point, direction):
        """Length of the intersection of the line point + t*direction with the body."""
        a = self.equations[:, :-1]
        b = self.equations[:, -1]
        ad = a @ np.asarray(direction, float)
        off = a @ np.asarray(point, float) + b
        with np.errstate(divide="ignore"):
            tp = np.where(ad > 1e-14, -off / ad, np.inf).min()
            tm = np.where(ad < -1e-14, -off / ad, -np.inf).max()
        if not np.isfinite(tp) or not np.isfinite(tm) or tp < tm:
            return 0.0
        return float(tp - tm)

    def john(self):
        if self._john is None:
            self._john = john_ellipsoid(self)
        return self._john


@dataclass
class Ellipsoid:
    """E = {center + shape @ v : |v| <= 1}, shape symmetric positive-definite."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.shape = np.asarray(self.shape, float)
        if not np.allclose(self.shape, self.shape.T, atol=1e-10):
            raise ValueError("shape matrix must be symmetric")
        if np.linalg.eigvalsh(self.shape).min() <= 0:
            raise ValueError("shape matrix must be positive definite")

    @property
    def n(self):
        return self.center.size

    @property
    def volume(self):
        n = self.n
        unit = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}[n]
        return float(unit * abs(np.linalg.det(self.shape)))

    def radial_norm(self, x):
        """|shape^{-1}(x - center)|; <= 1 inside."""
        z = np.linalg.solve(self.shape, (np.atleast_2d(x) - self.center).T).T
        return np.linalg.norm(z, axis=-1)

    def boundary_point(self, d):
        d = np.asarray(d, float)
        v = self.shape @ d
        return self.center + self.shape @ (self.shape @ d) / max(np.linalg.norm(v), 1e-300)

    def to_json(self):
        return {"center": self.center.tolist(), "shape": self.shape.tolist()}


def _mvee(points, eps=1e-9, itmax=100000):
    """Minimum-volume enclosing ellipsoid, Khachiyan with Wolfe-Atwood drop
    steps.  Returns (center, A) with E = {x : (x-c)^T A (x-c) <= 1}, inflated
    so that every input point is certified inside."""
    P = np.asarray(points, float)
    m, d = P.shape
    Q = np.column_stack([P, np.ones(m)])
    u = np.full(m, 1.0 / m)
    for _ in range(itmax):
        V = Q.T @ (u[:, None] * Q)
        try:
            Vi = np.linalg.inv(V)
        except np.linalg.LinAlgError:
            Vi = np.linalg.pinv(V)
        M = np.einsum("ij,jk,ik->i", Q, Vi, Q)
        j_plus = int(M.argmax())
        m_plus = M[j_plus]
        if m_plus <= (1.0 + eps) * (d + 1):
            break
        pos = u > 1e-12
        Mp = np.where(pos, M, np.inf)
        j_minus = int(Mp.argmin())
        m_minus = Mp[j_minus]
        if (m_plus - (d + 1)) >= ((d + 1) - m_minus):
            step = (m_plus - d - 1.0) / ((d + 1.0) * (m_plus - 1.0))
            u *= (1.0 - step)
            u[j_plus] += step
        else:
            step = min((d + 1.0 - m_minus) / ((d + 1.0) * (m_minus - 1.0)),
                       u[j_minus])
            u *= (1.0 + step)
            u[j_minus] -= step
            u = np.maximum(u, 0.0)
            u /= u.sum()
    ctr = P.T @ u
    cov = (P.T * u) @ P - np.outer(ctr, ctr)
    A = np.linalg.inv(cov) / d
    # certified inflation: scale so the farthest point sits exactly on the boundary
    z = np.einsum("ij,jk,ik->i", P - ctr, A, P - ctr).max()
    return ctr, A / z


def john_ellipsoid(Q: ConvexBody) -> Ellipsoid:
    """Ellipsoid E with E subset Q subset n*E (dilation about E's center).

    Computed as the certified minimum-volume enclosing ellipsoid of the hull
    vertices, shrunk by the dimension about its center; both containments are
    then verified against the facets/vertices with tolerance 1e-6.
    """
    n = Q.n
    if n == 1:
        lo, hi = Q.vertices.min(), Q.vertices.max()
        return Ellipsoid(np.array([(lo + hi) / 2]), np.array([[(hi - lo) / 2]]))
    ctr, A = _mvee(Q.vertices)
    w, R = np.linalg.eigh(A)
    B_out = R @ np.diag(1.0 / np.sqrt(w)) @ R.T      # MVEE = {ctr + B_out v}
    B_in = B_out / n
    scale = float(np.linalg.norm(B_out, 2))
    a = Q.equations[:, :-1]
    b = -Q.equations[:, -1]
    viol_in = float(((a @ ctr + np.linalg.norm(a @ B_in, axis=-1)) - b).max())
    z = np.linalg.solve(B_out, (Q.vertices - ctr).T).T
    viol_out = float((np.linalg.norm(z, axis=-1) - 1.0).max())
    if viol_in > JOHN_TOL * scale or viol_out > JOHN_TOL:
        raise DegenerateBody(
            f"John sandwich certification failed (in {viol_in:.2e}, out {viol_out:.2e})")
    B_in = 0.5 * (B_in + B_in.T)
    return Ellipsoid(ctr, B_in)


def dilate(Q: ConvexBody, t: float) -> ConvexBody:
    """Dilation of Q by factor t about its John center."""
    if t <= 0:
        raise ValueError("dilation factor must be positive")
    c = Q.john().center
    return ConvexBody(c + t * (Q.points - c))


def dual_norm(v, K: ConvexBody) -> float:
    """Support function of K at v: sup over K of w . v."""
    return float(K.support(np.asarray(v, float)))


def supporting_distance_constant(n: int, s0: float) -> float:
    """Closed-form constant of the supporting-hyperplane distance bound."""
    r = s0 ** (1.0 / 2**n)
    return n**1.5 * (n - 0.5) * ((1.0 + r) / (1.0 - r)) ** (n - 1)


def supporting_distance(Qt: ConvexBody, y, s: float, s0: float,
                        n_random=64, seed=0):
    """Witness line/hyperplane for the supporting-distance bound.

    Qt must be well-centered with the John ellipsoid at the origin; y lies on
    (1-s) times the boundary.  Searches lines through the origin among vertex
    directions, facet normals, and seeded random directions, each paired with
    the orthogonal supporting hyperplane; returns the first witness with
    dist(y, Pi) <= c(n, s0) s^(1/2^(n-1)) diam(line cap Qt).
    """
    if not (0 <= s <= s0 < 1):
        raise ValueError("need 0 <= s <= s0 < 1")
    n = Qt.n
    E = Qt.john()
    if np.linalg.norm(E.center) > 1e-6 * max(Qt.diameter, 1e-300):
        raise NotWellCentered("John center is not at the origin")
    y = np.asarray(y, float)

    cands = [Qt.vertices / np.maximum(
        np.linalg.norm(Qt.vertices, axis=-1, keepdims=True), 1e-300)]
    cands.append(Qt.equations[:, :-1])
    yn = np.linalg.norm(y)
    if yn > 1e-12:
        cands.append((y / yn)[None])
    rng = np.random.default_rng(seed)
    extra = rng.normal(size=(n_random, n))
    cands.append(extra / np.linalg.norm(extra, axis=-1, keepdims=True))
    D = np.concatenate(cands, axis=0)

    const = supporting_distance_constant(n, s0)
    best = None
    for d in D:
        h = float(Qt.support(d))
        lhs = h - float(y @ d)
        if lhs < -1e-9 * max(1.0, abs(h)):
            continue
        diam = Qt.chord_length(np.zeros(n), d)
        rhs = const * s ** (1.0 / 2 ** (n - 1)) * diam
        if lhs <= rhs + 1e-12:
            return d, (d, h), max(lhs, 0.0), rhs
        if best is None or lhs - rhs < best[0]:
            best = (lhs - rhs, d, h, lhs, rhs)
    raise NoWitnessFound(
        f"no line/hyperplane pair satisfies the bound (closest excess {best[0]:.3e})")


def slice_projection_bound(Q: ConvexBody, split, anchor):
    """Measures of one slice and the orthogonal projection against the volume.

    split = (n1, n2) with n1 + n2 = n: the slice fixes the last n2 coordinates
    at anchor's values, the projection drops the first n1.  Returns
    (volume, slice_measure, projection_measure, ratio) with
    ratio = slice * projection / volume.
    """
    n1, n2 = split
    n = Q.n
    if n1 + n2 != n or n1 < 1 or n2 < 1:
        raise ValueError("split must be positive and sum to the dimension")
    anchor = np.asarray(anchor, float)

    proj = Q.vertices[:, n1:]
    if n2 == 1:
        proj_measure = float(proj.max() - proj.min())
    else:
        try:
            proj_measure = float(ConvexHull(proj).volume)
        except QhullError as exc:
            raise DegenerateBody(f"projection degenerate: {exc}") from exc

    # slice polytope: A1 x' <= b - A2 anchor''
    a = Q.equations[:, :-1]
    b = -Q.equations[:, -1]
    rhs = b - a[:, n1:] @ anchor[n1:]
    A1 = a[:, :n1]
    if n1 == 1:
        zero = np.abs(A1[:, 0]) <= 1e-14
        if (rhs[zero] < 0).any():
            raise EmptySlice("slice line misses the body")
        with np.errstate(divide="ignore"):
            ub = np.where(A1[:, 0] > 1e-14, rhs / A1[:, 0], np.inf).min()
            lb = np.where(A1[:, 0] < -1e-14, rhs / A1[:, 0], -np.inf).max()
        if ub <= lb:
            raise EmptySlice("slice line misses the body")
        slice_measure = float(ub - lb)
    else:
        # Chebyshev center of the slice polytope for HalfspaceIntersection
        norms = np.linalg.norm(A1, axis=-1, keepdims=True)
        res = linprog(np.r_[np.zeros(n1), -1.0],
                      A_ub=np.hstack([A1, norms]), b_ub=rhs,
                      bounds=[(None, None)] * n1 + [(0, None)], method="highs")
        if res.status != 0 or res.x[-1] <= 1e-12:
            raise EmptySlice("slice plane misses the body interior")
        interior = res.x[:n1]
        hs = np.hstack([A1, -rhs[:, None]])
        try:
            hi = HalfspaceIntersection(hs, interior)
            slice_measure = float(ConvexHull(hi.intersections).volume)
        except QhullError as exc:
            raise EmptySlice(f"slice polytope degenerate: {exc}") from exc

    ratio = slice_measure * proj_measure / Q.volume
    return Q.volume, slice_measure, proj_measure, ratio


def strong_convexity_radius(Q: ConvexBody, flat_tol=1e-6) -> float:
    """Smallest R such that every sampled boundary point admits an enclosing
    tangent sphere of radius R; +inf when a flat facet blocks every R.

    Each generating point near the hull boundary is paired with the normal of
    its supporting facet; against another boundary point w the minimal
    admissible radius is |w - p|^2 / (2 nu . (p - w)), and any near-zero
    denominator (w essentially on the tangent plane, i.e. a flat facet)
    forces the infinite sentinel.  Intended for dense boundary clouds.
    """
    if Q.n == 1:
        return math.inf
    a = Q.equations[:, :-1]
    b = Q.equations[:, -1]
    off = Q.points @ a.T + b                 # <= 0 inside, = 0 on a facet
    scale = Q.diameter
    on_bnd = off.max(axis=-1) >= -1e-9 * scale
    P = Q.points[on_bnd]
    # average all touching facet normals: exact on facet interiors, second-
    # order accurate at vertices of a smooth sample
    touch = off[on_bnd] >= -1e-9 * scale
    normals = (touch[:, :, None] * a[None, :, :]).sum(1)
    normals /= np.maximum(np.linalg.norm(normals, axis=-1, keepdims=True), 1e-300)
    from scipy.spatial import cKDTree
    nn = cKDTree(P).query(P, k=2)[0][:, 1]
    floor = 3.0 * float(np.median(nn))      # pairs below carry no curvature info
    R = 0.0
    for p, nu in zip(P, normals):
        diff = P - p
        dist2 = (diff * diff).sum(-1)
        denom = -(diff @ nu)
        others = dist2 >= floor**2
        if not others.any():
            continue
        if (denom[others] <= flat_tol * np.sqrt(dist2[others])).any():
            return math.inf
        R = max(R, float((dist2[others] / (2.0 * denom[others])).max()))
    return R
