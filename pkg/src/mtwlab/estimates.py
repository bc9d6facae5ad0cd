"""Sections of transformed potentials and the quantitative estimate suite.

Sections are sublevel sets of the transformed potential in the chart at the
base target; under the weak curvature condition they are convex, and every
estimate here compares an exactly measured left side against the theorem's
right side.  Paper-constant checks (dual-norm bound, gradient-direction
Lipschitz) use closed-form constants verbatim; dimensional constants
(Alexandrov, cone mass) come frozen from the quadratic-model calibration in
``data/frozen_constants.json`` and acceptance multiplies them by a safety
factor of two.

Density bounds are transformed onto the chart before use: a source-side
c-Monge-Ampere band [lam, Lam] becomes [lam / sup|det D2xy c|,
Lam * sup|det D2xy c|^-1] there.
"""

from __future__ import annotations

import importlib.resources
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import ConvexHull, QhullError

from .charts import ExpChart, TransformedPotential, transform_potential
from .cost_model import CostModel, CostConstants, _newton_chart
from .convex_geometry import ConvexBody, Ellipsoid, john_ellipsoid
from .errors import (
    ConstraintInfeasible,
    DiameterTooLarge,
    EmptySection,
    HullDegenerate,
    PointNotOnDilatedBoundary,
    ShrinkTau,
    ZeroGradient,
)


def load_frozen_constants():
    with importlib.resources.files("mtwlab.data").joinpath(
            "frozen_constants.json").open() as fh:
        return json.load(fh)


@dataclass
class EstimateReport:
    name: str
    lhs: float
    rhs: float
    constant_used: float
    constant_kind: str           # "paper" | "frozen" | "fitted"
    ratio: float
    verdict: str
    tol: float = 1e-9
    extras: dict = field(default_factory=dict)

    @staticmethod
    def from_sides(name, lhs, rhs, constant, kind, tol=1e-9, extras=None):
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= 0 else math.inf)
        verdict = "pass" if ratio <= 1.0 + tol else "fail"
        return EstimateReport(name, float(lhs), float(rhs), float(constant),
                              kind, float(ratio), verdict, tol, extras or {})

    def to_json(self):
        d = {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
             "constant_used": self.constant_used,
             "constant_kind": self.constant_kind, "ratio": self.ratio,
             "verdict": self.verdict, "tol": self.tol}
        d.update({k: v for k, v in self.extras.items()
                  if isinstance(v, (int, float, str, bool, list))})
        return d


# -- piecewise-linear sublevel volumes ----------------------------------------

def _tri_fraction(vals):
    """Area fraction of {<=0} in triangles with vertex values vals (..., 3)."""
    neg = (vals <= 0).sum(-1)
    frac = np.zeros(vals.shape[:-1])
    frac[neg == 3] = 1.0
    for cnt, flip in ((1, False), (2, True)):
        m = neg == cnt
        if not m.any():
            continue
        v = vals[m]
        idx = np.argmin(v, -1) if cnt == 1 else np.argmax(v, -1)
        take = v[np.arange(len(v)), idx]
        o1 = v[np.arange(len(v)), (idx + 1) % 3]
        o2 = v[np.arange(len(v)), (idx + 2) % 3]
        t = (take / (take - o1)) * (take / (take - o2))
        frac[m] = 1.0 - t if flip else t
    return frac


_TET_SPLIT = [(0, 1, 3, 7), (0, 1, 5, 7), (0, 4, 5, 7),
              (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 6, 7)]


def _tet_cut_volume(verts, vals):
    """Exact volume of {<=0} of the linear interpolant on one tetrahedron."""
    neg = vals <= 0
    k = int(neg.sum())
    vol = abs(np.linalg.det(verts[1:] - verts[0])) / 6.0
    if k == 0:
        return 0.0
    if k == 4:
        return vol
    pts = [verts[i] for i in range(4) if neg[i]]
    for i in range(4):
        for j in range(i + 1, 4):
            if neg[i] != neg[j]:
                t = vals[i] / (vals[i] - vals[j])
                pts.append(verts[i] + t * (verts[j] - verts[i]))
    try:
        return float(ConvexHull(np.asarray(pts)).volume)
    except QhullError:
        return 0.0


def sublevel_volume(axes, w):
    """Volume of {w <= 0} for the piecewise-linear interpolant on the grid.

    NaN cells (outside the chart domain) contribute nothing; mixed cells with
    a NaN corner are skipped, which only matters when the section touches the
    domain boundary (excluded upstream by the shrink check).
    """
    n = w.ndim
    if n == 1:
        h = axes[0][1] - axes[0][0]
        a, b = w[:-1], w[1:]
        vol = 0.0
        both = (a <= 0) & (b <= 0)
        vol += h * np.count_nonzero(both & ~np.isnan(a) & ~np.isnan(b))
        cross = (a * b < 0)
        t = np.abs(np.where(a <= 0, a, b)) / np.abs(a - b)
        vol += float(h * np.nansum(np.where(cross, t, 0.0)))
        return vol
    if n == 2:
        hx = axes[0][1] - axes[0][0]
        hy = axes[1][1] - axes[1][0]
        c = [w[:-1, :-1], w[1:, :-1], w[1:, 1:], w[:-1, 1:]]
        area = 0.0
        for tri in ((c[0], c[1], c[2]), (c[0], c[2], c[3])):
            vals = np.stack(tri, -1)
            nan = np.isnan(vals).any(-1)
            frac = _tri_fraction(np.where(nan[..., None], 1.0, vals))
            frac[nan] = 0.0
            area += float(frac.sum()) * hx * hy / 2.0
        return area
    # n == 3: exact cut volumes on a 6-tet decomposition, boundary cells only
    hx = [a[1] - a[0] for a in axes]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vol = 0.0
    corners = np.stack([w[:-1, :-1, :-1], w[1:, :-1, :-1], w[:-1, 1:, :-1],
                        w[1:, 1:, :-1], w[:-1, :-1, 1:], w[1:, :-1, 1:],
                        w[:-1, 1:, 1:], w[1:, 1:, 1:]], axis=-1)
    nan = np.isnan(corners).any(-1)
    allneg = (corners <= 0).all(-1) & ~nan
    cellv = hx[0] * hx[1] * hx[2]
    vol += float(allneg.sum()) * cellv
    mixed = ~allneg & (corners <= 0).any(-1) & ~nan
    idxs = np.argwhere(mixed)
    offs = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
                     [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]])
    for (i, j, k) in idxs:
        cv = corners[i, j, k]
        vv = grid[i + offs[:, 0], j + offs[:, 1], k + offs[:, 2]]
        for tet in _TET_SPLIT:
            vol += _tet_cut_volume(vv[list(tet)], cv[list(tet)])
    return vol


def boundary_points(axes, w):
    """Grid nodes with w <= 0 plus linear zero crossings along grid edges."""
    n = w.ndim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    pts = [grid[w <= 0]]
    for ax in range(n):
        a = np.moveaxis(w, ax, 0)
        Qa = np.moveaxis(grid, ax, 0)
        s1, s2 = a[:-1], a[1:]
        m = (s1 * s2 < 0) & ~np.isnan(s1) & ~np.isnan(s2)
        if m.any():
            t = (0.0 - s1[m]) / (s2[m] - s1[m])
            pts.append(Qa[:-1][m] + t[..., None] * (Qa[1:][m] - Qa[:-1][m]))
    return np.concatenate(pts, axis=0)


@dataclass
class SectionData:
    """One section of a transformed potential, normalized to w <= 0.

    w stores utilde - (utilde(qbar) + tau), so the section is {w <= 0} with
    w = 0 on its boundary; inf_value = min w (about -tau up to duality slack).
    """

    xbar: np.ndarray
    ybar: np.ndarray
    tau: float
    chart: ExpChart
    axes: list
    w: np.ndarray
    qbar: np.ndarray
    mask: np.ndarray
    hull: ConvexBody
    john: Ellipsoid
    inf_value: float
    mask_volume: float
    hull_defect: float
    x_of_nodes: np.ndarray = None
    partner_fn: Optional[Callable] = None
    boundary_touch: bool = False

    @property
    def n(self):
        return self.chart.n

    @property
    def grid_points(self):
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def gauge(self, q):
        return self.hull.gauge(q, self.john.center)

    def mask_points(self):
        return self.grid_points[self.mask]

    def mask_values(self):
        return self.w[self.mask]

    def mask_x(self):
        return self.x_of_nodes[self.mask]

    def cell_size(self):
        return max(a[1] - a[0] for a in self.axes)


def section(u, cost: CostModel, xbar, ybar, tau, grid=128,
            U_lambda=None, tp: TransformedPotential = None,
            partner_fn=None) -> SectionData:
    """Extract the section {u(x) <= u(xbar) - c(x, ybar) + c(xbar, ybar) + tau}
    as a sublevel mask of the transformed potential in the chart at ybar.

    `u` needs a batched .value(x); pass a precomputed TransformedPotential to
    amortize the chart work across sections sharing a base target.  The mask
    must stay two x-cells inside U_lambda (ShrinkTau otherwise).
    """
    xbar = np.asarray(xbar, float)
    ybar = np.asarray(ybar, float)
    if tp is None:
        chart = ExpChart(cost, ybar)
        tp = transform_potential(chart, u, grid=grid)
    chart = tp.chart
    qbar = chart.to_q(xbar[None])[0]
    ubar = float(np.asarray(u.value(xbar[None]))[0] + cost.value(xbar, ybar))
    w = tp.values - (ubar + tau)
    mask = (w <= 0) & ~np.isnan(w)
    if not mask.any():
        raise EmptySection("no grid node below the section level")

    # the mask must not touch the NaN fringe (chart/domain boundary)
    from scipy import ndimage
    near = ndimage.binary_dilation(mask)
    boundary_touch = bool((np.isnan(w) & near).any())

    x_nodes = tp.x_of_nodes
    if U_lambda is not None:
        xm = x_nodes[mask]
        # two-cell margin, transported to x-space through the local chart scale
        step = np.array([a[1] - a[0] for a in tp.axes])
        A = cost.mixed_hessian(xm, ybar)
        sv = np.linalg.svd(A, compute_uv=False)
        x_cell = float((np.linalg.norm(step) / sv[..., -1]).max())
        if boundary_touch or (U_lambda.margin(xm) < 2.0 * x_cell).any():
            raise ShrinkTau("section leaves the two-cell interior margin")
    elif boundary_touch:
        raise ShrinkTau("section touches the chart-domain boundary")

    vol = sublevel_volume(tp.axes, w)
    bpts = boundary_points(tp.axes, w)
    hull = ConvexBody(bpts)
    john = john_ellipsoid(hull)
    defect = (hull.volume - vol) / hull.volume if hull.volume > 0 else 1.0
    if partner_fn is None and hasattr(u, "sol"):
        sol = u.sol
        partner_fn = lambda x: sol.Y[sol.u_at(np.atleast_2d(x))[1]]
    return SectionData(xbar, ybar, float(tau), chart, tp.axes, w, qbar, mask,
                       hull, john, float(np.nanmin(w[mask])), float(vol),
                       float(defect), x_nodes, partner_fn, boundary_touch)


def levelset_defect(S: SectionData) -> float:
    """Convexity defect (hull volume - mask volume) / hull volume."""
    return S.hull_defect


# -- transformed density bounds -------------------------------------------------

def transformed_density_bounds(S: SectionData, lam, Lam, y_samples):
    """Chart-side density band and the modified-cost Jacobian sups.

    Returns (lam_ct, Lam_ct, gamma_t_plus, gamma_t_minus): the source-side
    band [lam, Lam] divided/multiplied by the chart Jacobian sups, and the
    sups of |det D2_qy ctilde| over the section times the target samples.
    """
    qs = S.mask_points()
    sub = qs[:: max(1, len(qs) // 256)]
    xs = S.x_of_nodes[S.mask][:: max(1, len(qs) // 256)]
    ys = np.asarray(y_samples, float)
    ys = ys[:: max(1, len(ys) // 256)]
    gc_plus, gc_minus = S.chart.chart_jacobian_bounds(sub, ys, x=xs)
    gt_plus, gt_minus = S.chart.gamma_tilde(sub, ys, x=xs)
    return lam / gc_plus, Lam * gc_minus, gt_plus, gt_minus


def _check_diameter(S, limit, strict):
    diam = S.hull.diameter
    if math.isinf(limit):
        return True
    ok = diam <= limit
    if not ok and strict:
        raise DiameterTooLarge(
            f"section diameter {diam:.3e} above the closed-form bound {limit:.3e}")
    return ok


# -- Alexandrov bounds ------------------------------------------------------------

def alexandrov_lower(S: SectionData, constants: CostConstants, lam, delta=1.0,
                     y_samples=None, Lam=None, safety=2.0,
                     strict=False) -> EstimateReport:
    """Volume lower bound: vol(Q)^2 <= C(n) (gamma-_ct / (delta^2n lam_ct)) |inf|^n.

    lam is the source-side density lower bound; it is transformed onto the
    chart before use.  The dimensional constant is the frozen quadratic-model
    calibration times `safety`.
    """
    n = S.n
    y_samples = S.ybar[None] if y_samples is None else y_samples
    lam_ct, _, _, gt_minus = transformed_density_bounds(
        S, lam, Lam if Lam is not None else 1.0 / lam, y_samples)
    frozen = load_frozen_constants()[f"n={n}"]["alex_lower"]
    diam_E = 2.0 * float(np.linalg.norm(S.john.shape, 2))
    limit = min(1.0, constants.eps_c / (4.0 * diam_E)) if math.isfinite(
        constants.eps_c) else math.inf
    pre_ok = delta <= limit or math.isinf(limit)
    if strict and not pre_ok:
        raise DiameterTooLarge("delta above the closed-form admissibility bound")
    lhs = S.mask_volume**2
    rhs = safety * frozen * gt_minus / (delta ** (2 * n) * lam_ct) * abs(
        S.inf_value) ** n
    return EstimateReport.from_sides(
        "alexandrov_lower", lhs, rhs, frozen, "frozen",
        extras={"delta": delta, "lam_ct": lam_ct, "gamma_t_minus": gt_minus,
                "precondition_ok": bool(pre_ok), "safety": safety})


def alexandrov_upper(S: SectionData, q_t, t, constants: CostConstants, lam,
                     Lam=None, y_samples=None, safety=2.0, strict=False,
                     t_profile=None) -> EstimateReport:
    """Boundary-decay and volume upper bounds on one section.

    Checks |utilde(q_t)|^n <= C gamma+_ct Lam_ct (1-t)^(1/2^(n-1)) vol(Q)^2 at
    the given dilated-boundary point, plus |inf|^n / vol^2 <= C' gamma+_ct
    Lam_ct; the full decay profile over `t_profile` lands in extras for
    plotting.
    """
    n = S.n
    if not (1.0 / (2 * n) < t <= 1.0):
        raise ValueError("t must lie in (1/(2n), 1]")
    q_t = np.asarray(q_t, float)
    g = float(S.gauge(q_t[None])[0])
    cell = S.cell_size()
    scale_cell = cell / max(S.hull.diameter / 2.0, 1e-300)
    if abs(g - t) > 2.0 * scale_cell + 1e-9:
        raise PointNotOnDilatedBoundary(
            f"gauge {g:.4f} vs requested dilation {t:.4f}")
    y_samples = S.ybar[None] if y_samples is None else y_samples
    _, Lam_ct, gt_plus, _ = transformed_density_bounds(
        S, lam, Lam if Lam is not None else 1.0 / lam, y_samples)
    fro = load_frozen_constants()[f"n={n}"]
    C_t = fro["alex_upper_t"]
    C_inf = fro["alex_upper_inf"]
    eps_prime = constants.eps_c / (16.0 * n) if math.isfinite(constants.eps_c) \
        else math.inf
    pre_ok = _check_diameter(S, eps_prime, strict)

    # interpolate w at q_t (multilinear through the stored grid)
    from scipy.interpolate import RegularGridInterpolator
    interp = RegularGridInterpolator(S.axes, S.w, bounds_error=False,
                                     fill_value=np.nan)
    w_t = float(interp(q_t[None])[0])
    expo = 1.0 / 2 ** (n - 1)
    vol2 = S.mask_volume**2
    lhs1 = abs(w_t) ** n
    rhs1 = safety * C_t * gt_plus * Lam_ct * (1.0 - t) ** expo * vol2
    lhs2 = abs(S.inf_value) ** n / vol2
    rhs2 = safety * C_inf * gt_plus * Lam_ct

    profile = []
    if t_profile is not None:
        gauges = S.gauge(S.mask_points())
        wv = S.mask_values()
        for tp_ in t_profile:
            sel = np.abs(gauges - tp_) <= scale_cell
            if sel.any():
                profile.append([float(tp_), float(np.abs(wv[sel]).max()),
                                float(safety * C_t * gt_plus * Lam_ct
                                      * (1.0 - tp_) ** expo * vol2) ** (1.0 / n)])
    ratio1 = lhs1 / rhs1 if rhs1 > 0 else 0.0
    ratio2 = lhs2 / rhs2
    ratio = max(ratio1, ratio2)
    verdict = "pass" if ratio <= 1.0 + 1e-9 else "fail"
    return EstimateReport(
        "alexandrov_upper", float(lhs1), float(rhs1), float(C_t), "frozen",
        float(ratio), verdict,
        extras={"lhs_inf": float(lhs2), "rhs_inf": float(rhs2), "t": float(t),
                "ratio_at_t": float(ratio1), "ratio_inf": float(ratio2),
                "precondition_ok": bool(pre_ok), "profile": profile,
                "safety": safety})


# -- ctilde-cones -----------------------------------------------------------------

@dataclass
class CConeData:
    qt: np.ndarray
    height: float
    candidates: np.ndarray        # admissible target points, base first
    values: np.ndarray            # cone values on the section mask nodes
    boundary_values: np.ndarray
    subgradient_hull: ConvexBody
    section: SectionData
    infeasible_fraction: float


def c_cone(S: SectionData, qt, cost: CostModel = None, chart: ExpChart = None,
           max_boundary_nodes=160, slack_tol=1e-9) -> CConeData:
    """The modified-cost cone over the section with vertex qt.

    Candidate mountains: the base target (value identically utilde(qt)) plus,
    per boundary node q0, the point on the p-chart segment from the base
    toward a supporting partner of q0 where the anchored mountain vanishes at
    q0 (a scalar root-find).  The vertex subdifferential is the hull of the
    candidate gradients at qt; every candidate is active there since all
    anchored mountains agree at the vertex.
    """
    chart = chart or S.chart
    cost = cost or chart.cost
    qt = np.asarray(qt, float)
    gq = float(S.gauge(qt[None])[0])
    if gq > 1.0 - 2.0 * S.cell_size() / max(S.hull.diameter / 2, 1e-300):
        raise ValueError("vertex must be strictly interior to the section")
    from scipy.interpolate import RegularGridInterpolator
    interp = RegularGridInterpolator(S.axes, S.w, bounds_error=False,
                                     fill_value=np.nan)
    h_qt = float(interp(qt[None])[0])
    if not h_qt < 0:
        raise ValueError("vertex value must be negative")
    if S.partner_fn is None:
        raise ValueError("section carries no partner function")

    xt = chart.from_q(qt[None])[0]
    # boundary nodes of the mask
    from scipy import ndimage
    bnd = S.mask & ~ndimage.binary_erosion(S.mask)
    bq = S.grid_points[bnd]
    bx = S.x_of_nodes[bnd]
    if len(bq) > max_boundary_nodes:
        stride = len(bq) // max_boundary_nodes + 1
        bq, bx = bq[::stride], bx[::stride]
    partners = np.atleast_2d(S.partner_fn(bx))

    cands = [chart.base.copy()]
    failures = 0
    for q0, x0, y0 in zip(bq, bx, partners):
        p0 = cost.p_of_y(chart.base, x0)
        p1 = cost.p_of_y(y0, x0)

        def y_of(t):
            pt = (1 - t) * p0 + t * p1
            if cost.y_of_p_closed is not None:
                return cost.y_of_p_closed(pt[None], x0)[0]
            return _newton_chart(cost, x0, pt[None], y0[None], "y").point[0]

        def phi(t):
            yt_ = y_of(t)
            return float(-chart.modified_cost(q0[None], yt_[None], x=x0[None])[0]
                         + chart.modified_cost(qt[None], yt_[None], x=xt[None])[0]
                         + h_qt)

        lo, hi = phi(0.0), phi(1.0)
        if lo > 0 or hi < 0 or not (np.isfinite(lo) and np.isfinite(hi)):
            failures += 1
            continue
        ts = brentq(phi, 0.0, 1.0, xtol=1e-14)
        cands.append(y_of(ts))
    if len(cands) <= 1:
        raise ConstraintInfeasible(
            "no admissible candidate beyond the base target; target grid too coarse")
    cands = np.asarray(cands)

    qs = S.mask_points()
    xs = S.mask_x()
    m = chart.modified_cost(qs[:, None, :], cands[None, :, :], x=xs[:, None, :])
    m_qt = chart.modified_cost(qt[None, None, :], cands[None, :, :],
                               x=xt[None, None, :])[0]
    vals = (-m + m_qt[None, :] + h_qt).max(-1)
    grads = chart.grad_q_modified_cost(
        np.broadcast_to(qt, cands.shape).copy(), cands,
        x=np.broadcast_to(xt, cands.shape).copy())
    grads = -grads
    try:
        sub_hull = ConvexBody(grads)
    except Exception as exc:
        raise HullDegenerate(f"vertex subdifferential degenerate: {exc}") from exc

    bvals = (-chart.modified_cost(bq[:, None, :], cands[None, :, :],
                                  x=bx[:, None, :])
             + m_qt[None, :] + h_qt).max(-1)
    return CConeData(qt, h_qt, cands, vals, bvals, sub_hull, S,
                     failures / max(len(bq), 1))


def cone_mass_bound(cone: CConeData, direction=None, safety=2.0,
                    strict=False, constants: CostConstants = None) -> EstimateReport:
    """Vertex-mass lower bound for the cone against parallel supporting planes.

    |h(qt)|^n <= C(n) (min dist(qt, Pi+-) / ell) |dh|({qt}) vol(Q), with Pi+-
    the supporting hyperplanes orthogonal to `direction` (default: the longest
    John axis) and ell the maximal chord parallel to it.
    """
    S = cone.section
    n = S.n
    if direction is None:
        w, R = np.linalg.eigh(S.john.shape)
        direction = R[:, -1]
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    proj = S.hull.vertices @ d
    dplus = float(proj.max() - cone.qt @ d)
    dminus = float(cone.qt @ d - proj.min())
    # maximal chord parallel to d: chords through hull vertices and the center
    ell = S.hull.chord_length(S.john.center, d)
    for v in S.hull.vertices:
        ell = max(ell, S.hull.chord_length(v, d))
    sub_vol = cone.subgradient_hull.volume
    frozen = load_frozen_constants()[f"n={n}"]["cone_mass"]
    pre_ok = True
    if constants is not None:
        eps_prime = constants.eps_c / (16.0 * n) if math.isfinite(
            constants.eps_c) else math.inf
        pre_ok = _check_diameter(S, eps_prime, strict)
    lhs = abs(cone.height) ** n
    rhs = safety * frozen * (min(dplus, dminus) / ell) * sub_vol * S.mask_volume
    return EstimateReport.from_sides(
        "cone_mass_bound", lhs, rhs, frozen, "frozen",
        extras={"subgradient_volume": sub_vol, "chord": ell,
                "dist_plus": dplus, "dist_minus": dminus,
                "precondition_ok": bool(pre_ok), "safety": safety})


# -- paper-constant checks ---------------------------------------------------------

def dual_norm_paper_constant(n: int, rho: float) -> float:
    return 8.0 * n / (1.0 - rho) ** 2


def dual_norm_gradient_bound(S: SectionData, rho, cost: CostModel = None,
                             chart: ExpChart = None,
                             constants: CostConstants = None,
                             max_pairs=4096, strict=False) -> EstimateReport:
    """Gradient dual-norm bound with the closed-form constant 8n/(1-rho)^2.

    K is the section hull translated so its John center sits at the origin;
    q runs over mask nodes inside rho.K and y over their supporting partners;
    the inequality |-D_q ctilde(q,y)|*_K <= C*(n,rho) |inf_K utilde| must hold
    for every sampled pair, with no fitted factor.
    """
    chart = chart or S.chart
    cost = cost or chart.cost
    if not (0 < rho < 1):
        raise ValueError("rho must lie in (0, 1)")
    pre_ok = True
    if constants is not None:
        limit = constants.eps_c / 4.0 if math.isfinite(constants.eps_c) else math.inf
        pre_ok = _check_diameter(S, limit, strict)
    ctr = S.john.center
    verts = S.hull.vertices - ctr
    qs = S.mask_points()
    gauges = S.gauge(qs)
    inner = gauges <= rho
    if not inner.any():
        raise ValueError("no mask node inside the rho-dilation")
    qin = qs[inner]
    xin = S.x_of_nodes[S.mask][inner]
    stride = max(1, len(qin) // 64)
    qin, xin = qin[::stride], xin[::stride]
    if S.partner_fn is None:
        raise ValueError("section carries no partner function")
    ys = np.unique(np.atleast_2d(S.partner_fn(xin)), axis=0)
    g = chart.grad_q_modified_cost(qin[:, None, :], ys[None, :, :],
                                   x=xin[:, None, :])
    dn = np.einsum("abi,vi->abv", -g, verts).max(-1)
    lhs = float(dn.max())
    const = dual_norm_paper_constant(S.n, rho)
    rhs = const * abs(S.inf_value)
    return EstimateReport.from_sides(
        "dual_norm_gradient_bound", lhs, rhs, const, "paper",
        extras={"rho": rho, "n_q": len(qin), "n_y": len(ys),
                "precondition_ok": bool(pre_ok)})


def gradient_direction_lipschitz(cost: CostModel, chart: ExpChart, q, qtilde, y,
                                 constants: CostConstants):
    """Both gradient-direction Lipschitz inequalities at one triple.

    Returns (lhs1, lhs2, rhs1, rhs2): the raw-gradient difference against
    (1/eps_c)|q - qt||D_q ct(qt, y)| and the unit-vector difference against
    (2/eps_c)|q - qt|.  y equal to the chart base raises ZeroGradient (the
    unit-vector form is vacuous there).  An infinite eps_c (vanishing third
    derivatives) makes both right sides zero: the gradient must not vary.
    """
    q = np.asarray(q, float)
    qtilde = np.asarray(qtilde, float)
    y = np.asarray(y, float)
    if np.allclose(y, chart.base, atol=1e-12):
        raise ZeroGradient("y coincides with the chart base")
    g_q = chart.grad_q_modified_cost(q[None], y[None])[0]
    g_qt = chart.grad_q_modified_cost(qtilde[None], y[None])[0]
    lhs1 = float(np.linalg.norm(g_q - g_qt))
    n_q, n_qt = np.linalg.norm(g_q), np.linalg.norm(g_qt)
    lhs2 = float(np.linalg.norm(g_q / max(n_q, 1e-300)
                                - g_qt / max(n_qt, 1e-300)))
    dist = float(np.linalg.norm(q - qtilde))
    if math.isinf(constants.eps_c):
        rhs1 = 0.0
        rhs2 = 0.0
    else:
        rhs1 = (1.0 / constants.eps_c) * dist * n_qt
        rhs2 = (2.0 / constants.eps_c) * dist
    return lhs1, lhs2, rhs1, rhs2
