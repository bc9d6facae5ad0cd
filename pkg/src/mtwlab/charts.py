"""Cost-exponential coordinates, modified cost, and transformed potentials.

The chart at a base target point yt sends x to q = -D_y c(x, yt); in these
coordinates c-segments through the base become straight lines and sublevel
sets of the transformed potential become convex under the weak curvature
condition.  The modified cost is ctilde(q, y) = c(x(q), y) - c(x(q), yt),
identically zero at y = yt.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import ConvexHull

from .cost_model import CostModel, _newton_chart
from .errors import (
    ExtrapolationRequested,
    NewtonDiverged,
    OutOfDomain,
    SingularAffineMap,
    SolutionOutsideU,
)


class GridPotential:
    """Potential given by values on a regular source-box grid, multilinear."""

    def __init__(self, axes, values):
        self.axes = [np.asarray(a, float) for a in axes]
        self.values = np.asarray(values, float)
        if self.values.shape != tuple(len(a) for a in self.axes):
            raise ValueError("values shape does not match axes")

    def value(self, x):
        from scipy.interpolate import RegularGridInterpolator
        interp = RegularGridInterpolator(self.axes, self.values,
                                         bounds_error=False, fill_value=np.nan)
        return interp(np.asarray(x, float))


@dataclass
class ExpChart:
    """Cost-exponential chart at a base point of the opposite domain.

    side='target' (default): base is yt in V, chart is q(x) = -D_y c(x, yt)
    on the source box.  side='source': base is xt in U, chart is
    p(y) = -D_x c(xt, y) on the target box.
    """

    cost: CostModel
    base: np.ndarray
    side: str = "target"
    newton_tol: float = 1e-11
    boundary_samples: int = 0
    _qU: np.ndarray = field(default=None, repr=False)
    _hull_eq: np.ndarray = field(default=None, repr=False)
    _bbox: tuple = field(default=None, repr=False)

    def __post_init__(self):
        self.base = np.asarray(self.base, float)
        if self.side not in ("target", "source"):
            raise ValueError("side must be 'target' or 'source'")
        dom = self._domain_box()
        per_axis = {1: 65, 2: 33, 3: 13}[self.cost.n]
        if self.boundary_samples:
            per_axis = self.boundary_samples
        X = dom.grid(per_axis)
        q = self.to_q(X)
        self._qU = q
        self._bbox = (q.min(0), q.max(0))
        if self.cost.n >= 2:
            hull = ConvexHull(q)
            self._hull_eq = hull.equations
        else:
            self._hull_eq = None

    def _domain_box(self):
        return self.cost.source if self.side == "target" else self.cost.target

    @property
    def n(self):
        return self.cost.n

    @property
    def bbox(self):
        return self._bbox

    @property
    def domain_samples(self):
        return self._qU

    def cell_size(self, grid):
        lo, hi = self._bbox
        return float(((hi - lo) / (grid - 1)).max())

    # -- forward / inverse ----------------------------------------------------

    def to_q(self, x):
        x = np.asarray(x, float)
        if not self._domain_box().contains(x, tol=1e-9).all():
            raise OutOfDomain("point outside the chart's base box")
        if self.side == "target":
            return self.cost.q_of_x(x, self.base)
        return self.cost.p_of_y(x, self.base)

    def from_q(self, q, check_domain=True):
        """Invert the chart by damped Newton from the box center (or the
        closed-form seed when the cost provides one)."""
        q = np.asarray(q, float)
        closed = (self.cost.x_of_q_closed if self.side == "target"
                  else self.cost.y_of_p_closed)
        dom = self._domain_box()
        if closed is not None:
            seed = closed(q, self.base)
        else:
            seed = np.broadcast_to(dom.center, q.shape).copy()
        solve_for = "x" if self.side == "target" else "y"
        res = _newton_chart(self.cost, self.base, q, seed, solve_for,
                            tol=self.newton_tol)
        bad = res.residual > 10 * self.newton_tol
        if bad.any():
            raise NewtonDiverged(
                f"{int(np.count_nonzero(bad))} chart inversions did not converge")
        if check_domain:
            out = ~dom.contains(res.point, tol=1e-7 * dom.diameter)
            if out.any():
                raise SolutionOutsideU(
                    f"{int(np.count_nonzero(out))} inverse points left the box")
        return res.point

    def membership(self, q, slack=0.0):
        """Hull test against the sampled chart domain; slack in q-units."""
        q = np.asarray(q, float)
        if self._hull_eq is None:
            lo, hi = self._bbox
            return ((q >= lo - slack) & (q <= hi + slack)).all(-1)
        a = self._hull_eq[:, :-1]
        b = self._hull_eq[:, -1]
        return (q @ a.T + b <= slack).all(-1)

    # -- modified cost ---------------------------------------------------------

    def modified_cost(self, q, y, x=None):
        """ctilde(q, y) = c(x(q), y) - c(x(q), base); zero at y = base."""
        if x is None:
            x = self.from_q(q)
        if self.side == "target":
            return self.cost.value(x, y) - self.cost.value(x, self.base)
        return self.cost.value(y, x) - self.cost.value(self.base, x)

    def grad_q_modified_cost(self, q, y, x=None):
        """D_q ctilde(q, y) = (D_q x)^T (D_x c(x,y) - D_x c(x,base))."""
        if x is None:
            x = self.from_q(q)
        if self.side == "target":
            A = self.cost.mixed_hessian(x, self.base)
            Dqx = -np.linalg.inv(np.swapaxes(A, -1, -2))
            g = self.cost.grad_x(x, y) - self.cost.grad_x(x, self.base)
        else:
            A = self.cost.mixed_hessian(self.base, x)
            Dqx = -np.linalg.inv(A)
            g = self.cost.grad_y(y, x) - self.cost.grad_y(self.base, x)
        return np.einsum("...ji,...j->...i", Dqx, g)

    def det_mixed_ratio(self, q, y, x=None):
        """|det D2_{qy} ctilde(q,y)| = |det D2_{xy} c(x(q),y)| / |det D2_{xy} c(x(q),base)|."""
        if x is None:
            x = self.from_q(q)
        if self.side == "target":
            num = np.abs(np.linalg.det(self.cost.mixed_hessian(x, y)))
            den = np.abs(np.linalg.det(self.cost.mixed_hessian(x, self.base)))
        else:
            num = np.abs(np.linalg.det(self.cost.mixed_hessian(y, x)))
            den = np.abs(np.linalg.det(self.cost.mixed_hessian(y, self.base)))
        return num / den

    def gamma_tilde(self, q_samples, y_samples, x=None):
        """Sampled sup bounds (gamma+_ct, gamma-_ct) of the modified mixed
        Jacobian determinant over q_samples x y_samples."""
        if x is None:
            x = self.from_q(np.asarray(q_samples, float))
        r = self.det_mixed_ratio(None, np.asarray(y_samples, float)[None, :, :],
                                 x=x[:, None, :])
        return float(r.max()), float((1.0 / r).max())

    def chart_jacobian_bounds(self, q_samples, y_samples, x=None):
        """Sampled sup of |det D2_xy c| and its inverse over x(q) x V samples.

        These transform source-side density bounds onto the chart:
        lam_ct = lam / gamma_c+, Lam_ct = Lam * gamma_c-.
        """
        if x is None:
            x = self.from_q(np.asarray(q_samples, float))
        if self.side == "target":
            dets = np.abs(np.linalg.det(
                self.cost.mixed_hessian(x[:, None, :],
                                        np.asarray(y_samples, float)[None, :, :])))
        else:
            dets = np.abs(np.linalg.det(
                self.cost.mixed_hessian(np.asarray(y_samples, float)[None, :, :],
                                        x[:, None, :])))
        return float(dets.max()), float((1.0 / dets).max())


@dataclass
class TransformedPotential:
    """Values of utilde(q) = u(x(q)) + c(x(q), base) on a regular q-grid."""

    chart: ExpChart
    axes: list
    values: np.ndarray
    x_of_nodes: np.ndarray = None
    evaluator: Optional[Callable] = None
    renormalized_cost_key: Optional[dict] = None

    @property
    def grid_points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def cell_volume(self):
        return float(np.prod([a[1] - a[0] for a in self.axes]))

    def value(self, q):
        """Multilinear interpolation; exact evaluator takes precedence."""
        if self.evaluator is not None:
            return self.evaluator(np.asarray(q, float))
        from scipy.interpolate import RegularGridInterpolator
        interp = RegularGridInterpolator(self.axes, self.values,
                                         bounds_error=False, fill_value=np.nan)
        out = interp(np.asarray(q, float))
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        qq = np.asarray(q, float)
        outside = ((qq < lo) | (qq > hi)).any(-1)
        if np.any(outside):
            raise ExtrapolationRequested("query outside the q-grid")
        return out

    def to_csv(self, path):
        pts = self.grid_points.reshape(-1, self.chart.n)
        vals = self.values.reshape(-1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"q{i}" for i in range(self.chart.n)] + ["utilde"])
            for p, v in zip(pts, vals):
                w.writerow(list(p) + [v])

    def header_json(self):
        return {
            "cost": self.chart.cost.name,
            "side": self.chart.side,
            "base": self.chart.base.tolist(),
            "grid": [len(a) for a in self.axes],
            "bbox": [self.chart.bbox[0].tolist(), self.chart.bbox[1].tolist()],
            "newton_tol": self.chart.newton_tol,
            "renormalized_cost_key": self.renormalized_cost_key,
        }

    def to_json_header(self, path):
        with open(path, "w") as fh:
            json.dump(self.header_json(), fh, indent=2, sort_keys=True)


def transform_potential(chart: ExpChart, u, grid=128) -> TransformedPotential:
    """Sample utilde(q) = u(x(q)) + c(x(q), base) on a regular q-grid.

    `u` is anything with a batched `.value(x)` (grid potential or discrete
    max-form potential).  Nodes outside the sampled chart domain, or whose
    inverse leaves the source box, carry NaN; membership slack is one cell.
    """
    lo, hi = chart.bbox
    axes = [np.linspace(lo[i], hi[i], grid) for i in range(chart.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    Q = np.stack(mesh, axis=-1)
    flat = Q.reshape(-1, chart.n)
    cell = chart.cell_size(grid)
    inside = chart.membership(flat, slack=-1e-9)
    x = np.full(flat.shape, np.nan)
    vals = np.full(flat.shape[0], np.nan)
    if inside.any():
        try:
            xi = chart.from_q(flat[inside], check_domain=False)
        except NewtonDiverged:
            # retry pointwise, dropping the non-convergent nodes
            xi = np.full((int(inside.sum()), chart.n), np.nan)
            idxs = np.where(inside)[0]
            for k, qq in enumerate(flat[inside]):
                try:
                    xi[k] = chart.from_q(qq[None], check_domain=False)[0]
                except NewtonDiverged:
                    pass
        dom = chart._domain_box()
        ok = ~np.isnan(xi).any(-1)
        ok &= dom.contains(xi, tol=1e-7 * dom.diameter)
        x[inside] = np.where(ok[:, None], xi, np.nan)
        sel = inside.copy()
        sel[inside] &= ok
        if sel.any():
            xs = x[sel]
            uu = np.asarray(u.value(xs), float)
            if chart.side == "target":
                vals[sel] = uu + chart.cost.value(xs, chart.base)
            else:
                vals[sel] = uu + chart.cost.value(chart.base, xs)
    shape = tuple(len(a) for a in axes)
    return TransformedPotential(chart, axes, vals.reshape(shape),
                                x_of_nodes=x.reshape(shape + (chart.n,)))


def renormalize(tp: TransformedPotential, L: np.ndarray,
                offset=None, grid=None) -> TransformedPotential:
    """Affine renormalization utilde*(q) = |det L|^(-2/n) utilde(Lq + offset).

    Returns the renormalized potential on a regular grid over the pulled-back
    bounding box, together with the renormalized cost key
    ctilde*(q, y) = |det L|^(-2/n) ctilde(Lq + offset, L* y).
    """
    L = np.asarray(L, float)
    n = tp.chart.n
    det = np.linalg.det(L)
    if abs(det) < 1e-14:
        raise SingularAffineMap("affine map is singular")
    if offset is None:
        offset = np.zeros(n)
    offset = np.asarray(offset, float)
    Li = np.linalg.inv(L)
    scale = abs(det) ** (-2.0 / n)

    lo = np.array([a[0] for a in tp.axes])
    hi = np.array([a[-1] for a in tp.axes])
    corners = np.stack(np.meshgrid(*[[l, h] for l, h in zip(lo, hi)],
                                   indexing="ij"), -1).reshape(-1, n)
    pulled = (corners - offset) @ Li.T
    plo, phi = pulled.min(0), pulled.max(0)
    m = grid or len(tp.axes[0])
    axes = [np.linspace(plo[i], phi[i], m) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    Qs = np.stack(mesh, axis=-1).reshape(-1, n)
    fwd = Qs @ L.T + offset
    clip = np.clip(fwd, lo + 1e-12, hi - 1e-12)
    if tp.evaluator is not None:
        vals = scale * tp.evaluator(fwd)
    else:
        from scipy.interpolate import RegularGridInterpolator
        interp = RegularGridInterpolator(tp.axes, tp.values,
                                         bounds_error=False, fill_value=np.nan)
        vals = scale * interp(clip)
        vals[((fwd < lo - 1e-9) | (fwd > hi + 1e-9)).any(-1)] = np.nan
    evaluator = None
    if tp.evaluator is not None:
        base_eval = tp.evaluator
        evaluator = lambda q: scale * base_eval(np.asarray(q, float) @ L.T + offset)
    key = {
        "scale": scale,
        "L": L.tolist(),
        "Lstar": L.T.tolist(),
        "offset": offset.tolist(),
        "base_cost": tp.chart.cost.name,
    }
    shape = tuple(len(a) for a in axes)
    return TransformedPotential(tp.chart, axes, np.asarray(vals).reshape(shape),
                                evaluator=evaluator, renormalized_cost_key=key)


def subgradient_image_volume(tp: TransformedPotential, cell_lo, cell_hi,
                             samples_per_edge=9, cell_map=None):
    """Volume of the gradient image of a cell, via the hull of sampled
    gradients (exact for quadratics).

    The cell is the axis box [cell_lo, cell_hi], or its image under
    `cell_map` (a callable on point arrays) for parallelotope cells.
    Gradients come from the exact evaluator when present (centered
    differences with a step well inside the cell), else from grid values.
    """
    cell_lo = np.asarray(cell_lo, float)
    cell_hi = np.asarray(cell_hi, float)
    n = tp.chart.n
    axes = [np.linspace(cell_lo[i], cell_hi[i], samples_per_edge)
            for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack(mesh, axis=-1).reshape(-1, n)
    if cell_map is not None:
        P = np.asarray(cell_map(P), float)
    h = float((cell_hi - cell_lo).min()) / (4 * samples_per_edge)

    def grad(q):
        g = np.empty_like(q)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            g[:, i] = (np.asarray(tp.value(q + e)) - np.asarray(tp.value(q - e))) / (2 * h)
        return g

    G = grad(P)
    G = G[~np.isnan(G).any(-1)]
    if len(G) < n + 1:
        return 0.0
    if n == 1:
        return float(G.max() - G.min())
    hull = ConvexHull(G)
    return float(hull.volume)
