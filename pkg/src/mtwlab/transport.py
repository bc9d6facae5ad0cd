"""Discrete Monge-Kantorovich solver and the measure-theoretic machinery.

The solver is exact: equal-mass instances V reduce to the assignment problem
(Jonker-Volgenant), with optimal duals recovered by shortest-path closure of
the tight-edge graph; general weights go through the HiGHS simplex on the
bipartite transportation polytope.  Duals are tightened by one c-transform
pass each so the source potential is c-convex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .cost_model import CostModel, DomainBox, _newton_chart
from .errors import (
    DegenerateHull,
    Infeasible,
    NewtonDiverged,
    SegmentEscapesDomain,
    SolverStalled,
)

WEIGHT_TOL = 1e-12


@dataclass
class DiscreteMeasure:
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.support = np.atleast_2d(np.asarray(self.support, float))
        self.weights = np.asarray(self.weights, float)
        if len(self.support) != len(self.weights):
            raise ValueError("support/weights length mismatch")
        if (self.weights < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must sum to 1")
        if len(self.support) > 1:
            tree = cKDTree(self.support)
            dd, _ = tree.query(self.support, k=2)
            if dd[:, 1].min() <= 0:
                raise ValueError("support points must be pairwise distinct")

    def __len__(self):
        return len(self.weights)

    @property
    def uniform(self):
        return np.allclose(self.weights, self.weights[0], rtol=0, atol=WEIGHT_TOL)

    def spacing(self):
        tree = cKDTree(self.support)
        dd, _ = tree.query(self.support, k=2)
        return float(np.median(dd[:, 1]))

    def to_json(self):
        return {"support": self.support.tolist(), "weights": self.weights.tolist()}

    @staticmethod
    def from_json(obj):
        return DiscreteMeasure(np.asarray(obj["support"], float),
                               np.asarray(obj["weights"], float))


@dataclass
class ProblemSpec:
    cost: CostModel
    mu_plus: DiscreteMeasure
    mu_minus: DiscreteMeasure
    lam: float
    Lam: float
    U_lambda: DomainBox
    target_region: Optional[dict] = None   # e.g. {"kind":"ball","center":...,"radius":...}

    def __post_init__(self):
        if not (0 < self.lam <= self.Lam < np.inf):
            raise ValueError("need 0 < lambda <= Lambda < inf")


@dataclass
class KantorovichSolution:
    spec: ProblemSpec
    plan_rows: np.ndarray
    plan_cols: np.ndarray
    plan_vals: np.ndarray
    u: np.ndarray
    v: np.ndarray
    total_cost: float
    tie_records: list = field(default_factory=list)

    @property
    def X(self):
        return self.spec.mu_plus.support

    @property
    def Y(self):
        return self.spec.mu_minus.support

    def cost_matrix(self):
        return self.spec.cost.value(self.X[:, None, :], self.Y[None, :, :])

    def duality_gap(self):
        a, b = self.spec.mu_plus.weights, self.spec.mu_minus.weights
        dual = -(a @ self.u + b @ self.v)
        return abs(self.total_cost - dual)

    def partner_of(self):
        """Highest-mass plan partner per source index."""
        m = len(self.X)
        best = np.full(m, -1, dtype=int)
        mass = np.zeros(m)
        for r, c, w in zip(self.plan_rows, self.plan_cols, self.plan_vals):
            if w > mass[r]:
                mass[r] = w
                best[r] = c
        return best

    # c-convex extension of the potential to arbitrary points
    def u_at(self, x):
        """u(x) = max_j (-c(x, y_j) - v_j); returns (values, argmax index)."""
        cc = self.spec.cost.value(np.asarray(x, float)[..., None, :],
                                  self.Y[None, :])
        t = -cc - self.v
        return t.max(-1), t.argmax(-1)

    def v_at(self, y):
        """v(y) = max_i (-c(x_i, y) - u_i): c-transform extension to the target."""
        cc = self.spec.cost.value(self.X[None, :],
                                  np.asarray(y, float)[..., None, :])
        t = -cc - self.u
        return t.max(-1), t.argmax(-1)

    class _MaxFormPotential:
        def __init__(self, sol):
            self.sol = sol

        def value(self, x):
            return self.sol.u_at(x)[0]

    def potential(self):
        return KantorovichSolution._MaxFormPotential(self)

    def dump(self, plan_csv, potentials_json):
        import csv
        with open(plan_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source_index", "target_index", "mass"])
            for r, c, m in zip(self.plan_rows, self.plan_cols, self.plan_vals):
                w.writerow([int(r), int(c), float(m)])
        with open(potentials_json, "w") as fh:
            json.dump({"u": self.u.tolist(), "v": self.v.tolist(),
                       "total_cost": self.total_cost}, fh, sort_keys=True)


def _duals_from_assignment(C, row, col):
    """Optimal duals from an optimal assignment via shortest-path closure.

    Feasibility requires v[sigma(i)] - v[j] <= C[i, j] - C[i, sigma(i)] for
    all (i, j); full Bellman-Ford relaxation sweeps, vectorized.
    """
    m = C.shape[0]
    inv = np.empty(m, dtype=int)
    inv[col] = row
    M = C[inv, :]
    diag = M[np.arange(m), np.arange(m)]
    v = np.zeros(m)
    for _ in range(2 * m):
        cand = (M + v[None, :]).min(axis=1) - diag
        v_new = np.minimum(v, cand)
        if (v - v_new).max() <= 1e-15:
            v = v_new
            break
        v = v_new
    u = (-C - v[None, :]).max(axis=1)
    return u, v


def c_transform(cost: CostModel, v, target_support, source_points):
    """u(x) = max_y (-c(x, y) - v(y)) over the target support.

    Ties in the argmax resolve to the lowest target index (numpy argmax);
    returns (values, argmax indices).
    """
    C = cost.value(np.asarray(source_points, float)[..., None, :],
                   np.asarray(target_support, float)[None, :])
    t = -C - np.asarray(v, float)
    return t.max(-1), t.argmax(-1)


def solve_kantorovich(spec: ProblemSpec) -> KantorovichSolution:
    """Exact LP optimum of the discrete Monge-Kantorovich problem.

    Equal-count uniform instances (and integer-replicable uniform ones) go
    through the assignment solver; general weights use the HiGHS simplex.
    Duals are tightened by one c-transform pass each.
    """
    a = spec.mu_plus.weights
    b = spec.mu_minus.weights
    if abs(a.sum() - b.sum()) > WEIGHT_TOL:
        raise Infeasible("marginal masses differ")
    X, Y = spec.mu_plus.support, spec.mu_minus.support
    N, M = len(X), len(Y)
    if N * M > 10_000**2:
        raise ValueError("support sizes above the 1e4 cap")
    C = spec.cost.value(X[:, None, :], Y[None, :, :])

    uniform = spec.mu_plus.uniform and spec.mu_minus.uniform
    if uniform and N == M:
        row, col = linear_sum_assignment(C)
        u, v = _duals_from_assignment(C, row, col)
        rows, cols, vals = row, col, np.full(N, 1.0 / N)
    elif uniform and max(N, M) % min(N, M) == 0 and max(N, M) // min(N, M) <= 16:
        k = max(N, M) // min(N, M)
        if N < M:
            rep = np.repeat(np.arange(N), k)
            Crep = C[rep, :]
            row, col = linear_sum_assignment(Crep)
            _, v = _duals_from_assignment(Crep, row, col)
            u = (-C - v[None, :]).max(axis=1)
            rows, cols, vals = rep[row], col, np.full(M, 1.0 / M)
        else:
            rep = np.repeat(np.arange(M), k)
            Crep = C[:, rep]
            row, col = linear_sum_assignment(Crep)
            u, _ = _duals_from_assignment(Crep, row, col)
            v = (-C - u[:, None]).max(axis=0)
            rows, cols, vals = row, rep[col], np.full(N, 1.0 / N)
    else:
        rows_src = np.repeat(np.arange(N), M)
        cols_all = np.arange(N * M)
        A_eq = sparse.vstack([
            sparse.csr_matrix((np.ones(N * M), (rows_src, cols_all)),
                              shape=(N, N * M)),
            sparse.csr_matrix((np.ones(N * M), (np.tile(np.arange(M), N), cols_all)),
                              shape=(M, N * M)),
        ]).tocsc()
        res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]),
                      bounds=(0, None), method="highs")
        if res.status != 0:
            raise SolverStalled(f"LP solver status {res.status}: {res.message}")
        gamma = res.x.reshape(N, M)
        rr, cc = np.nonzero(gamma > 1e-15)
        rows, cols, vals = rr, cc, gamma[rr, cc]
        u = -res.eqlin.marginals[:N]
        v = -res.eqlin.marginals[N:]

    # one c-transform pass each: v = u^{c*}, then u = v^c, so u is c-convex
    v_t = (-C - u[:, None]).max(axis=0)
    t_mat = -C - v_t[None, :]
    u_t = t_mat.max(axis=1)
    n_arg = (t_mat >= u_t[:, None] - 1e-12).sum(axis=1)
    ties = np.where(n_arg > 1)[0][:100].tolist()
    total = float((C[rows, cols] * vals).sum())
    sol = KantorovichSolution(spec, np.asarray(rows), np.asarray(cols),
                              np.asarray(vals), u_t, v_t, total, ties)
    return sol


def c_subdifferential(sol: KantorovichSolution, x, tol=1e-9):
    """Target support points y with u(x) + v(y) + c(x, y) <= tol.

    For x on the source support this always contains the plan partners.
    """
    x = np.asarray(x, float)
    ux, _ = sol.u_at(x)
    cc = sol.spec.cost.value(x[None, :], sol.Y)
    slack = ux + sol.v + cc
    idx = np.where(slack <= tol)[0]
    return sol.Y[idx], idx, slack[idx]


def brute_force_lp_cost(cost: CostModel, mu_plus: DiscreteMeasure,
                        mu_minus: DiscreteMeasure):
    """Exhaustive minimum over Birkhoff-polytope vertices (small uniform
    square instances only): used as the independent oracle in tests."""
    from itertools import permutations
    N = len(mu_plus)
    if len(mu_minus) != N or not (mu_plus.uniform and mu_minus.uniform):
        raise ValueError("brute force oracle needs a small uniform square instance")
    C = cost.value(mu_plus.support[:, None, :], mu_minus.support[None, :, :])
    best = np.inf
    for perm in permutations(range(N)):
        tot = C[np.arange(N), perm].sum() / N
        best = min(best, tot)
    return float(best)


@dataclass
class TransportMap:
    points: np.ndarray
    values: np.ndarray
    residuals: np.ndarray
    fallback: np.ndarray
    grid_axes: Optional[list] = None
    grid_values: Optional[np.ndarray] = None

    def at(self, x):
        if self.grid_axes is None:
            raise ValueError("map was not recovered on a grid")
        from scipy.interpolate import RegularGridInterpolator
        comps = []
        for k in range(self.grid_values.shape[-1]):
            interp = RegularGridInterpolator(self.grid_axes,
                                             self.grid_values[..., k],
                                             bounds_error=False, fill_value=np.nan)
            comps.append(interp(np.asarray(x, float)))
        return np.stack(comps, axis=-1)


def recover_map(sol: KantorovichSolution, cost: CostModel = None, grid=64,
                newton_tol=1e-10) -> TransportMap:
    """Recover G from D_x c(x, G(x)) = -Du(x) on a source grid.

    u is the max-form c-convex extension; Du uses centered differences in the
    interior and one-sided stencils at the boundary.  Newton starts from the
    argmax partner and falls back to it where it fails to converge.
    """
    cost = cost or sol.spec.cost
    box = cost.source
    axes = [np.linspace(lo, hi, grid) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    Xg = np.stack(mesh, axis=-1)
    flat = Xg.reshape(-1, cost.n)
    uvals, amax = sol.u_at(flat)
    U = uvals.reshape(Xg.shape[:-1])
    grads = np.stack(np.gradient(U, *axes, edge_order=2), axis=-1)
    Du = grads.reshape(-1, cost.n)
    G0 = sol.Y[amax]

    # D_x c(x, G) = -Du  <=>  F(y) = D_x c(x, y) + Du = 0
    y = G0.copy()

    def resid(yy):
        return cost.grad_x(flat, yy) + Du

    F = resid(y)
    rn = np.linalg.norm(F, axis=-1)
    for _ in range(40):
        if (rn <= newton_tol).all():
            break
        J = cost.mixed_hessian(flat, y)
        try:
            step = np.linalg.solve(J, -F[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        cand = y + step
        Fc = resid(cand)
        rc = np.linalg.norm(Fc, axis=-1)
        better = rc <= rn
        y = np.where(better[:, None], cand, y)
        F = np.where(better[:, None], Fc, F)
        rn = np.minimum(rc, rn)
    fallback = rn > 1e-6
    y = np.where(fallback[:, None], G0, y)
    return TransportMap(flat, y, rn, fallback, axes,
                        y.reshape(Xg.shape[:-1] + (cost.n,)))


def cma_measure(sol: KantorovichSolution, cell_edges, grid=96, tol=1e-9):
    """Hull-based c-Monge-Ampere density per cell of a partition of U_lambda.

    Image points per cell combine the recovered continuum map at interior grid
    nodes with the subdifferential partners of nearby support atoms; the hull
    is taken in the p-chart at the cell center (contact sets are convex
    there), and its volume is mapped back by the local mixed Jacobian.
    Returns (densities, masses, flags).
    """
    cost = sol.spec.cost
    n = cost.n
    tmap = recover_map(sol, cost, grid=grid)
    Gg = tmap.grid_values.reshape(-1, n)
    Xf = tmap.points
    densities, masses, flags = [], [], []
    edges = [np.asarray(e, float) for e in cell_edges]
    from itertools import product
    for idx in product(*[range(len(e) - 1) for e in edges]):
        lo = np.array([edges[d][i] for d, i in enumerate(idx)])
        hi = np.array([edges[d][i + 1] for d, i in enumerate(idx)])
        last = np.array([i + 2 == len(edges[d]) for d, i in enumerate(idx)])
        # half-open cells: shared grid nodes must not enter two hulls; the
        # image is sampled through the recovered map only (exact atom
        # partners would make adjacent cell images overlap at atom scale)
        upper_ok = np.where(last, Xf <= hi, Xf < hi)
        in_cell = ((Xf >= lo) & upper_ok).all(-1)
        face = _cell_face_points(lo, hi, 9)
        img = np.concatenate([Gg[in_cell], tmap.at(face)], axis=0)
        img = img[~np.isnan(img).any(-1)]
        cell_vol = float(np.prod(hi - lo))
        if len(img) < n + 1:
            densities.append(0.0)
            masses.append(0.0)
            flags.append("empty")
            continue
        xc = 0.5 * (lo + hi)
        yc = img.mean(0)
        p = -cost.grad_x(xc, img)
        try:
            if n == 1:
                vol_p = float(p.max() - p.min())
            else:
                vol_p = float(ConvexHull(p).volume)
        except QhullError:
            densities.append(0.0)
            masses.append(0.0)
            flags.append("degenerate-hull")
            continue
        jac = abs(np.linalg.det(cost.mixed_hessian(xc, yc)))
        vol_y = vol_p / jac
        masses.append(vol_y)
        densities.append(vol_y / cell_vol)
        flags.append("ok")
    return np.asarray(densities), np.asarray(masses), flags


def _cell_face_points(lo, hi, per_edge):
    """Points on the boundary faces of the box [lo, hi] (hull support)."""
    n = lo.size
    if n == 1:
        return np.array([[lo[0]], [hi[0]]])
    axes = [np.linspace(lo[d], hi[d], per_edge) for d in range(n)]
    pts = []
    for d in range(n):
        rest = [axes[k] for k in range(n) if k != d]
        mesh = np.meshgrid(*rest, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=-1)
        for val in (lo[d], hi[d]):
            col = np.full((len(flat), 1), val)
            pts.append(np.concatenate([flat[:, :d], col, flat[:, d:]], axis=1))
    return np.concatenate(pts, axis=0)


def ma_density_pde(u_value, u_grad, u_hess, cost: CostModel, x, newton_tol=1e-11):
    """Pointwise Monge-Ampere-type density of a smooth synthetic potential.

    det[D2 u(x) + D2_xx c(x, G(x))] / |det D2_xy c(x, G(x))| with G(x) solved
    from D_x c(x, G) = -Du(x) by Newton (seeded by the closed-form chart when
    the cost provides one).
    """
    x = np.asarray(x, float)
    Du = np.asarray(u_grad(x), float)
    # D_x c(x, G) = -Du  <=>  -D_x c(x, G) = Du: the p-chart target is +Du
    p = Du
    if cost.y_of_p_closed is not None:
        seed = cost.y_of_p_closed(p[None], x)[0]
    else:
        seed = cost.target.center
    res = _newton_chart(cost, x, p[None], seed[None], "y", tol=newton_tol)
    if res.residual[0] > 100 * newton_tol:
        raise NewtonDiverged("map recovery did not converge")
    G = res.point[0]
    H = np.asarray(u_hess(x), float)
    num = np.linalg.det(H + cost.hess_xx(x, G))
    den = abs(np.linalg.det(cost.mixed_hessian(x, G)))
    return float(num / den), G


def dasm_check(cost: CostModel, x, xbar, y0, y1, samples=17, newton_tol=1e-10,
               check_convex=False):
    """Sliding-mountain maximum-principle check along one c*-segment.

    y(t) follows the straight segment in the p-chart at xbar; returns the
    maximal excess of f(t) = -c(x, y(t)) + c(xbar, y(t)) over max(f(0), f(1))
    together with the f-profile (and, optionally, the minimal discrete second
    difference for the convexity form of the principle).
    """
    x = np.asarray(x, float)
    xbar = np.asarray(xbar, float)
    y0 = np.asarray(y0, float)
    y1 = np.asarray(y1, float)
    p0 = cost.p_of_y(y0, xbar)
    p1 = cost.p_of_y(y1, xbar)
    ts = np.linspace(0.0, 1.0, samples)
    f = np.empty(samples)
    ycur = y0.copy()
    for j, t in enumerate(ts):
        pt = (1 - t) * p0 + t * p1
        res = _newton_chart(cost, xbar, pt[None], ycur[None], "y", tol=newton_tol)
        if res.residual[0] > 1e-8:
            raise SegmentEscapesDomain("p-chart segment not invertible")
        ycur = res.point[0]
        if not cost.target.contains(ycur, tol=1e-9):
            raise SegmentEscapesDomain("c*-segment leaves the target box")
        f[j] = float(-cost.value(x, ycur) + cost.value(xbar, ycur))
    viol = float((f - max(f[0], f[-1])).max())
    out = {"violation": viol, "f": f, "t": ts}
    if check_convex:
        d2 = f[:-2] - 2 * f[1:-1] + f[2:]
        out["min_second_difference"] = float(d2.min())
    return out


def reflect_solution(sol: KantorovichSolution) -> KantorovichSolution:
    """The mirrored solution on the transposed cost: u and v swap roles, the
    plan transposes; used to probe the dual-side Monge-Ampere measure."""
    from .cost_model import transpose_cost
    spec = sol.spec
    rspec = ProblemSpec(transpose_cost(spec.cost), spec.mu_minus, spec.mu_plus,
                        spec.lam, spec.Lam, spec.cost.target)
    return KantorovichSolution(rspec, sol.plan_cols.copy(), sol.plan_rows.copy(),
                               sol.plan_vals.copy(), sol.v.copy(), sol.u.copy(),
                               sol.total_cost)


def dasm_sweep(cost: CostModel, n_quadruples=10000, samples=17, seed=0,
               interior_frac=0.98, check_convex=False):
    """Vectorized maximum-principle sweep over random quadruples.

    Quadruples whose p-chart segment leaves the target box (or fails to
    invert) are dropped and counted; the violation is relative to the sup of
    |f| over the surviving sweep.
    """
    rng = np.random.default_rng(seed)
    n = cost.n
    lo_u = cost.source.center - interior_frac * (cost.source.center - cost.source.lower)
    hi_u = cost.source.center + interior_frac * (cost.source.upper - cost.source.center)
    lo_v = cost.target.center - interior_frac * (cost.target.center - cost.target.lower)
    hi_v = cost.target.center + interior_frac * (cost.target.upper - cost.target.center)
    x = rng.uniform(lo_u, hi_u, (n_quadruples, n))
    xb = rng.uniform(lo_u, hi_u, (n_quadruples, n))
    y0 = rng.uniform(lo_v, hi_v, (n_quadruples, n))
    y1 = rng.uniform(lo_v, hi_v, (n_quadruples, n))
    p0 = cost.p_of_y(y0, xb)
    p1 = cost.p_of_y(y1, xb)
    ts = np.linspace(0.0, 1.0, samples)
    f = np.empty((n_quadruples, samples))
    ok = np.ones(n_quadruples, bool)
    ycur = y0.copy()
    for j, t in enumerate(ts):
        pt = (1 - t) * p0 + t * p1
        res = _newton_chart(cost, xb, pt, ycur, "y")
        ycur = res.point
        ok &= res.residual < 1e-8
        ok &= cost.target.contains(ycur, tol=1e-9)
        f[:, j] = -cost.value(x, ycur) + cost.value(xb, ycur)
    fo = f[ok]
    scale = float(np.abs(fo).max())
    viol = (fo - np.maximum(fo[:, [0]], fo[:, [-1]])).max(axis=1)
    out = {"n_ok": int(ok.sum()), "n_total": n_quadruples, "scale": scale,
           "max_violation": float(viol.max()),
           "max_violation_rel": float(viol.max() / scale)}
    if check_convex:
        d2 = fo[:, :-2] - 2.0 * fo[:, 1:-1] + fo[:, 2:]
        out["min_second_difference_rel"] = float(d2.min() / scale)
    return out


def boundary_mixing_check(sol: KantorovichSolution, spec: ProblemSpec = None,
                          tol=1e-9):
    """Interior sources must not map to boundary targets.

    Interior means more than two source-spacing cells from the source box
    boundary; a partner violates if it lies within one target-spacing cell of
    the boundary of the target support hull (the strongly convex surrogate).
    Report-only: returns the violating (source, target) index pairs.
    """
    spec = spec or sol.spec
    cost = spec.cost
    X, Y = sol.X, sol.Y
    sp_x = spec.mu_plus.spacing()
    sp_y = spec.mu_minus.spacing()
    hull = ConvexHull(Y)
    a = hull.equations[:, :-1]
    b = hull.equations[:, -1]
    norms = np.linalg.norm(a, axis=-1)
    # distance to hull boundary from inside (positive inside)
    d_bnd = (-(Y @ a.T + b) / norms).min(axis=-1)
    interior_src = cost.source.margin(X) > 2.0 * sp_x
    ua, _ = sol.u_at(X)
    C = sol.cost_matrix()
    slack = ua[:, None] + sol.v[None, :] + C
    violations = []
    for i in np.where(interior_src)[0]:
        js = np.where(slack[i] <= tol)[0]
        bad = js[d_bnd[js] < sp_y]
        for j in bad:
            violations.append((int(i), int(j)))
    return violations


def contact_cell_partners(sol: KantorovichSolution, quad_per_axis=220):
    """Smoothed subdifferential selection: the p-chart barycenter of each
    source atom's contact cell against the c-transform extension of v.

    Every point of the cell is an exact zero-slack partner of the max-form
    potential; the barycenter (contact sets are convex in the p-chart by the
    local-global principle) varies much more smoothly across atoms than the
    raw argmax atom, which matters for the regularity diagnostics.
    """
    cost = sol.spec.cost
    X, Y = sol.X, sol.Y
    N = len(X)
    hull = ConvexHull(Y) if cost.n >= 2 else None
    lo, hi = Y.min(0), Y.max(0)
    axes = [np.linspace(l, h, quad_per_axis) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    Yq = np.stack(mesh, axis=-1).reshape(-1, cost.n)
    if hull is not None:
        keep = (Yq @ hull.equations[:, :-1].T + hull.equations[:, -1] <= 0).all(-1)
        Yq = Yq[keep]
    owner = np.full(len(Yq), -1, dtype=np.int64)
    best = np.full(len(Yq), -np.inf)
    chunk = max(1, int(4e6 / max(len(Yq), 1)))
    for s in range(0, N, chunk):
        t = -cost.value(X[s:s + chunk, None, :], Yq[None, :, :]) \
            - sol.u[s:s + chunk, None]
        mx = t.max(0)
        am = t.argmax(0)
        upd = mx > best
        owner[upd] = am[upd] + s
        best[upd] = mx[upd]
    P = -cost.grad_x(X[owner], Yq)
    pbar = np.zeros((N, cost.n))
    cnt = np.zeros(N)
    np.add.at(pbar, owner, P)
    np.add.at(cnt, owner, 1.0)
    has = cnt > 0
    pbar[has] /= cnt[has, None]
    partners = Y[sol.partner_of()].copy()
    if has.any():
        if cost.y_of_p_closed is not None:
            ysm = cost.y_of_p_closed(pbar[has], X[has])
        else:
            res = _newton_chart(cost, X[has], pbar[has], partners[has], "y")
            ysm = res.point
        ok = cost.target.contains(ysm, tol=1e-9)
        sel = np.where(has)[0][ok]
        partners[sel] = ysm[ok]
    return partners
