"""End-to-end regularity diagnostics: section comparison, engulfing, the
c-monotonicity gain, injectivity, and the Hölder modulus of the map.

Membership of xbar in the section S(x, y, k tau) is linear in k tau, so the
minimal engulfing factor per ordered pair is the closed-form ratio of the two
section excesses e(x; xbar, ybar) = u(x) - u(xbar) + c(x, ybar) - c(xbar, ybar).
Partners are the smoothed contact-cell selections from the transport module:
raw argmax partners jump atom-to-atom and would drown the per-scale engulfing
statistics in quantization noise (see the report's noise diagnostics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cost_model import CostModel
from .charts import ExpChart, transform_potential
from .errors import InsufficientScales, NoAdmissiblePairs, ShrinkTau
from .estimates import EstimateReport, section
from .transport import KantorovichSolution, TransportMap, contact_cell_partners


@dataclass
class EngulfingReport:
    n_pairs: int
    tau_grid: list
    K_of_tau: list
    bin_counts: list
    K_emp: float
    spread: float                # std/mean of K(tau) across the grid
    quantile: float
    minimal_k: list = field(default_factory=list)   # capped per-pair sample
    noise_scale: float = 0.0

    def to_json(self):
        return {"n_pairs": self.n_pairs, "tau_grid": list(self.tau_grid),
                "K_of_tau": list(self.K_of_tau),
                "bin_counts": list(self.bin_counts), "K_emp": self.K_emp,
                "spread": self.spread, "quantile": self.quantile,
                "noise_scale": self.noise_scale}


@dataclass
class HolderReport:
    alpha_emp: float
    alpha_theory: float
    C2: float
    r2: float
    pass_fraction: float
    n_pairs: int
    table: list = field(default_factory=list)

    def to_json(self):
        return {"alpha_emp": self.alpha_emp, "alpha_theory": self.alpha_theory,
                "C2": self.C2, "r2": self.r2,
                "pass_fraction": self.pass_fraction, "n_pairs": self.n_pairs}


def section_shrink(u, cost: CostModel, xbar, ybar, tau, grid=128,
                   U_lambda=None, tp=None, partner_fn=None):
    """Minimal dilation factor rho with Q_{tau/2} inside rho . Q_tau.

    Dilation is about the John center of Q_tau; the report asserts
    rho < 1 - one grid cell (relative to the section radius).
    """
    if tp is None:
        chart = ExpChart(cost, np.asarray(ybar, float))
        tp = transform_potential(chart, u, grid=grid)
    S1 = section(u, cost, xbar, ybar, tau, U_lambda=U_lambda, tp=tp,
                 partner_fn=partner_fn)
    S2 = section(u, cost, xbar, ybar, tau / 2.0, U_lambda=U_lambda, tp=tp,
                 partner_fn=partner_fn)
    rho = float(S1.hull.gauge(S2.hull.vertices, S1.john.center).max())
    cell_rel = S1.cell_size() / max(S1.hull.diameter / 2.0, 1e-300)
    rep = EstimateReport.from_sides(
        "section_shrink", rho, 1.0 - cell_rel, rho, "fitted",
        extras={"tau": float(tau), "cell_rel": float(cell_rel)})
    return rho, rep


def _pair_excesses(sol: KantorovichSolution, idx_a, idx_b, partners):
    """e(x_a; x_b, y_b) for ordered pairs (a, b) with y_b = partners[b]."""
    cost = sol.spec.cost
    X = sol.X
    yb = partners[idx_b]
    return (sol.u[idx_a] - sol.u[idx_b]
            + cost.value(X[idx_a], yb) - cost.value(X[idx_b], yb))


def engulfing_constant(sol: KantorovichSolution, cost: CostModel = None,
                       pair_budget=20000, tau_grid=None, separation_factor=4.0,
                       quantile=0.98, min_bin=20, seed=0,
                       partners=None) -> EngulfingReport:
    """Empirical engulfing constant over close interior pairs.

    Pairs (x, xbar) obey dist <= min(margin to the boundary of U_lambda) /
    separation_factor.  For a pair admissible at height tau (its forward
    excess e_fwd lies in (tau/2, tau]), the minimal k with xbar in
    S(x, y, k tau) is e_rev / tau <= e_rev / e_fwd; K(tau) is the per-bin
    `quantile` of those ratios, K_emp the maximum over the grid, and the
    spread their std/mean.  The per-pair noise floor from the discrete target
    (partner jitter ~ |dx| * spacing * |D2xy c|) is reported as noise_scale.
    """
    cost = cost or sol.spec.cost
    X = sol.X
    U_lam = sol.spec.U_lambda
    margin = U_lam.margin(X)
    max_r = float(margin.max() / separation_factor)
    if max_r <= 0:
        raise NoAdmissiblePairs("no support point interior to U_lambda")
    tree = cKDTree(X)
    prs = tree.query_pairs(max_r, output_type="ndarray")
    d = np.linalg.norm(X[prs[:, 0]] - X[prs[:, 1]], axis=-1)
    mi = np.minimum(margin[prs[:, 0]], margin[prs[:, 1]])
    keep = (margin[prs[:, 0]] > 0) & (margin[prs[:, 1]] > 0) \
        & (d <= mi / separation_factor)
    prs = prs[keep]
    if len(prs) == 0:
        raise NoAdmissiblePairs("separation rule admitted no pairs")
    if len(prs) > pair_budget:
        rng = np.random.default_rng(seed)
        prs = prs[rng.choice(len(prs), pair_budget, replace=False)]
    if partners is None:
        partners = contact_cell_partners(sol)

    both = np.concatenate([prs, prs[:, ::-1]], axis=0)
    ia, ib = both[:, 0], both[:, 1]
    e_fwd = _pair_excesses(sol, ia, ib, partners)
    e_rev = _pair_excesses(sol, ib, ia, partners)
    good = (e_fwd > 1e-13) & (e_rev > 0)
    ef, er = e_fwd[good], e_rev[good]
    if len(ef) < 4 * min_bin:
        raise NoAdmissiblePairs(f"only {len(ef)} usable pairs")

    dxy = np.linalg.norm(X[ia[good]] - X[ib[good]], axis=-1)
    sp_y = sol.spec.mu_minus.spacing()
    hxy_scale = float(np.abs(np.linalg.det(
        cost.mixed_hessian(X[ia[good][:64]], partners[ib[good][:64]])))
        .mean() ** (1.0 / cost.n))
    noise = float(np.median(dxy) * sp_y * hxy_scale)

    if tau_grid is None:
        tau0 = float(np.quantile(ef, 0.995))
        tau_grid = tau0 * np.geomspace(0.25, 1.0, 5)
    tau_grid = np.asarray(tau_grid, float)
    Ks, counts = [], []
    for tau in tau_grid:
        b = (ef > tau / 2.0) & (ef <= tau)
        counts.append(int(b.sum()))
        if b.sum() >= min_bin:
            Ks.append(float(np.quantile(er[b] / ef[b], quantile)))
        else:
            Ks.append(math.nan)
    Ks = np.asarray(Ks)
    valid = ~np.isnan(Ks)
    if not valid.any():
        raise NoAdmissiblePairs("all tau bins below the minimum pair count")
    K_emp = max(1.0, float(Ks[valid].max()))
    kv = Ks[valid]
    spread = float(kv.std() / kv.mean()) if len(kv) > 1 else 0.0
    sample = (er / ef)[:200].tolist()
    return EngulfingReport(int(len(ef)), tau_grid.tolist(), Ks.tolist(),
                           counts, K_emp, spread, quantile, sample, noise)


def monotonicity_gain(sol: KantorovichSolution, cost: CostModel = None,
                      x_idx=None, xbar_idx=None, K=1.0,
                      slack=1e-8) -> EstimateReport:
    """c-monotonicity gain at one ordered support pair.

    (1+K)/K [u(x) - u(xbar) - c(xbar, ybar) + c(x, ybar)]
        <= c(xbar, y) - c(x, y) - c(xbar, ybar) + c(x, ybar),
    with y, ybar the plan partners of x, xbar.
    """
    cost = cost or sol.spec.cost
    partners = sol.Y[sol.partner_of()]
    X = sol.X
    x, xbar = X[x_idx], X[xbar_idx]
    y, ybar = partners[x_idx], partners[xbar_idx]
    base = (sol.u[x_idx] - sol.u[xbar_idx]
            - cost.value(xbar, ybar) + cost.value(x, ybar))
    lhs = (1.0 + K) / K * base
    rhs = (cost.value(xbar, y) - cost.value(x, y)
           - cost.value(xbar, ybar) + cost.value(x, ybar))
    scale = max(abs(lhs), abs(rhs), 1.0)
    verdict = "pass" if lhs <= rhs + slack * scale else "fail"
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= slack * scale else math.inf)
    return EstimateReport("monotonicity_gain", float(lhs), float(rhs), K,
                          "fitted", float(ratio), verdict, slack,
                          {"pair": [int(x_idx), int(xbar_idx)]})


def injectivity_check(tmap: TransportMap, U_lambda, points=None,
                      target_spacing=None):
    """Minimal pairwise image separation over interior evaluation points.

    Violations are pairs whose images sit closer than half the target
    spacing; report-only.
    """
    if points is None:
        pts = tmap.points
    else:
        pts = np.asarray(points, float)
    inter = U_lambda.margin(pts) > 0
    pts = pts[inter]
    G = tmap.at(pts) if tmap.grid_axes is not None else tmap.values[inter]
    ok = ~np.isnan(G).any(-1)
    pts, G = pts[ok], G[ok]
    tree = cKDTree(G)
    dd, jj = tree.query(G, k=2)
    sep = dd[:, 1]
    min_sep = float(sep.min()) if len(sep) else math.inf
    violations = []
    if target_spacing is not None:
        bad = np.where(sep < 0.5 * target_spacing)[0]
        violations = [(int(i), int(jj[i, 1])) for i in bad]
    return {"min_separation": min_sep, "violations": violations,
            "n_points": int(len(pts))}


def holder_fit(sol: KantorovichSolution, cost: CostModel = None, K_emp=1.0,
               U_lambda=None, partners=None, max_pairs=40000, seed=0,
               fit_fraction=0.5, lambda_label=None) -> HolderReport:
    """Log-log modulus fit of the map and the potential-modulus inequality.

    alpha_emp is the regression slope of log|G(x0) - G(x1)| on log|x0 - x1|
    over interior support pairs with separations in [2 spacing, diam/8],
    stratified by distance decade.  The potential inequality
    |u(x0) - u(x1) - grad u(x1).(x0 - x1)| <= 2 C2 |x0 - x1|^(1 + 1/K)
    is checked with C2 fitted as the maximal ratio on a held-out fraction of
    the pairs; grad u(x1) = -D_x c(x1, y1) with the smoothed partner y1.
    """
    cost = cost or sol.spec.cost
    U_lambda = U_lambda or sol.spec.U_lambda
    X = sol.X
    inter = U_lambda.margin(X) > 0
    Xi = X[inter]
    ui = sol.u[inter]
    if partners is None:
        partners = contact_cell_partners(sol)
    Pi = partners[inter]
    sp = sol.spec.mu_plus.spacing()
    diam = cost.source.diameter
    lo_d, hi_d = 2.0 * sp, diam / 8.0
    if hi_d <= lo_d:
        raise InsufficientScales("spacing too coarse for the scale window")
    tree = cKDTree(Xi)
    prs = tree.query_pairs(hi_d, output_type="ndarray")
    d = np.linalg.norm(Xi[prs[:, 0]] - Xi[prs[:, 1]], axis=-1)
    keep = d >= lo_d
    prs, d = prs[keep], d[keep]
    if len(prs) < 32:
        raise InsufficientScales(f"only {len(prs)} pairs in the scale window")
    rng = np.random.default_rng(seed)
    if len(prs) > max_pairs:
        # stratified by distance decade to stabilize the fit
        logd = np.log(d)
        bins = np.linspace(logd.min(), logd.max() + 1e-12, 9)
        take = []
        per = max_pairs // 8
        for b0, b1 in zip(bins[:-1], bins[1:]):
            idx = np.where((logd >= b0) & (logd < b1))[0]
            if len(idx) > per:
                idx = rng.choice(idx, per, replace=False)
            take.append(idx)
        sel = np.concatenate(take)
        prs, d = prs[sel], d[sel]

    dG = np.linalg.norm(Pi[prs[:, 0]] - Pi[prs[:, 1]], axis=-1)
    pos = dG > 0
    slope, intercept = np.polyfit(np.log(d[pos]), np.log(dG[pos]), 1)
    pred = slope * np.log(d[pos]) + intercept
    resid = np.log(dG[pos]) - pred
    r2 = 1.0 - resid.var() / np.log(dG[pos]).var()

    grad1 = -cost.grad_x(Xi[prs[:, 1]], Pi[prs[:, 1]])
    lhs = np.abs(ui[prs[:, 0]] - ui[prs[:, 1]]
                 - (grad1 * (Xi[prs[:, 0]] - Xi[prs[:, 1]])).sum(-1))
    expo = 1.0 + 1.0 / K_emp
    ratio = lhs / d**expo
    m = len(ratio)
    fit_idx = rng.choice(m, max(1, int(fit_fraction * m)), replace=False)
    C2 = float(np.quantile(ratio[fit_idx], 0.95))
    passed = ratio <= 2.0 * C2 + 1e-30
    return HolderReport(float(slope), 1.0 / K_emp, C2, float(r2),
                        float(passed.mean()), int(m),
                        table=[[lambda_label, float(slope)]]
                        if lambda_label is not None else [])
