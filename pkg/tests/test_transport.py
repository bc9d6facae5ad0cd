import itertools

import numpy as np
import pytest

from mtwlab import (
    DiscreteMeasure,
    DomainBox,
    ProblemSpec,
    boundary_mixing_check,
    c_subdifferential,
    c_transform,
    cma_measure,
    dasm_sweep,
    instances,
    ma_density_pde,
    make_cost,
    recover_map,
    solve_kantorovich,
)
from mtwlab.errors import Infeasible
from mtwlab.transport import brute_force_lp_cost, contact_cell_partners, reflect_solution


def test_discrete_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [0.6, 0.6])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0, 0.0], [0.0, 0.0]], [0.5, 0.5])


def test_identity_instance_zero_cost():
    spec = instances.identity_instance(per_axis=8, seed=1)
    sol = solve_kantorovich(spec)
    assert sol.total_cost == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_array_equal(sol.partner_of(), np.arange(len(sol.X)))
    assert sol.duality_gap() <= 1e-9


def test_weight_mismatch_infeasible():
    spec = instances.identity_instance(per_axis=4, seed=1)
    bad = DiscreteMeasure.__new__(DiscreteMeasure)
    bad.support = spec.mu_minus.support
    bad.weights = spec.mu_minus.weights * 0.5
    spec.mu_minus = bad
    with pytest.raises(Infeasible):
        solve_kantorovich(spec)


def test_quantile_instance_monotone_matching():
    spec = instances.quantile_instance(64)
    sol = solve_kantorovich(spec)
    # independent 1-d oracle: sorted (quantile) matching
    order_x = np.argsort(sol.X[:, 0])
    order_y = np.argsort(sol.Y[:, 0])
    partner = sol.partner_of()
    np.testing.assert_array_equal(partner[order_x], order_y)
    np.testing.assert_allclose(sol.Y[partner][:, 0], 2 * sol.X[:, 0], atol=1e-12)
    assert sol.duality_gap() <= 1e-9 * max(1.0, abs(sol.total_cost))


def test_random_5x5_matches_brute_force():
    rng = np.random.default_rng(5)
    for trial in range(4):
        X = rng.uniform(-0.35, 0.35, (5, 2))
        Y = rng.uniform(-0.35, 0.35, (5, 2))
        cost = make_cost("sqdist")
        w = np.full(5, 0.2)
        spec = ProblemSpec(cost, DiscreteMeasure(X, w), DiscreteMeasure(Y, w),
                           0.5, 2.0, cost.source)
        sol = solve_kantorovich(spec)
        oracle = brute_force_lp_cost(cost, spec.mu_plus, spec.mu_minus)
        assert sol.total_cost == pytest.approx(oracle, abs=1e-9)


def test_general_weights_lp_path():
    rng = np.random.default_rng(6)
    X = rng.uniform(-0.35, 0.35, (7, 2))
    Y = rng.uniform(-0.35, 0.35, (9, 2))
    a = rng.uniform(0.5, 1.5, 7)
    a /= a.sum()
    b = rng.uniform(0.5, 1.5, 9)
    b /= b.sum()
    cost = make_cost("sqdist")
    spec = ProblemSpec(cost, DiscreteMeasure(X, a), DiscreteMeasure(Y, b),
                       0.5, 2.0, cost.source)
    sol = solve_kantorovich(spec)
    # marginals of the plan
    N, M = 7, 9
    gamma = np.zeros((N, M))
    gamma[sol.plan_rows, sol.plan_cols] = sol.plan_vals
    np.testing.assert_allclose(gamma.sum(1), a, atol=1e-9)
    np.testing.assert_allclose(gamma.sum(0), b, atol=1e-9)
    assert sol.duality_gap() <= 1e-9 * max(1.0, abs(sol.total_cost))
    # complementary slackness on the support
    C = sol.cost_matrix()
    slack = sol.u[:, None] + sol.v[None, :] + C
    assert slack.min() >= -1e-9
    assert np.abs(slack[sol.plan_rows, sol.plan_cols]).max() <= 1e-9


def test_c_transform_support_function():
    cost = make_cost("bilinear")
    Y = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], float)
    X = np.array([[0.3, -0.2], [0.0, 0.0], [-0.25, 0.1]])
    u, arg = c_transform(cost, np.zeros(4), Y, X)
    np.testing.assert_allclose(u, np.abs(X).sum(-1), atol=1e-14)


def test_c_transform_idempotent():
    rng = np.random.default_rng(2)
    cost = make_cost("neglog")
    X = cost.source.sample(30, rng)
    Y = cost.target.sample(25, rng)
    u0 = rng.normal(size=30)
    # v = u0^{c*}, u1 = v^c, v2 = u1^{c*}: the transform stabilizes exactly
    v, _ = c_transform(make_cost("neglog"), u0, X, Y)     # sup over x of -c - u
    u1, _ = c_transform(cost, v, Y, X)
    v2, _ = c_transform(make_cost("neglog"), u1, X, Y)
    u2, _ = c_transform(cost, v2, Y, X)
    # order-theoretic fixed point; float addition order costs a few ulp
    np.testing.assert_allclose(u1, u2, rtol=0, atol=1e-13)
    np.testing.assert_allclose(v, v2, rtol=0, atol=1e-13)
    # order reversal: u1 = u0^{c*c} <= u0 pointwise
    assert (u1 <= u0 + 1e-12).all()


def test_c_transform_matches_loop_oracle():
    rng = np.random.default_rng(3)
    cost = make_cost("neglog")
    X = cost.source.sample(12, rng)
    Y = cost.target.sample(9, rng)
    v = rng.normal(size=9)
    u, arg = c_transform(cost, v, Y, X)
    for i, x in enumerate(X):
        vals = [-float(cost.value(x, y)) - v[j] for j, y in enumerate(Y)]
        assert u[i] == max(vals)
        assert arg[i] == int(np.argmax(vals))


def test_c_subdifferential_identity_and_ties():
    spec = instances.identity_instance(per_axis=6, seed=2)
    sol = solve_kantorovich(spec)
    ys, idx, slack = c_subdifferential(sol, sol.X[10], tol=1e-9)
    assert 10 in idx
    # engineered tie: two symmetric targets equidistant from one source
    cost = make_cost("sqdist")
    X = np.array([[0.0, 0.0], [0.0, 0.3]])
    Y = np.array([[0.2, 0.0], [-0.2, 0.0]])
    w = np.array([0.5, 0.5])
    spec2 = ProblemSpec(cost, DiscreteMeasure(X, w), DiscreteMeasure(Y, w),
                        0.5, 2.0, cost.source)
    sol2 = solve_kantorovich(spec2)
    ys2, idx2, slack2 = c_subdifferential(sol2, X[0], tol=1e-9)
    assert len(idx2) == 2
    assert (np.abs(slack2) <= 1e-9).all()


def test_cma_identity_density_one():
    spec = instances.identity_instance(per_axis=16, seed=3)
    sol = solve_kantorovich(spec)
    edges = [np.linspace(-0.3, 0.3, 4)] * 2
    dens, mass, flags = cma_measure(sol, edges, grid=64)
    assert np.all(np.abs(dens - 1.0) < 0.12)


def test_cma_quantile_density_two():
    spec = instances.quantile_instance(128)
    sol = solve_kantorovich(spec)
    edges = [np.linspace(0.1, 0.9, 5)]
    dens, mass, flags = cma_measure(sol, edges, grid=512)
    assert np.all(np.abs(dens - 2.0) <= 0.1)    # 2 +- 5%


def test_cma_total_mass_matches_target_area(neglog_solution):
    sol = neglog_solution
    U = sol.spec.cost.source
    edges = [np.linspace(U.lower[0], U.upper[0], 9),
             np.linspace(U.lower[1], U.upper[1], 9)]
    dens, mass, flags = cma_measure(sol, edges, grid=96)
    ball_area = np.pi * sol.spec.target_region["radius"] ** 2
    assert mass.sum() == pytest.approx(ball_area, rel=0.05)


def test_cma_density_bounds_lemma_e(neglog_solution):
    # measured interior densities within [lam/Lam * 0.9, Lam/lam * 1.1]
    sol = neglog_solution
    lam, Lam = sol.spec.lam, sol.spec.Lam
    UL = sol.spec.U_lambda
    edges = [np.linspace(UL.lower[0], UL.upper[0], 7),
             np.linspace(UL.lower[1], UL.upper[1], 7)]
    dens, mass, flags = cma_measure(sol, edges, grid=96)
    ok = np.array([f == "ok" for f in flags])
    assert (dens[ok] >= 0.9 * lam).all()
    assert (dens[ok] <= 1.1 * Lam).all()


def test_cma_dual_side_lemma_d(neglog_solution):
    # |d^c u| <= Lam on U implies the reflected measure >= (1/Lam) * 0.9 on V
    sol = neglog_solution
    rsol = reflect_solution(sol)
    c0 = np.asarray(sol.spec.target_region["center"])
    r0 = sol.spec.target_region["radius"] / np.sqrt(2.0) * 0.85
    edges = [np.linspace(c0[0] - r0, c0[0] + r0, 5),
             np.linspace(c0[1] - r0, c0[1] + r0, 5)]
    dens, mass, flags = cma_measure(rsol, edges, grid=96)
    Lam_emp = 1.1 * sol.spec.Lam
    ok = np.array([f == "ok" for f in flags])
    assert (dens[ok] >= 0.9 / Lam_emp).all()


def test_ma_density_pde_quadratics():
    cost = make_cost("sqdist", source=DomainBox([-0.4, -0.4], [0.4, 0.4]),
                     target=DomainBox([-2, -2], [2, 2]))
    x = np.array([0.1, -0.2])
    # u = 0: identity map, density 1
    r, G = ma_density_pde(lambda z: 0.0, lambda z: np.zeros(2),
                          lambda z: np.zeros((2, 2)), cost, x)
    assert r == pytest.approx(1.0)
    np.testing.assert_allclose(G, x, atol=1e-10)
    # u = |x|^2/2: G = 2x, density det[I + I] = 4 (n=2); in 1-d it is 2
    r2, G2 = ma_density_pde(lambda z: 0.5 * (z * z).sum(), lambda z: z,
                            lambda z: np.eye(2), cost, x)
    assert r2 == pytest.approx(4.0)
    np.testing.assert_allclose(G2, 2 * x, atol=1e-10)
    c1 = make_cost("sqdist", source=DomainBox([-0.4], [0.4]),
                   target=DomainBox([-2], [2]))
    r1, G1 = ma_density_pde(lambda z: 0.5 * (z * z).sum(), lambda z: z,
                            lambda z: np.eye(1), c1, np.array([0.2]))
    assert r1 == pytest.approx(2.0)
    np.testing.assert_allclose(G1, [0.4], atol=1e-10)


def test_ma_density_pde_matches_cma_for_random_quadratic():
    rng = np.random.default_rng(9)
    A = np.array([[0.6, 0.2], [0.2, 0.9]])
    per = 26
    base = instances.quadratic_model_instance(per_axis=per, seed=4, stretch=1.0,
                                              target_margin=3.5)
    # u = x^T A x / 2 corresponds to targets (I + A) x under sqdist
    X = base.mu_plus.support
    Y = X @ (np.eye(2) + A).T
    w = base.mu_plus.weights
    spec = ProblemSpec(base.cost, DiscreteMeasure(X, w), DiscreteMeasure(Y, w),
                       0.1, 10.0, base.U_lambda)
    sol = solve_kantorovich(spec)
    edges = [np.linspace(-0.25, 0.25, 3)] * 2
    dens, mass, flags = cma_measure(sol, edges, grid=96)
    want = np.linalg.det(np.eye(2) + A)
    r, _ = ma_density_pde(lambda z: 0.5 * z @ A @ z, lambda z: A @ z,
                          lambda z: A, base.cost, np.array([0.05, -0.1]))
    assert r == pytest.approx(want, rel=1e-9)
    assert np.all(np.abs(dens / want - 1.0) < 0.05)


def test_recover_map_identity_and_quantile():
    spec = instances.identity_instance(per_axis=12, seed=5)
    sol = solve_kantorovich(spec)
    tmap = recover_map(sol, grid=48)
    inter = sol.spec.cost.source.margin(tmap.points) > 0.05
    err = np.linalg.norm(tmap.values[inter] - tmap.points[inter], axis=-1)
    assert np.median(err) < 0.05

    specq = instances.quantile_instance(64)
    solq = solve_kantorovich(specq)
    tq = recover_map(solq, grid=256)
    inter = (tq.points[:, 0] > 0.1) & (tq.points[:, 0] < 0.9)
    err = np.abs(tq.values[inter, 0] - 2 * tq.points[inter, 0])
    assert np.median(err) < 2.0 / 64


def test_recover_map_plan_consistency(neglog_solution):
    sol = neglog_solution
    tmap = recover_map(sol, grid=64)
    X = sol.X
    inter = sol.spec.cost.source.margin(X) > 0.1
    G = tmap.at(X[inter])
    partners = sol.Y[sol.partner_of()[inter]]
    sp = sol.spec.mu_plus.spacing()
    ok = np.linalg.norm(G - partners, axis=-1) < 3.0 * sp
    assert ok.mean() >= 0.95


def test_dasm_bilinear_affine_zero_violation():
    out = dasm_sweep(make_cost("bilinear"), n_quadruples=2000, seed=0)
    assert out["max_violation_rel"] <= 1e-12


def test_dasm_zoo_pass_and_quartic_violation():
    out = dasm_sweep(make_cost("sqdist"), n_quadruples=10000, seed=0,
                     check_convex=True)
    assert out["max_violation_rel"] <= 1e-6
    assert out["min_second_difference_rel"] >= -1e-6
    out_nl = dasm_sweep(make_cost("neglog"), n_quadruples=10000, seed=0)
    assert out_nl["max_violation_rel"] <= 1e-6
    out_q = dasm_sweep(make_cost("quartic"), n_quadruples=10000, seed=0)
    assert out_q["max_violation_rel"] > 1e-3


def test_boundary_mixing_clean_and_adversarial():
    spec = instances.neglog_pipeline_instance(per_axis=20, seed=9)
    sol = solve_kantorovich(spec)
    assert boundary_mixing_check(sol) == []

    bad = instances.adversarial_boundary_instance(per_axis=20, seed=3)
    bsol = solve_kantorovich(bad)
    assert len(boundary_mixing_check(bsol)) > 0


def test_boundary_mixing_expanding_map_clean():
    spec = instances.quadratic_model_instance(per_axis=16, seed=6,
                                              target_margin=2.5)
    sol = solve_kantorovich(spec)
    assert boundary_mixing_check(sol) == []


def test_contact_set_convexity_barycenter(neglog_solution):
    # local-global principle, operationally: the p-chart barycenter of the
    # contact cell is itself a zero-slack partner
    sol = neglog_solution
    partners = contact_cell_partners(sol)
    cost = sol.spec.cost
    idx = np.arange(0, len(sol.X), 37)
    ux = sol.u[idx]
    vy, _ = sol.v_at(partners[idx])
    slack = ux + vy + cost.value(sol.X[idx], partners[idx])
    scale = float(np.abs(sol.u).max())
    assert np.abs(slack).max() <= 2e-3 * scale


def test_instance_roundtrip(tmp_path):
    spec = instances.neglog_pipeline_instance(per_axis=10, seed=1)
    path = tmp_path / "inst.json"
    instances.save_instance(spec, path)
    spec2 = instances.load_instance(path)
    np.testing.assert_allclose(spec2.mu_plus.support, spec.mu_plus.support)
    assert spec2.lam == spec.lam
    sol = solve_kantorovich(spec2)
    assert sol.duality_gap() <= 1e-9 * max(1.0, abs(sol.total_cost))


def test_solution_dump(tmp_path, neglog_solution):
    neglog_solution.dump(tmp_path / "plan.csv", tmp_path / "pot.json")
    import csv, json
    rows = list(csv.reader(open(tmp_path / "plan.csv")))
    assert rows[0] == ["source_index", "target_index", "mass"]
    assert len(rows) == len(neglog_solution.plan_rows) + 1
    pot = json.load(open(tmp_path / "pot.json"))
    assert len(pot["u"]) == len(neglog_solution.X)
