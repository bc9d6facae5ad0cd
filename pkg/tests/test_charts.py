import numpy as np
import pytest

from mtwlab import DomainBox, ExpChart, make_cost, renormalize, transform_potential
from mtwlab.charts import GridPotential, subgradient_image_volume
from mtwlab.cost_model import ZOO_KEYS, compute_constants
from mtwlab.errors import OutOfDomain, SingularAffineMap


def test_to_q_identities():
    bil = make_cost("bilinear")
    ch = ExpChart(bil, [0.2, -0.1])
    x = np.array([[0.1, 0.3], [-0.2, 0.0]])
    np.testing.assert_allclose(ch.to_q(x), x)           # identity chart

    sq = make_cost("sqdist", source=DomainBox([-1, -1], [1, 1]),
                   target=DomainBox([-1, -1], [1, 1]))
    ch = ExpChart(sq, [1.0, 0.0])
    np.testing.assert_allclose(ch.to_q(np.array([[0.0, 0.0]])), [[-1.0, 0.0]])

    nl = make_cost("neglog")
    U = DomainBox([-0.3, -0.3], [0.3, 0.3])
    V = DomainBox([1.7, -0.3], [2.3, 0.3])
    nl = make_cost("neglog", source=U, target=V)
    ch = ExpChart(nl, [2.0, 0.0])
    np.testing.assert_allclose(ch.to_q(np.array([[0.0, 0.0]])), [[0.5, 0.0]],
                               atol=1e-14)


def test_from_q_flat_costs_one_step():
    for key in ("sqdist", "bilinear"):
        c = make_cost(key)
        ch = ExpChart(c, c.target.center)
        x = c.source.sample(20, np.random.default_rng(0)) * 0.9
        q = ch.to_q(x)
        np.testing.assert_allclose(ch.from_q(q), x, atol=1e-12)


@pytest.mark.parametrize("key", ZOO_KEYS)
def test_chart_roundtrip_all_zoo(key):
    c = make_cost(key)
    rng = np.random.default_rng(10)
    ch = ExpChart(c, c.target.center)
    x = c.source.center + 0.95 * (c.source.sample(1000, rng) - c.source.center)
    q = ch.to_q(x)
    back = ch.from_q(q)
    assert np.abs(back - x).max() < 10 * ch.newton_tol


def test_from_q_out_of_domain():
    c = make_cost("sqdist")
    ch = ExpChart(c, [0.0, 0.0])
    with pytest.raises(OutOfDomain):
        ch.to_q(np.array([[2.0, 0.0]]))


def test_modified_cost_zero_at_base_and_bilinear_linear():
    nl = make_cost("neglog")
    ch = ExpChart(nl, nl.target.center)
    rng = np.random.default_rng(3)
    q = ch.to_q(nl.source.sample(50, rng) * 0.9)
    assert np.abs(ch.modified_cost(q, np.broadcast_to(ch.base, q.shape))).max() < 1e-12

    bil = make_cost("bilinear")
    chb = ExpChart(bil, [0.1, 0.2])
    q = bil.source.sample(30, rng) * 0.9
    y = bil.target.sample(30, rng) * 0.9
    got = chb.modified_cost(q, y)
    want = -(q * (y - chb.base)).sum(-1)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_modified_cost_matches_direct_composition():
    nl = make_cost("neglog")
    ch = ExpChart(nl, [2.0, 0.1])
    rng = np.random.default_rng(4)
    x = nl.source.sample(40, rng) * 0.9
    q = ch.to_q(x)
    y = nl.target.sample(40, rng) * 0.95
    direct = nl.value(x, y) - nl.value(x, ch.base)
    np.testing.assert_allclose(ch.modified_cost(q, y), direct, atol=1e-10)


def test_transform_potential_quadratic_model():
    # u(x) = |x|^2/2 with the squared-distance cost and base 0 gives
    # utilde(q) = |q|^2 on the chart grid
    sq = make_cost("sqdist", source=DomainBox([-0.4, -0.4], [0.4, 0.4]),
                   target=DomainBox([-0.9, -0.9], [0.9, 0.9]))
    ch = ExpChart(sq, [0.0, 0.0])

    class U:
        def value(self, x):
            x = np.asarray(x, float)
            return 0.5 * (x * x).sum(-1)

    tp = transform_potential(ch, U(), grid=64)
    pts = tp.grid_points.reshape(-1, 2)
    vals = tp.values.reshape(-1)
    ok = ~np.isnan(vals)
    np.testing.assert_allclose(vals[ok], (pts[ok] ** 2).sum(-1), atol=1e-10)
    # convexity along grid lines: second differences nonnegative
    d2 = tp.values[:-2, :] - 2 * tp.values[1:-1, :] + tp.values[2:, :]
    assert np.nanmin(d2) >= -1e-9


def test_semiconvexity_along_grid_lines_neglog(neglog_solution):
    # utilde + M_c |q|^2 has nonnegative second differences along grid lines
    sol = neglog_solution
    cost = sol.spec.cost
    consts = compute_constants(cost)
    ybar = sol.Y[sol.partner_of()[groups := 100]]
    ch = ExpChart(cost, ybar)
    tp = transform_potential(ch, sol.potential(), grid=96)
    Q2 = (tp.grid_points ** 2).sum(-1)
    W = tp.values + consts.M_c * Q2
    scale = np.nanmax(np.abs(tp.values))
    for arr in (W, W.T):
        d2 = arr[:-2, :] - 2 * arr[1:-1, :] + arr[2:, :]
        assert np.nanmin(d2) >= -1e-6 * scale


def test_minimum_location_at_base_pair(neglog_solution):
    sol = neglog_solution
    cost = sol.spec.cost
    i = 250
    ybar = sol.Y[sol.partner_of()[i]]
    ch = ExpChart(cost, ybar)
    tp = transform_potential(ch, sol.potential(), grid=96)
    qbar = ch.to_q(sol.X[i][None])[0]
    vals = tp.values
    am = np.unravel_index(np.nanargmin(vals), vals.shape)
    qmin = tp.grid_points[am]
    cell = ch.cell_size(96)
    assert np.linalg.norm(qmin - qbar) <= 2.0 * cell


def test_renormalize_identity_and_homogeneity():
    sq = make_cost("sqdist", source=DomainBox([-0.4, -0.4], [0.4, 0.4]),
                   target=DomainBox([-0.9, -0.9], [0.9, 0.9]))
    ch = ExpChart(sq, [0.0, 0.0])
    axes = [np.linspace(-0.4, 0.4, 33)] * 2
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    vals = (mesh**2).sum(-1)
    from mtwlab.charts import TransformedPotential
    tp = TransformedPotential(ch, axes, vals,
                              evaluator=lambda q: (np.asarray(q) ** 2).sum(-1))
    tp_id = renormalize(tp, np.eye(2))
    np.testing.assert_allclose(tp_id.values, tp.values, atol=1e-12)
    # L = 2I on |q|^2 in n=2: |det L|^{-1} |2q|^2 = |q|^2
    tp2 = renormalize(tp, 2.0 * np.eye(2))
    pts = tp2.grid_points.reshape(-1, 2)
    np.testing.assert_allclose(tp2.values.reshape(-1), (pts**2).sum(-1),
                               atol=1e-12)
    with pytest.raises(SingularAffineMap):
        renormalize(tp, np.zeros((2, 2)))


def test_renormalize_cell_mass_scaling():
    # per-cell subdifferential mass scales by |det L|^{-1}
    sq = make_cost("sqdist", source=DomainBox([-0.4, -0.4], [0.4, 0.4]),
                   target=DomainBox([-0.9, -0.9], [0.9, 0.9]))
    ch = ExpChart(sq, [0.0, 0.0])
    axes = [np.linspace(-0.4, 0.4, 33)] * 2
    vals = (np.stack(np.meshgrid(*axes, indexing="ij"), -1) ** 2).sum(-1)
    from mtwlab.charts import TransformedPotential
    tp = TransformedPotential(ch, axes, vals,
                              evaluator=lambda q: (np.asarray(q) ** 2).sum(-1))
    L = np.array([[1.3, 0.4], [-0.2, 0.8]])
    det = abs(np.linalg.det(L))
    tpL = renormalize(tp, L)
    # probe cell: axis box on the renormalized side, its L-image upstream
    cell_lo = np.array([0.02, -0.06])
    cell_hi = np.array([0.1, 0.03])
    m2 = subgradient_image_volume(tpL, cell_lo, cell_hi)
    m1 = subgradient_image_volume(tp, cell_lo, cell_hi,
                                  cell_map=lambda p: p @ L.T)
    assert abs(m2 / m1 - 1.0 / det) < 1e-6


def test_grid_potential_interpolation():
    axes = [np.linspace(0, 1, 11)] * 2
    vals = np.add.outer(axes[0], axes[1])
    gp = GridPotential(axes, vals)
    assert gp.value(np.array([[0.25, 0.35]]))[0] == pytest.approx(0.6)
