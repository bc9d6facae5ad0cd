"""Instance generators and the JSON instance-file format.

All generators produce equal-count uniform-weight measures (the exact
assignment path of the solver) unless stated otherwise; densities are shaped
by atom placement.  Files carry the cost key, both measures, the density
band, and the sub-box where it holds.
"""

from __future__ import annotations

import json

import numpy as np

from .cost_model import CostModel, DomainBox, make_cost
from .transport import DiscreteMeasure, ProblemSpec


def _jittered_grid(box: DomainBox, per_axis, rng, jitter=0.5):
    axes = [(np.arange(per_axis) + 0.5) / per_axis * (hi - lo) + lo
            for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    step = (box.upper - box.lower) / per_axis
    return pts + rng.uniform(-jitter, jitter, pts.shape) * step * 0.5


def _ball_points(count, center, radius, rng, left_density=1.0):
    """Uniform points in a ball; left_density > 1 doubles-up the x<center half."""
    pts = []
    c = np.asarray(center, float)
    n = c.size
    while len(pts) < count:
        cand = rng.uniform(-radius, radius, (4 * count, n))
        cand = cand[(cand**2).sum(-1) < radius**2]
        if left_density != 1.0:
            p_keep = np.where(cand[:, 0] < 0, 1.0, 1.0 / left_density)
            cand = cand[rng.uniform(0, 1, len(cand)) < p_keep]
        pts.extend(cand)
    return np.asarray(pts[:count]) + c


def identity_instance(n=2, per_axis=12, seed=0, cost_key="sqdist"):
    """mu+ = mu- on the same support: identity plan, zero total cost."""
    rng = np.random.default_rng(seed)
    cost = make_cost(cost_key, n=n)
    X = _jittered_grid(cost.source, per_axis, rng)
    w = np.full(len(X), 1.0 / len(X))
    mu = DiscreteMeasure(X, w)
    mu2 = DiscreteMeasure(X.copy(), w.copy())
    return ProblemSpec(cost, mu, mu2, 0.9, 1.1, cost.source)


def quantile_instance(count=64):
    """1-d uniform [0,1] onto uniform [0,2]: the monotone map G(x) = 2x."""
    U = DomainBox([0.0], [1.0])
    V = DomainBox([0.0], [2.0])
    cost = make_cost("sqdist", source=U, target=V)
    x = (np.arange(count) + 0.5)[:, None] / count
    y = 2.0 * x
    w = np.full(count, 1.0 / count)
    U_lam = DomainBox([0.05], [0.95])
    return ProblemSpec(cost, DiscreteMeasure(x, w), DiscreteMeasure(y, w),
                       0.45, 0.55, U_lam)


def quadratic_model_instance(n=2, per_axis=24, seed=0, half=0.4, stretch=2.0,
                             target_margin=1.4):
    """Squared-distance cost with targets = stretch * sources: the optimal map
    is x -> stretch x and the potential is (stretch - 1)|x|^2 / 2."""
    rng = np.random.default_rng(seed)
    U = DomainBox([-half] * n, [half] * n)
    vh = half * stretch * target_margin
    V = DomainBox([-vh] * n, [vh] * n)
    cost = make_cost("sqdist", source=U, target=V)
    X = _jittered_grid(U, per_axis, rng, jitter=0.35)
    Y = stretch * X
    w = np.full(len(X), 1.0 / len(X))
    U_lam = DomainBox([-0.75 * half] * n, [0.75 * half] * n)
    dens = stretch ** (-n)
    return ProblemSpec(cost, DiscreteMeasure(X, w), DiscreteMeasure(Y, w),
                       0.9 * dens, 1.1 * dens, U_lam)


def neglog_pipeline_instance(per_axis=44, seed=7, density_ratio=2.0,
                             source_side_jump=True, ball_radius=0.35):
    """The main regularity instance: neglog cost on separated boxes, ball
    target (strong-convexity surrogate), piecewise-constant density with the
    given ratio on the source side (or on the target when source_side_jump is
    false); uniform atom weights throughout.
    """
    rng = np.random.default_rng(seed)
    cost = make_cost("neglog", n=2)
    U, V = cost.source, cost.target
    count = per_axis * per_axis
    if source_side_jump:
        # left half of the source box at density_ratio times the right half
        n_left = int(round(count * density_ratio / (density_ratio + 1.0)))
        UL = DomainBox([U.lower[0], U.lower[1]], [U.center[0], U.upper[1]])
        UR = DomainBox([U.center[0], U.lower[1]], [U.upper[0], U.upper[1]])
        XL = UL.sample(n_left, rng)
        XR = UR.sample(count - n_left, rng)
        X = np.concatenate([XL, XR], axis=0)
        Y = _ball_points(count, V.center, ball_radius, rng)
        area_u = np.prod(U.upper - U.lower)
        f_left = n_left / (area_u / 2.0)
        f_right = (count - n_left) / (area_u / 2.0)
        f_tgt = count / (np.pi * ball_radius**2)
        lam = min(f_left, f_right) / f_tgt
        Lam = max(f_left, f_right) / f_tgt
    else:
        X = _jittered_grid(U, per_axis, rng)
        Y = _ball_points(count, V.center, ball_radius, rng,
                         left_density=density_ratio)
        area_u = np.prod(U.upper - U.lower)
        f_src = count / area_u
        rho = count / (np.pi * ball_radius**2 * (density_ratio + 1.0) / 2.0)
        lam = f_src / (rho * density_ratio)
        Lam = f_src / rho
    w = np.full(count, 1.0 / count)
    U_lam = DomainBox(U.lower * 0.75, U.upper * 0.75)
    return ProblemSpec(cost, DiscreteMeasure(X, w), DiscreteMeasure(Y, w),
                       float(lam), float(Lam), U_lam,
                       target_region={"kind": "ball",
                                      "center": V.center.tolist(),
                                      "radius": ball_radius})


def adversarial_boundary_instance(per_axis=20, seed=3, pile_fraction=0.3,
                                  ball_radius=0.35):
    """Mass pile-up on the target boundary: a fraction of the target atoms
    collapses into a thin arc at the ball boundary, breaking the upper density
    bound there; interior sources are then forced onto boundary targets."""
    rng = np.random.default_rng(seed)
    cost = make_cost("neglog", n=2)
    U, V = cost.source, cost.target
    count = per_axis * per_axis
    X = _jittered_grid(U, per_axis, rng)
    n_pile = int(round(pile_fraction * count))
    bulk = _ball_points(count - n_pile, V.center, 0.9 * ball_radius, rng)
    ang = rng.uniform(-0.15, 0.15, n_pile)
    rr = ball_radius * (1.0 - 1e-3 * rng.uniform(0, 1, n_pile))
    pile = V.center + np.stack([rr * np.cos(ang), rr * np.sin(ang)], -1)
    Y = np.concatenate([bulk, pile], axis=0)
    w = np.full(count, 1.0 / count)
    U_lam = DomainBox(U.lower * 0.75, U.upper * 0.75)
    return ProblemSpec(cost, DiscreteMeasure(X, w), DiscreteMeasure(Y, w),
                       0.05, 20.0, U_lam,
                       target_region={"kind": "ball",
                                      "center": V.center.tolist(),
                                      "radius": ball_radius})


def quartic_engineered_instance(seed=11, n_sources=144, half=0.7):
    """Engineered non-A3w instance: quartic cost, a wide source box, and three
    far target clusters; sections of the solved potential show visible
    nonconvexity in the chart."""
    rng = np.random.default_rng(seed)
    U = DomainBox([-half, -half], [half, half])
    V = DomainBox([1.1, -0.9], [1.7, 0.9])
    cost = make_cost("quartic", source=U, target=V)
    X = _jittered_grid(U, int(np.sqrt(n_sources)), rng)
    centers = np.array([[1.3, -0.7], [1.3, 0.0], [1.3, 0.7]])
    reps = len(X) // 3 + 1
    Y = np.concatenate([c + rng.uniform(-0.02, 0.02, (reps, 2))
                        for c in centers])[:len(X)]
    w = np.full(len(X), 1.0 / len(X))
    U_lam = DomainBox(U.lower * 0.9, U.upper * 0.9)
    return ProblemSpec(cost, DiscreteMeasure(X, w), DiscreteMeasure(Y, w),
                       1e-3, 1e3, U_lam)


# -- instance files -------------------------------------------------------------

def save_instance(spec: ProblemSpec, path):
    obj = {
        "cost": spec.cost.name,
        "source_box": spec.cost.source.to_json(),
        "target_box": spec.cost.target.to_json(),
        "mu_plus": spec.mu_plus.to_json(),
        "mu_minus": spec.mu_minus.to_json(),
        "lambda": spec.lam,
        "Lambda": spec.Lam,
        "U_lambda": spec.U_lambda.to_json(),
        "target_region": spec.target_region,
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)


def load_instance(path) -> ProblemSpec:
    with open(path) as fh:
        obj = json.load(fh)
    key = obj["cost"]
    src = DomainBox.from_json(obj["source_box"])
    tgt = DomainBox.from_json(obj["target_box"])
    cost = make_cost(key, source=src, target=tgt)
    return ProblemSpec(cost,
                       DiscreteMeasure.from_json(obj["mu_plus"]),
                       DiscreteMeasure.from_json(obj["mu_minus"]),
                       float(obj["lambda"]), float(obj["Lambda"]),
                       DomainBox.from_json(obj["U_lambda"]),
                       obj.get("target_region"))
