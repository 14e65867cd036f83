"""Worked examples: a cylinder cost with non-unique, non-graph optimizers
and a cost that is twisted in one direction only.
"""

from __future__ import annotations

import math

import numpy as np

from .costs import example31_cost, example32_cost, pair_costs
from .errors import InputError
from .measures import (
    DiscreteMeasure,
    SupportSample,
    TransportPlan,
    kantorovich_cost,
    marginals,
    mix_plans,
    support,
)
from .monotonicity import check_pairwise
from .nondegeneracy import twist_scan
from .rectifier import rectify

STRIP_LENGTH = 4 * math.pi
SHEETS = 3


def _strip_grid(grid_m: int):
    if grid_m < 2 or grid_m % 2:
        raise InputError("grid_m must be an even integer >= 2 so that 2*pi shifts land on grid nodes")
    step = STRIP_LENGTH / grid_m
    x1 = (np.arange(grid_m) + 0.5) / grid_m
    x2 = (np.arange(grid_m) + 0.5) * step
    return x1, x2, step


def build_example31_plans(grid_m: int = 16) -> tuple[TransportPlan, TransportPlan]:
    """Two distinct optimal plans with the same marginals.

    The strip ``[0,1] x [0,4 pi]`` is sampled at ``grid_m x grid_m`` cell
    midpoints. Each node ``x`` is sent to ``(x1, x2 + pi + 2 pi s)`` for
    sheets ``s = 0, 1, 2``. ``gamma`` spreads mass evenly over the three
    sheets. ``gamma_bar`` keeps sheet 0 where ``x2 < 2 pi``, sheet 2 where
    ``x2 > 2 pi`` and doubles sheet 1.
    """
    x1, x2, step = _strip_grid(grid_m)
    m, half = grid_m, grid_m // 2
    i, k = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    i, k = i.ravel(), k.ravel()
    src_pts = np.column_stack([x1[i], x2[k]])
    atom = 1.0 / (SHEETS * m * m)

    # target lattice: y2 = (t + 1/2) step + pi for t in [0, 2m); sheet s shifts t by s*m/2
    ti, tt = np.meshgrid(np.arange(m), np.arange(2 * m), indexing="ij")
    tgt_pts = np.column_stack([x1[ti.ravel()], (tt.ravel() + 0.5) * step + math.pi])

    def col(row, sheet):
        return i[row] * 2 * m + k[row] + sheet * half

    rows = np.arange(m * m)
    g_rows = np.concatenate([rows] * SHEETS)
    g_cols = np.concatenate([col(rows, s) for s in range(SHEETS)])
    g_mass = np.full(len(g_rows), atom)

    low, high = rows[k < half], rows[k >= half]
    b_rows = np.concatenate([low, rows, high])
    b_cols = np.concatenate([col(low, 0), col(rows, 1), col(high, 2)])
    b_mass = np.concatenate([np.full(len(low), atom), np.full(m * m, 2 * atom), np.full(len(high), atom)])

    src_w = np.full(m * m, 1.0 / (m * m))
    tgt_w = np.bincount(g_cols, weights=g_mass, minlength=2 * m * m)
    source = DiscreteMeasure(src_pts, src_w)
    target = DiscreteMeasure(tgt_pts, tgt_w)
    gamma = TransportPlan(source, target, g_rows, g_cols, g_mass)
    gamma_bar = TransportPlan(source, target, b_rows, b_cols, b_mass)
    return gamma, gamma_bar


def lower_bound_gap(x, y) -> np.ndarray:
    """``c(x, y) - (exp(x1) - exp(y1))^2 / 2`` for the cylinder cost."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=float).reshape(-1, 2)
    c = pair_costs(example31_cost(), x, y)
    return c - 0.5 * (np.exp(x[..., 0]) - np.exp(y[..., 0])) ** 2


def verify_lower_bound(plan: TransportPlan) -> float:
    """Largest gap to the lower bound over the plan's support.

    The gap is never below -1e-12. It is zero on plans carried by the
    equality set, which certifies their optimality without solving.
    """
    s = support(plan)
    return float(lower_bound_gap(s.x, s.y).max())


def example32_surface_point(y) -> np.ndarray:
    """The unique ``x`` with ``c(x, y) = 0``: ``exp(y2) (cos y1, sin y1)``."""
    y = np.asarray(y, dtype=float)
    r = np.exp(y[..., 1])
    return np.stack([r * np.cos(y[..., 0]), r * np.sin(y[..., 0])], axis=-1)


def build_example32_surface(samples: int = 64) -> SupportSample:
    """Pairs on the zero set of the one-sided twisted cost, parameterised by y.

    Base parameters ``y`` come from a low-discrepancy sequence in
    ``[0, 2 pi) x [-1, 1)`` starting at ``(0, 0)``. Each is followed by its
    copy shifted by ``2 pi`` in ``y1``, which has the same ``x``.
    """
    if samples < 1:
        raise InputError("samples must be >= 1")
    base = (samples + 1) // 2
    j = np.arange(base)
    golden = (math.sqrt(5) - 1) / 2
    y1 = 2 * math.pi * np.mod(j * golden, 1.0)
    y2 = 2 * np.mod(0.5 + j * (math.sqrt(2) - 1), 1.0) - 1
    yb = np.column_stack([y1, y2])
    ys = np.empty((2 * base, 2))
    ys[0::2] = yb
    ys[1::2] = yb + [2 * math.pi, 0.0]
    ys = ys[:samples]
    return SupportSample(example32_surface_point(ys), ys)


def _g2_base(grid_m: int):
    """A node of the middle sheet near the centre of the strip."""
    x1, x2, _ = _strip_grid(grid_m)
    x0 = np.array([x1[grid_m // 2], x2[grid_m // 2]])
    return x0, x0 + [0.0, 3 * math.pi]


def example31_summary(grid_m: int = 16, seed: int = 0, solve: bool = True, certify: bool = True) -> dict:
    """Run every invariant check for the cylinder example and collect results."""
    from .solver import solve_exact

    cost = example31_cost()
    gamma, gamma_bar = build_example31_plans(grid_m)
    mix = mix_plans([gamma, gamma_bar], [0.5, 0.5])
    mu_g, nu_g = marginals(gamma)
    mu_b, nu_b = marginals(gamma_bar)
    marginal_gap = max(
        float(np.abs(mu_g.weights - mu_b.weights).max()),
        float(np.abs(nu_g.weights - nu_b.weights).max()),
    )
    costs = {
        "gamma": kantorovich_cost(gamma, cost),
        "gamma_bar": kantorovich_cost(gamma_bar, cost),
        "mixture": kantorovich_cost(mix, cost),
    }
    out = {
        "example": "3.1",
        "grid": grid_m,
        "source_atoms": gamma.source.size,
        "target_atoms": gamma.target.size,
        "marginal_gap": marginal_gap,
        "costs": costs,
        "plans_differ": not gamma.same_entries(gamma_bar),
        "lower_bound_gap": {"gamma": verify_lower_bound(gamma), "gamma_bar": verify_lower_bound(gamma_bar)},
    }
    checks = {
        "equal_marginals": marginal_gap <= 1e-12,
        "equal_costs": abs(costs["gamma"] - costs["gamma_bar"]) <= 1e-9,
        "zero_cost": abs(costs["gamma"]) <= 1e-9 and abs(costs["gamma_bar"]) <= 1e-9,
        "mixture_cost": abs(costs["mixture"] - costs["gamma"]) <= 1e-9,
        "plans_differ": out["plans_differ"],
        "lower_bound_tight": max(out["lower_bound_gap"].values()) <= 1e-9,
    }
    plans = {"gamma": gamma, "gamma_bar": gamma_bar, "mixture": mix}
    if solve:
        opt = solve_exact(gamma.source, gamma.target, cost)
        out["solver_cost"] = kantorovich_cost(opt, cost)
        checks["solver_matches"] = abs(out["solver_cost"] - costs["gamma"]) <= 1e-9
        plans["solver"] = opt
    certs = {}
    if certify:
        cert = rectify(gamma, cost, base=_g2_base(grid_m), seed=seed)
        certs["gamma"] = cert
        out["sheets_in_support"] = SHEETS
        checks["rectifiable"] = cert.certified and cert.epsilon <= 0.5 and cert.max_ratio <= cert.lipschitz_bound
    out["checks"] = checks
    out["passed"] = all(checks.values())
    return {"summary": out, "plans": plans, "certificates": certs}


def example32_summary(samples: int = 64, grid: int = 50, seed: int = 0) -> dict:
    """Checks for the one-sided twisted cost: zero set, monotonicity and twist scans."""
    cost = example32_cost()
    surface = build_example32_surface(samples)
    values = pair_costs(cost, surface.x, surface.y)
    mono = check_pairwise(surface, cost)
    same_x = 0
    for a in range(len(surface)):
        for b in range(a + 1, len(surface)):
            if np.allclose(surface.x[a], surface.x[b], atol=1e-12) and not np.allclose(surface.y[a], surface.y[b]):
                same_x += 1

    g = np.linspace(-2.0, 2.0, grid)
    xs = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    ys = np.stack(
        np.meshgrid(np.linspace(0, 4 * math.pi, grid, endpoint=False), np.linspace(-0.5, 0.5, grid), indexing="ij"), -1
    ).reshape(-1, 2)
    y_to_x = twist_scan(cost, "y-to-x", [0.5, 0.2], xs)
    x_to_y = twist_scan(cost, "x-to-y", [1.0, 0.0], ys)
    checks = {
        "zero_cost_on_surface": float(np.abs(values).max()) <= 1e-12,
        "surface_monotone": mono.passed,
        "non_invertible_witness": same_x > 0,
        "twisted_y_to_x": y_to_x.injective_on_sample,
        "not_twisted_x_to_y": not x_to_y.injective_on_sample,
    }
    out = {
        "example": "3.2",
        "samples": len(surface),
        "max_abs_cost_on_surface": float(np.abs(values).max()),
        "monotonicity": mono.to_dict(limit=10),
        "shared_x_pairs": same_x,
        "y_to_x_collisions": len(y_to_x.collisions),
        "x_to_y_collisions": len(x_to_y.collisions),
        "checks": checks,
        "passed": all(checks.values()),
    }
    return {"summary": out, "surface": surface, "twist": {"y-to-x": y_to_x, "x-to-y": x_to_y}}
