import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from otrect.costs import bilinear_cost, cost_matrix, example31_cost, quadratic_cost
from otrect.errors import CertificationFailure, InputError, UnsupportedOperationError
from otrect.measures import DiscreteMeasure, identity_plan, kantorovich_cost, permutation_plan
from otrect.reproduce import build_example31_plans
from otrect.solver import brute_force, dual_potentials, dual_value, network_simplex, solve_exact


def line(values):
    return DiscreteMeasure.uniform(np.asarray(values, dtype=float)[:, None])


def test_shifted_triples_match_in_order():
    model = quadratic_cost(1, box=(-1.0, 13.0))
    src, tgt = line([0, 1, 2]), line([10, 11, 12])
    plan = solve_exact(src, tgt, model)
    # c = |x-y|^2/2 with every point moved by 10: (1/3) * 3 * 50
    assert kantorovich_cost(plan, model) == pytest.approx(50.0, rel=1e-14)
    assert sorted(zip(plan.rows.tolist(), plan.cols.tolist())) == [(0, 0), (1, 1), (2, 2)]
    # enumerate all 3! matchings by hand
    C = cost_matrix(model, src.points, tgt.points)
    best = min(itertools.permutations(range(3)), key=lambda p: C[[0, 1, 2], list(p)].sum())
    assert best == (0, 1, 2)


def test_zero_cost_gives_zero():
    model = bilinear_cost(1, scale=0.0)
    rng = np.random.default_rng(0)
    src = DiscreteMeasure(rng.uniform(-1, 1, (4, 1)), [0.1, 0.2, 0.3, 0.4])
    tgt = line([-0.5, 0.0, 0.5])
    plan = solve_exact(src, tgt, model)
    assert kantorovich_cost(plan, model) == 0.0
    assert plan.marginal_error() <= 1e-12


def test_brute_force_trivial_cases():
    model = quadratic_cost(1)
    one = line([0.3])
    plan = brute_force(one, one, model)
    assert plan.entries == [(0, 0, 1.0)]
    two = line([0.0, 1.0])
    plan = brute_force(two, two, model)
    assert plan.same_entries(identity_plan(two))


def test_brute_force_ties_pick_smallest_permutation():
    model = bilinear_cost(1, scale=0.0)
    pts = line([0.0, 0.5, 1.0])
    plan = brute_force(pts, pts, model)
    assert plan.same_entries(identity_plan(pts))


def test_brute_force_refuses_large_or_weighted():
    model = quadratic_cost(1)
    with pytest.raises(UnsupportedOperationError):
        brute_force(line(np.linspace(-1, 1, 9)), line(np.linspace(-1, 1, 9)), model)
    weighted = DiscreteMeasure([[0.0], [1.0]], [0.25, 0.75])
    with pytest.raises(UnsupportedOperationError):
        brute_force(weighted, weighted, model)


def test_bilinear_matches_brute_force(rng):
    model = bilinear_cost(2)
    src = DiscreteMeasure.uniform(rng.uniform(-1, 1, (4, 2)))
    tgt = DiscreteMeasure.uniform(rng.uniform(-1, 1, (4, 2)))
    assert kantorovich_cost(solve_exact(src, tgt, model), model) == pytest.approx(
        kantorovich_cost(brute_force(src, tgt, model), model), abs=1e-12
    )


def test_identity_dual_potentials_vanish():
    model = quadratic_cost(1)
    two = line([0.0, 1.0])
    phi, psi = dual_potentials(identity_plan(two), model)
    np.testing.assert_allclose(phi, 0.0, atol=1e-15)
    np.testing.assert_allclose(psi, 0.0, atol=1e-15)


def test_dual_potentials_reject_suboptimal_plan():
    model = quadratic_cost(1)
    two = line([0.0, 1.0])
    with pytest.raises(CertificationFailure):
        dual_potentials(permutation_plan(two, two, [1, 0]), model)


def test_example31_optimum_and_certificate():
    cost = example31_cost()
    gamma, _ = build_example31_plans(8)
    plan = solve_exact(gamma.source, gamma.target, cost)
    assert abs(kantorovich_cost(plan, cost)) <= 1e-9
    phi, psi = dual_potentials(gamma, cost)
    C = cost_matrix(cost, gamma.source.points, gamma.target.points)
    assert np.max(np.abs(C[gamma.rows, gamma.cols] - phi[gamma.rows] - psi[gamma.cols])) <= 1e-9
    assert np.min(C - phi[:, None] - psi[None, :]) >= -1e-9
    assert phi[0] == 0.0


def test_infeasible_weights_rejected():
    a = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    b = DiscreteMeasure([[0.0]], [0.9], check=False)
    with pytest.raises(InputError):
        solve_exact(a, b, quadratic_cost(1))


def test_unknown_pricing_rule():
    with pytest.raises(InputError):
        network_simplex([1.0], [1.0], [[0.0]], pricing="steepest")


def _random_instance(rng, m, n, dim=2, ties=False):
    wa = rng.random(m) + 0.1
    wb = rng.random(n) + 0.1
    src = DiscreteMeasure(rng.uniform(-1, 1, (m, dim)), wa / wa.sum())
    tgt = DiscreteMeasure(rng.uniform(-1, 1, (n, dim)), wb / wb.sum())
    if ties:
        src = DiscreteMeasure.uniform(np.round(src.points * 2) / 2)
        tgt = DiscreteMeasure.uniform(np.round(rng.uniform(-1, 1, (m, dim)) * 2) / 2)
    return src, tgt


@pytest.mark.parametrize("ties", [False, True])
def test_matches_linear_programming(rng, ties):
    model = quadratic_cost(2)
    for _ in range(15):
        m = int(rng.integers(2, 9))
        n = m if ties else int(rng.integers(2, 9))
        src, tgt = _random_instance(rng, m, n, ties=ties)
        C = cost_matrix(model, src.points, tgt.points)
        A = np.vstack([np.kron(np.eye(m), np.ones(n)), np.kron(np.ones(m), np.eye(n))])
        lp = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([src.weights, tgt.weights]), method="highs")
        for pricing in ("dantzig", "bland"):
            res = network_simplex(src.weights, tgt.weights, C, pricing=pricing)
            assert float(C[res.rows, res.cols] @ res.flow) == pytest.approx(lp.fun, abs=1e-10)


def test_structural_invariants(rng):
    model = quadratic_cost(2)
    for _ in range(20):
        m, n = (int(k) for k in rng.integers(1, 12, size=2))
        src, tgt = _random_instance(rng, m, n)
        plan = solve_exact(src, tgt, model)
        primal = kantorovich_cost(plan, model)
        assert plan.marginal_error() <= 1e-12
        assert plan.nnz <= m + n - 1
        phi, psi = plan.potentials
        assert dual_value(plan, phi, psi) == pytest.approx(primal, abs=1e-9)
        C = cost_matrix(model, src.points, tgt.points)
        assert np.min(C - phi[:, None] - psi[None, :]) >= -1e-9


def test_deterministic_for_fixed_input(rng):
    model = quadratic_cost(2)
    src, tgt = _random_instance(rng, 7, 7, ties=True)
    assert solve_exact(src, tgt, model).same_entries(solve_exact(src, tgt, model))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_solver_agrees_with_oracle(N, seed):
    rng = np.random.default_rng(seed)
    model = quadratic_cost(1)
    src = line(rng.uniform(-1, 1, N))
    tgt = line(rng.uniform(-1, 1, N))
    assert kantorovich_cost(solve_exact(src, tgt, model), model) == pytest.approx(
        kantorovich_cost(brute_force(src, tgt, model), model), abs=1e-9
    )
