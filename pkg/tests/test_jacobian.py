import numpy as np
import pytest

from otrect.costs import quadratic_cost
from otrect.errors import InputError, SkipSample
from otrect.jacobian import (
    MapEstimate,
    estimate_map,
    gaussian_density,
    gaussian_scaling_report,
    grid_density,
    jacobian_residual,
    local_jacobian,
    parse_density,
    pushforward_check,
    read_density_csv,
    uniform_density,
)
from otrect.measures import DiscreteMeasure, TransportPlan, identity_plan, kantorovich_cost, permutation_plan, product_plan
from otrect.solver import brute_force, solve_exact


def grid(n, lo=0.0, hi=1.0):
    return DiscreteMeasure.uniform(((np.arange(n) + 0.5) / n * (hi - lo) + lo)[:, None])


def test_permutation_plan_has_no_flags():
    mu = grid(6)
    est = estimate_map(permutation_plan(mu, mu, [5, 4, 3, 2, 1, 0]))
    np.testing.assert_array_equal(est.tx, mu.points[::-1])
    assert not est.split.any()


def test_product_plan_is_maximally_split():
    two = DiscreteMeasure.uniform([[0.0], [1.0]])
    est = estimate_map(product_plan(two, two), grid_scale=0.5)
    np.testing.assert_allclose(est.tx, 0.5)
    assert est.split.all() and est.split_fraction == 1.0


def test_one_dimensional_map_is_quantile_map():
    model = quadratic_cost(1, box=(-1.0, 3.0))
    src, tgt = grid(7), grid(7, 0.0, 2.0)
    est = estimate_map(solve_exact(src, tgt, model))
    oracle = estimate_map(brute_force(src, tgt, model))
    np.testing.assert_array_equal(est.tx, oracle.tx)
    np.testing.assert_allclose(est.tx[:, 0], 2 * src.points[:, 0], atol=1e-15)
    # unequal grids: barycentres are still increasing in x
    est = estimate_map(solve_exact(grid(40), grid(25, 0.0, 2.0), model))
    assert np.all(np.diff(est.tx[:, 0]) > 0)


def test_local_jacobian_on_affine_samples(rng):
    x = rng.uniform(0, 1, (30, 2))
    est = MapEstimate.from_function(x, lambda p: p + [3.0, -1.0])
    np.testing.assert_allclose(local_jacobian(est, x[4]), np.eye(2), atol=1e-12)
    est = MapEstimate.from_function(np.linspace(0, 1, 11)[:, None], lambda p: 2 * p)
    np.testing.assert_allclose(local_jacobian(est, [0.5]), [[2.0]], atol=1e-12)


def test_quadratic_map_slope_error_is_first_order():
    errors = []
    for h in (0.02, 0.01, 0.005):
        x = 1.0 + h * np.arange(-10, 11)
        est = MapEstimate.from_function(x[:, None], lambda p: p**2)
        errors.append(abs(local_jacobian(est, [1.0])[0, 0] - 2.0))
    assert errors[0] > 0
    for a, b in zip(errors, errors[1:]):
        assert b / a == pytest.approx(0.5, rel=0.05)


def test_too_few_neighbours_skip():
    est = MapEstimate.from_function(np.array([[0.0, 0.0], [1.0, 0.0]]), lambda p: p)
    with pytest.raises(SkipSample):
        local_jacobian(est, [0.0, 0.0])
    # collinear neighbours cannot fix a 2D affine map either
    est = MapEstimate.from_function(np.column_stack([np.linspace(0, 1, 8), np.zeros(8)]), lambda p: p)
    with pytest.raises(SkipSample):
        local_jacobian(est, [0.5, 0.0])


def test_residual_for_scaling_and_identity():
    x = np.linspace(0, 1, 50)[:, None]
    rep = jacobian_residual(MapEstimate.from_function(x, lambda p: 2 * p), uniform_density([0], [1]), uniform_density([0], [2]))
    assert rep.max_residual <= 1e-12
    rep = jacobian_residual(MapEstimate.from_function(x, lambda p: p), gaussian_density(), gaussian_density())
    assert rep.max_residual <= 1e-12
    assert rep.mean_residual == pytest.approx(float(np.dot(rep.weights, rep.residuals) / rep.weights.sum()))


def test_negative_density_rejected():
    est = MapEstimate.from_function(np.linspace(0, 1, 10)[:, None], lambda p: p)
    with pytest.raises(InputError):
        jacobian_residual(est, lambda p: -np.ones(len(p)), uniform_density([0], [1]))


def test_split_samples_are_excluded():
    two = DiscreteMeasure.uniform([[0.0], [1.0]])
    rep = jacobian_residual(estimate_map(product_plan(two, two), 0.5), uniform_density([0], [1]), uniform_density([0], [1]))
    assert rep.flagged == 2 and not rep.samples


def test_pushforward_of_identity_and_permutations(rng):
    mu = DiscreteMeasure.uniform(rng.uniform(0, 1, (20, 2)))
    assert pushforward_check(estimate_map(identity_plan(mu)), mu, mu, 4) == 0.0
    perm = rng.permutation(20)
    assert pushforward_check(estimate_map(permutation_plan(mu, mu, perm)), mu, mu, 3) == 0.0


def monotone_coupling(src, tgt):
    """North-west corner coupling of two sorted 1D measures (the quantile coupling)."""
    a, b = src.weights.copy(), tgt.weights.copy()
    rows, cols, mass = [], [], []
    i = j = 0
    while i < len(a) and j < len(b):
        m = min(a[i], b[j])
        rows.append(i), cols.append(j), mass.append(m)
        a[i] -= m
        b[j] -= m
        if a[i] <= 1e-15:
            i += 1
        else:
            j += 1
    return TransportPlan(src, tgt, rows, cols, mass, validate=False)


def test_monotone_coupling_is_optimal_on_small_grids():
    model = quadratic_cost(1, box=(-1.0, 3.0))
    src, tgt = grid(12), grid(9, 0.0, 2.0)
    plan = monotone_coupling(src, tgt)
    assert kantorovich_cost(plan, model) == pytest.approx(kantorovich_cost(solve_exact(src, tgt, model), model), abs=1e-12)


def test_pushforward_of_quantile_map():
    src, tgt = grid(1000), grid(800, 0.0, 2.0)
    est = estimate_map(monotone_coupling(src, tgt))
    gap = pushforward_check(est, src, tgt, [np.linspace(0, 2, 11)])
    assert gap <= 2 * max(1 / 1000, 1 / 800)


def test_pushforward_partition_errors():
    mu = grid(5)
    est = estimate_map(identity_plan(mu))
    with pytest.raises(InputError):
        pushforward_check(est, mu, mu, 0)
    with pytest.raises(InputError):
        pushforward_check(est, mu, mu, [np.array([0.0])])
    with pytest.raises(InputError):
        pushforward_check(est, mu, mu, [np.array([0.0, 0.5])])


def test_gaussian_ladder_residuals_shrink():
    maxima = [gaussian_scaling_report(h)[2].max_residual for h in (0.2, 0.1, 0.05)]
    assert maxima[0] > maxima[1] > maxima[2]


def test_density_helpers(tmp_path):
    f = grid_density(np.array([[0.25], [0.75]]), np.array([1.0, 3.0]))
    np.testing.assert_array_equal(f(np.array([[0.1], [0.6], [2.0]])), [1.0, 3.0, 0.0])
    path = tmp_path / "dens.csv"
    path.write_text("x1,value\n0.25,1.0\n0.75,3.0\n")
    np.testing.assert_array_equal(read_density_csv(path)(np.array([[0.7]])), [3.0])
    assert parse_density("uniform:0:2")(np.array([[1.0]]))[0] == 0.5
    assert parse_density("gaussian:0:2")(np.array([[0.0]]))[0] == pytest.approx(1 / (2 * np.sqrt(2 * np.pi)))
    assert parse_density(str(path))(np.array([[0.2]]))[0] == 1.0
    with pytest.raises(InputError):
        parse_density("cauchy")
