import math

import numpy as np
import pytest

from otrect.costs import BUILTIN_COSTS, CostModel, WorkBox, bilinear_cost, builtin_cost, example31_cost, example32_cost, swap_roles
from otrect.errors import InputError
from otrect.nondegeneracy import classify_point, local_injectivity_radius, twist_scan


def rank_one_cost():
    box = WorkBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))

    def hess(x, y):
        out = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        return out

    return CostModel(
        dim=2,
        evaluate=lambda x, y: x[..., 0] * y[..., 0],
        mixed_hessian=hess,
        label="x1*y1",
        x_box=box,
        y_box=box,
    )


def test_rank_one_cost_is_degenerate():
    c = classify_point(rank_one_cost(), [0.2, 0.3], [0.4, -0.1])
    assert c.degenerate
    assert c.sigma_min == 0.0 and c.sigma_max == 1.0
    assert c.determinant == 0.0


def test_example_determinants():
    c = classify_point(example31_cost(), [0.3, 1.0], [0.2, 4.0])
    assert not c.degenerate
    assert c.determinant == pytest.approx(math.exp(1.0), rel=1e-12)
    c = classify_point(example32_cost(), [1.0, 2.0], [0.5, 0.4])
    assert c.determinant == pytest.approx(-math.exp(0.8), rel=1e-12)


def test_determinant_matches_singular_values(rng):
    model = example32_cost()
    for _ in range(20):
        c = classify_point(model, model.x_box.sample(rng, 1)[0] * 0.5, model.y_box.sample(rng, 1)[0] * 0.5)
        assert abs(c.determinant) == pytest.approx(c.sigma_min * c.sigma_max, rel=1e-9)


def test_classification_row_layout():
    row = classify_point(bilinear_cost(2), [0.1, 0.2], [0.3, 0.4]).row()
    assert row[:4] == [0.1, 0.2, 0.3, 0.4]
    assert row[-1] == 0


@pytest.mark.parametrize("name", BUILTIN_COSTS)
def test_degeneracy_symmetric_under_swap(name, rng):
    model = builtin_cost(name)
    swapped = swap_roles(model)
    for _ in range(10):
        x = model.x_box.sample(rng, 1)[0] * 0.5 + model.x_box.center * 0.5
        y = model.y_box.sample(rng, 1)[0] * 0.5 + model.y_box.center * 0.5
        a = classify_point(model, x, y)
        b = classify_point(swapped, y, x)
        assert a.degenerate == b.degenerate
        assert a.determinant == pytest.approx(b.determinant, rel=1e-12)


def test_example31_periodic_collision():
    rep = twist_scan(example31_cost(), "x-to-y", [0.0, 0.0], [[0.0, 0.0], [0.0, 2 * math.pi]])
    assert not rep.injective_on_sample
    (i, j, gd, sep), = rep.collisions
    assert (i, j) == (0, 1)
    assert gd <= 1e-9
    assert sep == pytest.approx(2 * math.pi)
    doc = rep.to_dict()
    assert doc["scope"] == "on sample"


@pytest.mark.parametrize("direction", ["x-to-y", "y-to-x"])
def test_bilinear_never_collides(direction, rng):
    pts = rng.uniform(-1, 1, (400, 2))
    assert twist_scan(bilinear_cost(2), direction, [0.1, -0.2], pts).injective_on_sample


def test_example32_x_to_y_collides_on_shift():
    rep = twist_scan(example32_cost(), "x-to-y", [1.0, 0.5], [[0.3, 0.2], [0.3 + 2 * math.pi, 0.2]])
    assert len(rep.collisions) == 1


def test_separation_floor_filters_near_duplicates():
    pts = [[0.1, 0.1], [0.1 + 1e-9, 0.1]]
    assert twist_scan(bilinear_cost(2), "x-to-y", [0, 0], pts, collision_tol=1e-6).injective_on_sample


def test_invalid_arguments():
    with pytest.raises(InputError):
        twist_scan(bilinear_cost(2), "sideways", [0, 0], [[0, 0]])
    with pytest.raises(InputError):
        twist_scan(bilinear_cost(2), "x-to-y", [0, 0], [[0, 0]], separation_floor=0.0)


@pytest.mark.parametrize("name", ["example31", "example32"])
def test_local_injectivity_radius(name, rng):
    model = builtin_cost(name)
    x = model.x_box.center
    y = model.y_box.center
    r = local_injectivity_radius(model, "x-to-y", x, y)
    assert r > 0
    sigma = classify_point(model, x, y).sigma_min
    # verify the defining inequality on fresh points inside the radius
    off = rng.uniform(-1, 1, (300, 2))
    off *= (r * rng.random(300) / np.linalg.norm(off, axis=1))[:, None]
    g = model.grad_x
    gy = g(np.broadcast_to(x, off.shape), y + off)
    g0 = g(x, y)
    lhs = np.linalg.norm(gy - g0, axis=1)
    assert np.all(lhs >= 0.5 * sigma * np.linalg.norm(off, axis=1) - 1e-12)
