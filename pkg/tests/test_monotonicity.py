import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otrect.costs import bilinear_cost, example31_cost, quadratic_cost
from otrect.errors import DegenerateInputError, InputError
from otrect.measures import DiscreteMeasure, SupportSample, support
from otrect.monotonicity import check_cyclical, check_pairwise
from otrect.solver import brute_force, solve_exact


def pairs(xs, ys):
    return SupportSample(np.asarray(xs, dtype=float).reshape(len(xs), -1), np.asarray(ys, dtype=float).reshape(len(ys), -1))


XY = bilinear_cost(1)  # b(x, y) = x * y


def test_monotone_pair_passes():
    rep = check_pairwise(pairs([0, 1], [0, 1]), XY)
    assert rep.passed and rep.max_defect == pytest.approx(-1.0)


def test_swapped_pair_fails():
    rep = check_pairwise(pairs([0, 1], [1, 0]), XY)
    assert rep.verdict == "fail"
    assert rep.violations == [((0, 1), pytest.approx(1.0))]


def test_example31_pair_on_first_sheet():
    s = pairs([[0, 0], [1, 0]], [[0, math.pi], [1, math.pi]])
    rep = check_pairwise(s, example31_cost())
    assert rep.passed
    # cross sum (1 - e)^2 against a zero diagonal sum
    assert -rep.max_defect == pytest.approx((1 - math.e) ** 2, rel=1e-12)
    assert -rep.max_defect == pytest.approx(2.9525, abs=1e-4)


def test_three_cycle_counterexample():
    model = quadratic_cost(1, box=(-1.0, 3.0))
    s = pairs([0, 1, 2], [1, 2, 0])
    rep = check_cyclical(s, model, max_cycle=3)
    assert not rep.passed
    worst = rep.violations[0]
    assert len(worst[0]) == 3
    # identity cost (1 + 1 + 4)/2 against the sorted reassignment at 0
    assert worst[1] == pytest.approx(3.0)


def test_k2_equals_pairwise(rng):
    model = quadratic_cost(2)
    s = SupportSample(rng.uniform(-1, 1, (9, 2)), rng.uniform(-1, 1, (9, 2)))
    a = check_pairwise(s, model)
    b = check_cyclical(s, model, max_cycle=2)
    assert a.verdict == b.verdict
    assert a.max_defect == pytest.approx(b.max_defect, abs=1e-15)
    assert [idx for idx, _ in a.violations] == [tuple(sorted(idx)) for idx, _ in b.violations]
    np.testing.assert_allclose([d for _, d in a.violations], [d for _, d in b.violations], atol=1e-15)


def test_violations_sorted_descending(rng):
    model = quadratic_cost(1)
    s = SupportSample(rng.uniform(-1, 1, (12, 1)), rng.uniform(-1, 1, (12, 1)))
    rep = check_pairwise(s, model)
    defects = [d for _, d in rep.violations]
    assert defects == sorted(defects, reverse=True)
    assert rep.passed == (rep.max_defect <= rep.tolerance)


def test_defect_symmetric_under_swap(rng):
    model = example31_cost()
    x = rng.uniform([0, 0], [1, 4 * math.pi], (2, 2))
    y = rng.uniform([0, 0], [1, 4 * math.pi], (2, 2))
    a = check_pairwise(SupportSample(x, y), model, tolerance=math.inf)
    b = check_pairwise(SupportSample(x[::-1], y[::-1]), model, tolerance=math.inf)
    assert a.max_defect == pytest.approx(b.max_defect, rel=1e-14, abs=1e-14)


def test_cycle_length_guard():
    s = pairs([0, 1], [0, 1])
    for k in (1, 7):
        with pytest.raises(InputError):
            check_cyclical(s, XY, max_cycle=k)


def test_single_pair_is_degenerate():
    with pytest.raises(DegenerateInputError):
        check_pairwise(pairs([0], [0]), XY)


def test_sampling_mode_finds_planted_violation():
    n = 200
    x = np.linspace(-1, 1, n)
    y = x.copy()
    y[[3, 150]] = y[[150, 3]]
    s = pairs(x, y)
    rep = check_pairwise(s, quadratic_cost(1), sample_pairs=50_000, rng=np.random.default_rng(1))
    assert rep.sampled and rep.checked == 50_000
    assert not rep.passed
    assert all(3 in idx or 150 in idx for idx, _ in rep.violations)


def test_cycle_budget_sampling(rng):
    s = SupportSample(np.sort(rng.uniform(-1, 1, (10, 1)), axis=0), np.sort(rng.uniform(-1, 1, (10, 1)), axis=0))
    rep = check_cyclical(s, quadratic_cost(1), max_cycle=4, budget=100)
    assert rep.sampled and rep.passed


def test_solver_output_is_cyclically_monotone(rng):
    model = quadratic_cost(2)
    src = DiscreteMeasure.uniform(rng.uniform(-1, 1, (5, 2)))
    tgt = DiscreteMeasure.uniform(rng.uniform(-1, 1, (5, 2)))
    plan = solve_exact(src, tgt, model)
    assert check_cyclical(support(plan), model, max_cycle=4).violations == []
    assert check_cyclical(support(brute_force(src, tgt, model)), model, max_cycle=4).passed


def test_report_merge_is_associative(rng):
    model = quadratic_cost(1)
    reps = [check_pairwise(SupportSample(rng.uniform(-1, 1, (4, 1)), rng.uniform(-1, 1, (4, 1))), model) for _ in range(3)]
    left = reps[0].merge(reps[1]).merge(reps[2])
    right = reps[0].merge(reps[1].merge(reps[2]))
    assert left.to_dict() == right.to_dict()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=10, unique=True))
def test_sorted_matchings_are_monotone_for_quadratic(values):
    x = np.sort(np.array(values))
    y = np.sort(np.array(values) * 0.5 + 0.1)
    assert check_cyclical(pairs(x, y), quadratic_cost(1), max_cycle=3, tolerance=1e-12).passed
