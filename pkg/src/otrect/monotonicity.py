"""Pairwise and cyclical monotonicity checks for sets of pairs.

Defects are written in cost form. For a cycle ``i_1 -> ... -> i_k`` the
defect is

    sum_l c(x_l, y_l) - sum_l c(x_l, y_{l+1})

i.e. how much the cyclic reassignment beats the identity pairing. For
``k = 2`` this is ``b(x0,y1) + b(x1,y0) - b(x0,y0) - b(x1,y1)`` with
``b = -c``. A set is monotone when no defect exceeds the tolerance.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import CostModel, cost_matrix
from .errors import DegenerateInputError, InputError
from .measures import SupportSample

DEFAULT_TOL = 1e-9
SAMPLING_THRESHOLD = 10_000
MAX_CYCLE = 6
CYCLE_BUDGET = 2_000_000


@dataclass
class MonotonicityReport:
    checked: int
    violations: list = field(default_factory=list)  # (indices tuple, defect), descending defect
    max_defect: float = -math.inf
    tolerance: float = DEFAULT_TOL
    cycle_length: int = 2
    sampled: bool = False

    @property
    def passed(self) -> bool:
        return self.max_defect <= self.tolerance

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def merge(self, other: "MonotonicityReport") -> "MonotonicityReport":
        viol = sorted(self.violations + other.violations, key=lambda t: (-t[1], t[0]))
        return MonotonicityReport(
            checked=self.checked + other.checked,
            violations=viol,
            max_defect=max(self.max_defect, other.max_defect),
            tolerance=self.tolerance,
            cycle_length=max(self.cycle_length, other.cycle_length),
            sampled=self.sampled or other.sampled,
        )

    def to_dict(self, limit: int = 100) -> dict:
        return {
            "checked": self.checked,
            "cycle_length": self.cycle_length,
            "tolerance": self.tolerance,
            "max_defect": None if not math.isfinite(self.max_defect) else self.max_defect,
            "violation_count": len(self.violations),
            "violations": [{"indices": list(map(int, idx)), "defect": d} for idx, d in self.violations[:limit]],
            "sampled": self.sampled,
            "verdict": self.verdict,
        }


def _report(indices, defects, tolerance, k, checked, sampled=False) -> MonotonicityReport:
    defects = np.asarray(defects, dtype=float)
    if defects.size == 0:
        return MonotonicityReport(checked, [], -math.inf, tolerance, k, sampled)
    bad = np.flatnonzero(defects > tolerance)
    order = bad[np.argsort(-defects[bad], kind="stable")]
    viol = [(tuple(int(v) for v in indices[b]), float(defects[b])) for b in order]
    return MonotonicityReport(checked, viol, float(defects.max()), tolerance, k, sampled)


def pair_defects(C: np.ndarray) -> np.ndarray:
    """Matrix of 2-cycle defects from ``C[a, b] = c(x_a, y_b)``."""
    d = np.diag(C)
    return d[:, None] + d[None, :] - C - C.T


def check_pairwise(
    support: SupportSample,
    model: CostModel,
    tolerance: float = DEFAULT_TOL,
    sample_pairs: int | None = None,
    rng: np.random.Generator | None = None,
) -> MonotonicityReport:
    """Check every unordered pair of support points for the 2-point inequality.

    Samples with more than ``SAMPLING_THRESHOLD`` pairs are checked on a
    random subset of ``sample_pairs`` unordered pairs (default 10**6).
    """
    m = len(support)
    if m < 2:
        raise DegenerateInputError("monotonicity needs at least two pairs")
    model.check_domain(support.x, support.y)
    if m <= SAMPLING_THRESHOLD and sample_pairs is None:
        C = cost_matrix(model, support.x, support.y, check=False)
        D = pair_defects(C)
        iu, ju = np.triu_indices(m, k=1)
        return _report(np.stack([iu, ju], axis=1), D[iu, ju], tolerance, 2, len(iu))
    rng = rng or np.random.default_rng(0)
    count = sample_pairs or 1_000_000
    a = rng.integers(0, m, size=count)
    b = rng.integers(0, m - 1, size=count)
    b = np.where(b >= a, b + 1, b)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    x, y = support.x, support.y
    cost = model.evaluate
    defects = cost(x[lo], y[lo]) + cost(x[hi], y[hi]) - cost(x[lo], y[hi]) - cost(x[hi], y[lo])
    return _report(np.stack([lo, hi], axis=1), defects, tolerance, 2, count, sampled=True)


def _cycles(m: int, k: int):
    """Directed k-cycles on m labels, each listed once (smallest label first)."""
    for combo in itertools.combinations(range(m), k):
        head, rest = combo[0], combo[1:]
        for perm in itertools.permutations(rest):
            yield (head,) + perm


def cycle_count(m: int, k: int) -> int:
    return math.comb(m, k) * math.factorial(k - 1)


def check_cyclical(
    support: SupportSample,
    model: CostModel,
    max_cycle: int = 3,
    tolerance: float = DEFAULT_TOL,
    budget: int = CYCLE_BUDGET,
    rng: np.random.Generator | None = None,
) -> MonotonicityReport:
    """Check all reassignment cycles of length 2..max_cycle.

    A k-cycle over distinct pairs ``(i_1, ..., i_k)`` is violated when
    sending ``x_{i_l}`` to ``y_{i_{l+1}}`` lowers the cost by more than
    ``tolerance``. Both orientations of every cycle are examined. When a
    length has more than ``budget`` cycles a random subset of that size
    is checked instead and the report is marked ``sampled``.
    """
    if not (2 <= max_cycle <= MAX_CYCLE):
        raise InputError(f"max_cycle must lie in [2, {MAX_CYCLE}]")
    m = len(support)
    if m < 2:
        raise DegenerateInputError("monotonicity needs at least two pairs")
    model.check_domain(support.x, support.y)
    C = cost_matrix(model, support.x, support.y, check=False)
    rng = rng or np.random.default_rng(0)
    report = None
    for k in range(2, min(max_cycle, m) + 1):
        total = cycle_count(m, k)
        if total <= budget:
            cyc = np.fromiter(itertools.chain.from_iterable(_cycles(m, k)), dtype=np.int64, count=total * k)
            cyc = cyc.reshape(total, k)
            sampled = False
        else:
            cyc = np.array([rng.choice(m, size=k, replace=False) for _ in range(budget)], dtype=np.int64)
            sampled = True
        shifted = np.roll(cyc, -1, axis=1)
        defects = C[cyc, cyc].sum(axis=1) - C[cyc, shifted].sum(axis=1)
        part = _report(cyc, defects, tolerance, k, len(cyc), sampled)
        report = part if report is None else report.merge(part)
    return report
