"""Discrete measures, sparse transport plans, and their file formats."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import InitVar, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .costs import CostModel, pair_costs
from .errors import DegenerateInputError, InputError

MARGINAL_TOL = 1e-12
DEFAULT_MASS_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud. ``points`` has shape (N, n)."""

    points: np.ndarray
    weights: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.ndim != 2 or len(pts) != len(w):
            raise InputError("points and weights must have matching lengths")
        if len(w) == 0:
            raise InputError("a measure needs at least one atom")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise InputError("non-finite point or weight")
        if np.any(w < 0):
            raise InputError("negative weight")
        if check and abs(w.sum() - 1.0) > MARGINAL_TOL:
            raise InputError(f"weights sum to {w.sum():.17g}, not 1")
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        n = len(pts)
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights / self.weights.sum())

    def is_uniform(self, rtol: float = 1e-12) -> bool:
        return bool(np.allclose(self.weights, self.weights.mean(), rtol=rtol, atol=0.0))

    def same_as(self, other: "DiscreteMeasure", tol: float = MARGINAL_TOL) -> bool:
        return (
            self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
            and float(np.max(np.abs(self.weights - other.weights))) <= tol
        )


@dataclass(frozen=True)
class SupportSample:
    """A raw set of pairs (x_k, y_k), optionally with masses."""

    x: np.ndarray
    y: np.ndarray
    mass: Optional[np.ndarray] = None
    index: Optional[np.ndarray] = None  # (m, 2) source/target indices when taken from a plan

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.shape != y.shape or x.ndim != 2:
            raise InputError("pair arrays must have equal shape (m, n)")
        if len(x) == 0:
            raise DegenerateInputError("support sample is empty")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.mass is not None:
            object.__setattr__(self, "mass", np.asarray(self.mass, dtype=float).ravel())

    @classmethod
    def from_pairs(cls, pairs) -> "SupportSample":
        xs, ys = zip(*pairs)
        return cls(np.atleast_2d(np.asarray(xs, dtype=float).reshape(len(xs), -1)),
                   np.atleast_2d(np.asarray(ys, dtype=float).reshape(len(ys), -1)))

    def __len__(self) -> int:
        return len(self.x)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, mask) -> "SupportSample":
        mask = np.asarray(mask)
        return SupportSample(
            self.x[mask],
            self.y[mask],
            None if self.mass is None else self.mass[mask],
            None if self.index is None else self.index[mask],
        )

    def check_in(self, model: CostModel) -> None:
        model.check_domain(self.x, self.y)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling stored as (row, col, mass) triplets.

    Zero-mass entries are dropped on construction. When ``validate`` is
    true the row and column sums must reproduce the two measures within
    ``MARGINAL_TOL``.
    """

    source: DiscreteMeasure
    target: DiscreteMeasure
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    potentials: Optional[tuple] = field(default=None, compare=False)
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        r = np.asarray(self.rows, dtype=np.int64).ravel()
        c = np.asarray(self.cols, dtype=np.int64).ravel()
        m = np.asarray(self.mass, dtype=float).ravel()
        if not (len(r) == len(c) == len(m)):
            raise InputError("plan triplets have mismatched lengths")
        if len(r) and (r.min() < 0 or r.max() >= self.source.size or c.min() < 0 or c.max() >= self.target.size):
            raise InputError("plan index out of range")
        if np.any(m < -MARGINAL_TOL):
            raise InputError("negative mass in plan")
        keep = m > 0
        r, c, m = r[keep], c[keep], m[keep]
        order = np.lexsort((c, r))
        r, c, m = r[order], c[order], m[order]
        if len(r) > 1 and np.any((np.diff(r) == 0) & (np.diff(c) == 0)):
            raise InputError("duplicate (i, j) entries in plan")
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "cols", c)
        object.__setattr__(self, "mass", m)
        if validate:
            err = self.marginal_error()
            if err > MARGINAL_TOL:
                raise InputError(f"plan marginals deviate from the measures by {err:.3g}")

    @classmethod
    def from_dense(cls, matrix, source, target, floor: float = 0.0, validate: bool = True) -> "TransportPlan":
        g = np.asarray(matrix, dtype=float)
        r, c = np.nonzero(g > floor)
        return cls(source, target, r, c, g[r, c], validate=validate)

    @property
    def nnz(self) -> int:
        return len(self.mass)

    @property
    def entries(self) -> list:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.rows, self.cols, self.mass)]

    def to_dense(self) -> np.ndarray:
        g = np.zeros((self.source.size, self.target.size))
        g[self.rows, self.cols] = self.mass
        return g

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.mass, minlength=self.source.size)

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.mass, minlength=self.target.size)

    def marginal_error(self) -> float:
        return float(max(np.max(np.abs(self.row_sums() - self.source.weights)),
                         np.max(np.abs(self.col_sums() - self.target.weights))))

    def same_entries(self, other: "TransportPlan", tol: float = 0.0) -> bool:
        return (
            np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and bool(np.all(np.abs(self.mass - other.mass) <= tol))
        )


def marginals(plan: TransportPlan) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """The two projections of ``plan`` as (unchecked) measures."""
    return (
        DiscreteMeasure(plan.source.points, plan.row_sums(), check=False),
        DiscreteMeasure(plan.target.points, plan.col_sums(), check=False),
    )


def support(plan: TransportPlan, mass_floor: float = DEFAULT_MASS_FLOOR) -> SupportSample:
    """Pairs (x_i, y_j) carrying mass above ``mass_floor``."""
    if mass_floor < 0:
        raise InputError("mass_floor must be nonnegative")
    keep = plan.mass > mass_floor
    if not np.any(keep):
        raise DegenerateInputError("plan has no entry above the mass floor")
    r, c = plan.rows[keep], plan.cols[keep]
    return SupportSample(
        plan.source.points[r],
        plan.target.points[c],
        plan.mass[keep],
        np.stack([r, c], axis=1),
    )


def kantorovich_cost(plan: TransportPlan, model: CostModel) -> float:
    """Total cost ``sum mass * c(x_i, y_j)`` over the plan's entries."""
    if plan.nnz == 0:
        return 0.0
    xs = plan.source.points[plan.rows]
    ys = plan.target.points[plan.cols]
    model.check_domain(xs, ys)
    vals = pair_costs(model, xs, ys)
    return float(np.dot(plan.mass, vals))


def product_plan(source: DiscreteMeasure, target: DiscreteMeasure) -> TransportPlan:
    g = np.outer(source.weights, target.weights)
    return TransportPlan.from_dense(g, source, target)


def identity_plan(measure: DiscreteMeasure) -> TransportPlan:
    idx = np.arange(measure.size)
    return TransportPlan(measure, measure, idx, idx, measure.weights)


def permutation_plan(source: DiscreteMeasure, target: DiscreteMeasure, perm: Sequence[int]) -> TransportPlan:
    """Plan sending atom i to atom perm[i]; both measures must be uniform."""
    perm = np.asarray(perm, dtype=np.int64)
    if len(perm) != source.size or source.size != target.size:
        raise InputError("permutation length must match both measures")
    return TransportPlan(source, target, np.arange(source.size), perm, source.weights.copy())


def mix_plans(plans: Sequence[TransportPlan], coeffs: Sequence[float]) -> TransportPlan:
    """Convex combination of plans that share the same two measures."""
    if len(plans) != len(coeffs) or not plans:
        raise InputError("need one coefficient per plan")
    coeffs = np.asarray(coeffs, dtype=float)
    if np.any(coeffs < 0) or abs(coeffs.sum() - 1.0) > 1e-12:
        raise InputError("coefficients must be a probability vector")
    src, tgt = plans[0].source, plans[0].target
    for p in plans[1:]:
        if not (p.source.same_as(src) and p.target.same_as(tgt)):
            raise InputError("plans must share their marginal measures")
    keys = np.concatenate([p.rows * tgt.size + p.cols for p in plans])
    vals = np.concatenate([t * p.mass for p, t in zip(plans, coeffs)])
    uniq, inv = np.unique(keys, return_inverse=True)
    mass = np.bincount(inv, weights=vals)
    return TransportPlan(src, tgt, uniq // tgt.size, uniq % tgt.size, mass)


# ---------------------------------------------------------------------------
# file formats


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    try:
        float(header[0])
    except ValueError:
        pass
    else:
        raise InputError(f"{path}: header row required")
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if data.size and data.shape[1] != len(header):
        raise InputError(f"{path}: row width does not match header")
    return header, data.reshape(-1, len(header))


def read_measure_csv(path, normalize: bool = False) -> DiscreteMeasure:
    """Read ``x1..xn,weight`` rows. Weights are kept as given unless ``normalize``."""
    header, data = _read_rows(path)
    if len(header) < 2:
        raise InputError(f"{path}: need at least one coordinate column and a weight column")
    if len(data) == 0:
        raise InputError(f"{path}: no data rows")
    pts, w = data[:, :-1], data[:, -1]
    if normalize:
        w = w / w.sum()
    return DiscreteMeasure(pts, w, check=normalize)


def write_measure_csv(measure: DiscreteMeasure, path) -> None:
    n = measure.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(n)] + ["weight"])
        for p, wt in zip(measure.points, measure.weights):
            w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])


def read_pairs_csv(path) -> SupportSample:
    """Read ``x1..xn,y1..yn[,mass]`` rows into a support sample."""
    header, data = _read_rows(path)
    low = [h.lower() for h in header]
    mass = None
    if low[-1] in ("mass", "weight"):
        mass = data[:, -1]
        data = data[:, :-1]
        low = low[:-1]
    if len(low) % 2:
        raise InputError(f"{path}: expected equal numbers of x and y columns")
    n = len(low) // 2
    xcols = [k for k, h in enumerate(low) if h.startswith("x")]
    ycols = [k for k, h in enumerate(low) if h.startswith("y")]
    if len(xcols) != n or len(ycols) != n:
        xcols, ycols = list(range(n)), list(range(n, 2 * n))
    if len(data) == 0:
        raise DegenerateInputError(f"{path}: no pairs")
    return SupportSample(data[:, xcols], data[:, ycols], mass)


def write_pairs_csv(sample: SupportSample, path) -> None:
    n = sample.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]
        if sample.mass is not None:
            head.append("mass")
        w.writerow(head)
        for k in range(len(sample)):
            row = [repr(float(v)) for v in sample.x[k]] + [repr(float(v)) for v in sample.y[k]]
            if sample.mass is not None:
                row.append(repr(float(sample.mass[k])))
            w.writerow(row)


def plan_to_dict(plan: TransportPlan, source_file: str, target_file: str) -> dict:
    return {
        "source_file": source_file,
        "target_file": target_file,
        "entries": [[i, j, w] for i, j, w in plan.entries],
    }


def write_plan_json(plan: TransportPlan, path, source_file: str, target_file: str, extra: Optional[dict] = None) -> None:
    doc = plan_to_dict(plan, source_file, target_file)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_plan_json(path) -> TransportPlan:
    """Load a plan; measure paths are resolved relative to the JSON file."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None
    for key in ("source_file", "target_file", "entries"):
        if key not in doc:
            raise InputError(f"{path}: missing key {key!r}")
    base = os.path.dirname(os.path.abspath(path))
    src = read_measure_csv(os.path.join(base, doc["source_file"]), normalize=True)
    tgt = read_measure_csv(os.path.join(base, doc["target_file"]), normalize=True)
    ent = np.asarray(doc["entries"], dtype=float).reshape(-1, 3)
    plan = TransportPlan(src, tgt, ent[:, 0].astype(np.int64), ent[:, 1].astype(np.int64), ent[:, 2], validate=False)
    err = plan.marginal_error()
    if err > 1e-9:
        raise InputError(f"{path}: plan marginals deviate from the measures by {err:.3g}")
    return plan
