"""Change-of-variables checks for transport maps recovered from plans.

A plan is reduced to a map by barycentric projection, the map's
derivative is estimated by local affine least squares, and the residual
``|f+(x) - |det DT(x)| f-(T(x))|`` is reported per sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist
from scipy.stats import norm

from .costs import quadratic_cost
from .errors import InputError, SkipSample
from .measures import DiscreteMeasure, TransportPlan

SPLIT_FACTOR = 2.5

Density = Callable[[np.ndarray], np.ndarray]


@dataclass
class MapEstimate:
    """Barycentric map on the source atoms of a plan."""

    x: np.ndarray
    tx: np.ndarray
    mass: np.ndarray
    split: np.ndarray  # True where the matched targets spread wider than grid_scale
    spread: np.ndarray
    grid_scale: float

    def __len__(self) -> int:
        return len(self.x)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def split_fraction(self) -> float:
        return float(self.split.mean()) if len(self.split) else 0.0

    @classmethod
    def from_function(cls, x, fn, mass=None) -> "MapEstimate":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 1 and x.shape[1] > 1:
            x = x.T
        tx = np.asarray(fn(x), dtype=float).reshape(x.shape)
        mass = np.full(len(x), 1.0 / len(x)) if mass is None else np.asarray(mass, dtype=float)
        zeros = np.zeros(len(x))
        return cls(x, tx, mass, zeros.astype(bool), zeros, 0.0)


def default_grid_scale(points: np.ndarray) -> float:
    """``SPLIT_FACTOR`` times the median nearest-neighbour spacing."""
    if len(points) < 2:
        return 0.0
    d, _ = cKDTree(points).query(points, k=2)
    return float(SPLIT_FACTOR * np.median(d[:, 1]))


def estimate_map(plan: TransportPlan, grid_scale: float | None = None) -> MapEstimate:
    """Mass-weighted average of each source atom's matched targets."""
    src, tgt = plan.source, plan.target
    if grid_scale is None:
        grid_scale = default_grid_scale(tgt.points)
    n_src = src.size
    mass = np.bincount(plan.rows, weights=plan.mass, minlength=n_src)
    tx = np.zeros((n_src, tgt.dim))
    for k in range(tgt.dim):
        tx[:, k] = np.bincount(plan.rows, weights=plan.mass * tgt.points[plan.cols, k], minlength=n_src)
    live = mass > 0
    tx[live] /= mass[live, None]
    spread = np.zeros(n_src)
    counts = np.bincount(plan.rows, minlength=n_src)
    starts = np.concatenate([[0], np.cumsum(counts)])
    for i in np.flatnonzero(counts > 1):
        pts = tgt.points[plan.cols[starts[i] : starts[i + 1]]]
        spread[i] = pdist(pts).max()
    keep = live
    return MapEstimate(
        x=src.points[keep],
        tx=tx[keep],
        mass=mass[keep],
        split=spread[keep] > grid_scale,
        spread=spread[keep],
        grid_scale=float(grid_scale),
    )


@dataclass
class MapSample:
    x: np.ndarray
    tx: np.ndarray
    local_jacobian: np.ndarray
    det_estimate: float
    neighbors_used: int
    mass: float = 0.0


def _affine_fit(xs: np.ndarray, ys: np.ndarray, center: np.ndarray) -> np.ndarray:
    n = xs.shape[1]
    design = np.hstack([xs - center, np.ones((len(xs), 1))])
    if np.linalg.matrix_rank(design) < n + 1:
        raise SkipSample("neighbours do not span an affine frame")
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    return coef[:n].T


class _Fitter:
    """Spatial index over unflagged map samples, built once."""

    def __init__(self, est: MapEstimate, workers: int = 1):
        self.est = est
        self.good = np.flatnonzero(~est.split)
        self.tree = cKDTree(est.x[self.good]) if len(self.good) else None
        self.workers = workers

    def neighbours(self, pts: np.ndarray, k: int, radius: float | None = None):
        if self.tree is None:
            return [np.empty(0, dtype=int)] * len(pts)
        kk = min(k, len(self.good))
        d, idx = self.tree.query(pts, k=kk, workers=self.workers)
        d = d.reshape(len(pts), kk)
        idx = idx.reshape(len(pts), kk)
        out = []
        for row_d, row_i in zip(d, idx):
            ok = np.isfinite(row_d)
            if radius is not None:
                ok &= row_d <= radius
            out.append(self.good[row_i[ok]])
        return out

    def jacobian(self, x: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
        if len(nbrs) < self.est.dim + 1:
            raise SkipSample(f"only {len(nbrs)} unflagged neighbours, need {self.est.dim + 1}")
        return _affine_fit(self.est.x[nbrs], self.est.tx[nbrs], x)


def local_jacobian(est: MapEstimate, x, k_neighbors: int | None = None, radius: float | None = None) -> np.ndarray:
    """Affine least-squares slope of the map over the k nearest unflagged samples.

    Raises ``SkipSample`` when fewer than ``n+1`` usable neighbours exist.
    """
    x = np.asarray(x, dtype=float).reshape(est.dim)
    k = k_neighbors or 2 * est.dim + 2
    fitter = _Fitter(est)
    return fitter.jacobian(x, fitter.neighbours(x[None, :], k, radius)[0])


@dataclass
class JacobianReport:
    samples: list
    residuals: np.ndarray
    grid_scale: float
    skipped: int = 0
    flagged: int = 0
    k_neighbors: int = 0
    notes: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.mass for s in self.samples])

    @property
    def mean_residual(self) -> float:
        w = self.weights
        if not len(w) or w.sum() <= 0:
            return 0.0
        return float(np.dot(w, self.residuals) / w.sum())

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if len(self.residuals) else 0.0

    def to_dict(self) -> dict:
        return {
            "grid_scale": self.grid_scale,
            "k_neighbors": self.k_neighbors,
            "samples": len(self.samples),
            "skipped": self.skipped,
            "flagged": self.flagged,
            "mean_residual": self.mean_residual,
            "max_residual": self.max_residual,
        }

    def write_csv(self, path) -> None:
        if not self.samples:
            Path(path).write_text("")
            return
        n = len(self.samples[0].x)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*(f"x{i + 1}" for i in range(n)), *(f"tx{i + 1}" for i in range(n)), "det", "neighbors", "mass", "residual"])
            for s, r in zip(self.samples, self.residuals):
                w.writerow([*map(repr, s.x.tolist()), *map(repr, s.tx.tolist()), repr(s.det_estimate), s.neighbors_used, repr(s.mass), repr(float(r))])


def _eval_density(f: Density, pts: np.ndarray, name: str) -> np.ndarray:
    vals = np.asarray(f(pts), dtype=float).reshape(len(pts))
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise InputError(f"density {name} is negative or not finite at some sample")
    return vals


def jacobian_residual(
    est: MapEstimate,
    f_plus: Density,
    f_minus: Density,
    k_neighbors: int | None = None,
    radius: float | None = None,
    workers: int = 1,
) -> JacobianReport:
    k = k_neighbors or 2 * est.dim + 2
    fitter = _Fitter(est, workers)
    unflagged = np.flatnonzero(~est.split)
    nbr_lists = fitter.neighbours(est.x[unflagged], k, radius)
    samples, skipped = [], 0
    for i, nbrs in zip(unflagged, nbr_lists):
        try:
            A = fitter.jacobian(est.x[i], nbrs)
        except SkipSample:
            skipped += 1
            continue
        samples.append(MapSample(est.x[i], est.tx[i], A, float(np.linalg.det(A)), len(nbrs), float(est.mass[i])))
    if samples:
        xs = np.array([s.x for s in samples])
        txs = np.array([s.tx for s in samples])
        dets = np.abs([s.det_estimate for s in samples])
        residuals = np.abs(_eval_density(f_plus, xs, "f_plus") - dets * _eval_density(f_minus, txs, "f_minus"))
    else:
        residuals = np.zeros(0)
    return JacobianReport(samples, residuals, est.grid_scale, skipped, int(est.split.sum()), k)


def pushforward_check(est: MapEstimate, source: DiscreteMeasure, target: DiscreteMeasure, cells) -> float:
    """Largest per-cell gap between the pushed source mass and the target mass.

    ``cells`` is either a number of bins per axis (spanning the target and
    the mapped points) or a list of bin edges per axis. Mapped mass landing
    outside every cell counts as discrepancy.
    """
    n = target.dim
    if np.isscalar(cells):
        if int(cells) < 1:
            raise InputError("partition must contain at least one cell")
        pts = np.vstack([target.points, est.tx])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        edges = [np.linspace(lo[d], hi[d], int(cells) + 1) for d in range(n)]
    else:
        edges = [np.asarray(e, dtype=float) for e in cells]
        if len(edges) != n or any(len(e) < 2 for e in edges):
            raise InputError("partition must contain at least one cell per axis")
    for d, e in enumerate(edges):
        if target.points[:, d].min() < e[0] or target.points[:, d].max() > e[-1]:
            raise InputError("cells must cover the target support")
    w_src = est.mass
    pushed, _ = np.histogramdd(est.tx, bins=edges, weights=w_src)
    tmass, _ = np.histogramdd(target.points, bins=edges, weights=target.weights)
    inside = np.all([(est.tx[:, d] >= e[0]) & (est.tx[:, d] <= e[-1]) for d, e in enumerate(edges)], axis=0)
    outside = float(w_src[~inside].sum())
    return float(max(np.abs(pushed - tmass).max(), outside))


# -- densities ---------------------------------------------------------------


def uniform_density(lower, upper) -> Density:
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    vol = float(np.prod(hi - lo))

    def f(pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, len(lo))
        inside = np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)
        return inside / vol

    return f


def gaussian_density(mean=0.0, sd=1.0, dim: int = 1) -> Density:
    mu = np.broadcast_to(np.asarray(mean, dtype=float), (dim,))

    def f(pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, dim)
        return np.prod(norm.pdf(pts, loc=mu, scale=sd), axis=1)

    return f


def grid_density(points: np.ndarray, values: np.ndarray) -> Density:
    """Cell-constant density on a regular grid of cell centres."""
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    axes = [np.unique(points[:, d]) for d in range(points.shape[1])]
    steps = [np.diff(a).min() if len(a) > 1 else 1.0 for a in axes]
    table = np.zeros([len(a) for a in axes])
    idx = tuple(np.searchsorted(a, points[:, d]) for d, a in enumerate(axes))
    table[idx] = values

    def f(pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, len(axes))
        out = np.zeros(len(pts))
        ok = np.ones(len(pts), dtype=bool)
        cell = []
        for d, (a, s) in enumerate(zip(axes, steps)):
            j = np.rint((pts[:, d] - a[0]) / s).astype(int)
            ok &= (j >= 0) & (j < len(a)) & (np.abs(pts[:, d] - a[0] - j * s) <= s / 2 + 1e-12)
            cell.append(np.clip(j, 0, len(a) - 1))
        out[ok] = table[tuple(c[ok] for c in cell)]
        return out

    return f


def read_density_csv(path) -> Density:
    """Columns ``x1..xn,value`` with one row per grid cell centre."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise InputError(f"{path}: density CSV needs coordinate columns and a value column")
    if np.any(data[:, -1] < 0):
        raise InputError(f"{path}: density values must be non-negative")
    return grid_density(data[:, :-1], data[:, -1])


def parse_density(spec: str, dim: int = 1) -> Density:
    """``uniform[:lo:hi]``, ``gaussian[:mean:sd]`` or a path to a density CSV."""
    name, *args = spec.split(":")
    try:
        nums = [float(a) for a in args]
    except ValueError:
        nums = None
    if name in ("uniform", "gaussian") and nums is not None and len(nums) in (0, 2):
        a, b = nums or [0.0, 1.0]
        if name == "uniform":
            return uniform_density([a] * dim, [b] * dim)
        return gaussian_density(a, b, dim)
    if Path(spec).is_file():
        return read_density_csv(spec)
    raise InputError(f"unknown density {spec!r}; use uniform[:lo:hi], gaussian[:mean:sd] or a CSV path")


# -- Gaussian refinement ladder ---------------------------------------------


def gaussian_measure(h: float, sd: float, halfwidth: float) -> DiscreteMeasure:
    """Grid of spacing ``h`` on ``[-halfwidth, halfwidth]`` weighted by the N(0, sd^2) pdf."""
    count = int(round(2 * halfwidth / h)) + 1
    pts = np.linspace(-halfwidth, halfwidth, count)
    w = norm.pdf(pts, scale=sd)
    return DiscreteMeasure(pts[:, None], w / w.sum())


def gaussian_scaling_report(h: float, sd_plus: float = 1.0, sd_minus: float = 2.0, tails: float = 4.0, k_neighbors: int | None = None):
    """Solve the gridded N(0, sd+^2) -> N(0, sd-^2) problem and check the Jacobian equation.

    Returns ``(plan, map_estimate, report)``.
    """
    from .solver import solve_exact

    src = gaussian_measure(h, sd_plus, tails * sd_plus)
    tgt = gaussian_measure(h, sd_minus, tails * sd_minus)
    reach = tails * max(sd_plus, sd_minus)
    cost = quadratic_cost(1, box=(-reach, reach))
    plan = solve_exact(src, tgt, cost)
    est = estimate_map(plan, grid_scale=3 * h)
    report = jacobian_residual(est, gaussian_density(0.0, sd_plus), gaussian_density(0.0, sd_minus), k_neighbors)
    return plan, est, report
