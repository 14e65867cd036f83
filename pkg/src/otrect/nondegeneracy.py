"""Non-degeneracy classification and sampled twist (injectivity) scans."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .costs import CostModel, hessian_fn
from .errors import InputError

DEGENERACY_THRESHOLD = 1e-10
DIRECTIONS = ("x-to-y", "y-to-x")


@dataclass
class HessianClassification:
    x: np.ndarray
    y: np.ndarray
    matrix: np.ndarray
    determinant: float
    sigma_min: float
    sigma_max: float
    degenerate: bool
    threshold: float = DEGENERACY_THRESHOLD

    def row(self) -> list:
        return [*self.x.tolist(), *self.y.tolist(), self.determinant, self.sigma_min, self.sigma_max, int(self.degenerate)]


def classify_point(model: CostModel, x, y, threshold: float = DEGENERACY_THRESHOLD, method: str = "auto") -> HessianClassification:
    """Classify (x, y) as degenerate when ``sigma_min <= threshold * sigma_max``."""
    x = np.asarray(x, dtype=float).reshape(model.dim)
    y = np.asarray(y, dtype=float).reshape(model.dim)
    model.check_domain(x, y)
    A = np.asarray(hessian_fn(model, method)(x, y), dtype=float).reshape(model.dim, model.dim)
    s = np.linalg.svd(A, compute_uv=False)
    return HessianClassification(
        x=x,
        y=y,
        matrix=A,
        determinant=float(np.linalg.det(A)),
        sigma_min=float(s[-1]),
        sigma_max=float(s[0]),
        degenerate=bool(s[-1] <= threshold * s[0]) if s[0] > 0 else True,
        threshold=threshold,
    )


@dataclass
class TwistReport:
    direction: str
    fixed_point: np.ndarray
    samples: int
    collision_tol: float
    separation_floor: float
    collisions: list = field(default_factory=list)  # (i, j, gradient distance, argument distance)

    @property
    def injective_on_sample(self) -> bool:
        return not self.collisions

    def to_dict(self, points=None, limit: int = 200) -> dict:
        rows = []
        for i, j, gd, ad in self.collisions[:limit]:
            item = {"i": i, "j": j, "gradient_distance": gd, "argument_distance": ad}
            if points is not None:
                item["a"] = points[i].tolist()
                item["b"] = points[j].tolist()
            rows.append(item)
        return {
            "direction": self.direction,
            "fixed_point": self.fixed_point.tolist(),
            "samples": self.samples,
            "collision_tol": self.collision_tol,
            "separation_floor": self.separation_floor,
            "collision_count": len(self.collisions),
            "collisions": rows,
            "injective_on_sample": self.injective_on_sample,
            "scope": "on sample",
        }


def _fd_grad(model: CostModel, wrt: str, h: float = 1e-6):
    def grad(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        out = np.empty(x.shape)
        for k in range(model.dim):
            e = np.zeros(model.dim)
            e[k] = h
            if wrt == "x":
                out[..., k] = (model.evaluate(x + e, y) - model.evaluate(x - e, y)) / (2 * h)
            else:
                out[..., k] = (model.evaluate(x, y + e) - model.evaluate(x, y - e)) / (2 * h)
        return out

    return grad


def gradient_map(model: CostModel, direction: str):
    """Return ``(argument -> gradient)`` factory for a twist direction.

    ``x-to-y`` fixes x and maps y to ``D_x c(x, y)``; ``y-to-x`` fixes y and
    maps x to ``D_y c(x, y)``.
    """
    if direction == "x-to-y":
        g = model.grad_x or _fd_grad(model, "x")
        return lambda fixed, args: np.asarray(g(np.broadcast_to(fixed, args.shape), args))
    if direction == "y-to-x":
        g = model.grad_y or _fd_grad(model, "y")
        return lambda fixed, args: np.asarray(g(args, np.broadcast_to(fixed, args.shape)))
    raise InputError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def twist_scan(
    model: CostModel,
    direction: str,
    fixed_point,
    sample_set,
    collision_tol: float = 1e-9,
    separation_floor: float = 1e-6,
) -> TwistReport:
    """Look for distinct arguments with (nearly) equal gradients.

    A collision is a pair of samples at least ``separation_floor`` apart
    whose gradients differ by at most ``collision_tol``. The result only
    speaks about the given sample set.
    """
    if separation_floor <= 0:
        raise InputError("separation_floor must be positive")
    gmap = gradient_map(model, direction)
    fixed = np.asarray(fixed_point, dtype=float).reshape(model.dim)
    pts = np.asarray(sample_set, dtype=float).reshape(-1, model.dim)
    if direction == "x-to-y":
        model.check_domain(fixed, pts)
    else:
        model.check_domain(pts, fixed)
    grads = gmap(fixed, pts)
    pairs = cKDTree(grads).query_pairs(r=collision_tol, output_type="ndarray")
    collisions = []
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        sep = np.linalg.norm(pts[i] - pts[j], axis=1)
        gd = np.linalg.norm(grads[i] - grads[j], axis=1)
        keep = sep >= separation_floor
        order = np.lexsort((j[keep], i[keep]))
        collisions = [
            (int(a), int(b), float(c), float(d))
            for a, b, c, d in zip(i[keep][order], j[keep][order], gd[keep][order], sep[keep][order])
        ]
    return TwistReport(direction, fixed, len(pts), collision_tol, separation_floor, collisions)


def local_injectivity_radius(
    model: CostModel,
    direction: str,
    fixed_point,
    argument,
    r_max: float = 1.0,
    samples: int = 256,
    factor: float = 0.5,
    seed=0,
    r_min: float = 1e-6,
) -> float:
    """Largest radius (by halving from ``r_max``) on which the gradient map is
    expansive: ``|g(a') - g(a)| >= factor * sigma_min * |a' - a|``.

    ``sigma_min`` is the smallest singular value of the mixed Hessian at
    the point. Returns 0.0 if no radius down to ``r_min`` works.
    """
    fixed = np.asarray(fixed_point, dtype=float).reshape(model.dim)
    arg = np.asarray(argument, dtype=float).reshape(model.dim)
    x, y = (fixed, arg) if direction == "x-to-y" else (arg, fixed)
    sigma = classify_point(model, x, y).sigma_min
    gmap = gradient_map(model, direction)
    g0 = gmap(fixed, arg[None, :])[0]
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(samples, model.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scales = rng.uniform(0.05, 1.0, size=(samples, 1))
    box = model.x_box if direction == "y-to-x" else model.y_box
    r = r_max
    while r >= r_min:
        pts = arg + r * scales * dirs
        inside = box.contains(pts)
        if np.all(inside):
            gd = np.linalg.norm(gmap(fixed, pts) - g0, axis=1)
            ad = np.linalg.norm(pts - arg, axis=1)
            if np.all(gd >= factor * sigma * ad):
                return r
        r *= 0.5
    return 0.0
