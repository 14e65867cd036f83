"""Cost models c(x, y), their derivatives, and the built-in costs.

All built-in costs are vectorised: ``evaluate(x, y)`` accepts arrays whose
last axis holds the coordinates and broadcasts over the leading axes.
The surplus is always ``b = -c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, InputError, UnsupportedOperationError

ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEFAULT_FD_STEP = 1e-4


@dataclass(frozen=True)
class WorkBox:
    """Axis-aligned box where evaluation and sampling are permitted."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InputError("box bounds must be vectors of equal length")
        if not np.all(lo < hi):
            raise InputError(f"box requires lower < upper componentwise, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, points, margin: float = 0.0, atol: float = 1e-12) -> np.ndarray:
        """Boolean mask of points (last axis = coordinates) inside the box."""
        p = np.asarray(points, dtype=float)
        lo = self.lower + margin - atol
        hi = self.upper - margin + atol
        return np.all((p >= lo) & (p <= hi), axis=-1)

    def contains_ball(self, center, radius: float) -> bool:
        c = np.asarray(center, dtype=float)
        return bool(np.all(c - radius >= self.lower - 1e-12) and np.all(c + radius <= self.upper + 1e-12))

    def grid(self, m: int, endpoint: bool = True) -> np.ndarray:
        """Tensor grid with ``m`` points per axis, shape (m**dim, dim)."""
        axes = [np.linspace(lo, hi, m, endpoint=endpoint) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))


def _box(lower, upper) -> WorkBox:
    return WorkBox(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))


@dataclass(frozen=True)
class CostModel:
    """A cost function on pairs of n-vectors.

    Parameters
    ----------
    dim : int
        Dimension n shared by both marginals.
    evaluate : callable
        ``evaluate(x, y) -> c(x, y)``.
    grad_x, grad_y : callable, optional
        Analytic first derivatives, same calling convention, returning
        arrays with a trailing axis of length n.
    mixed_hessian : callable, optional
        Analytic matrix of ``d^2 c / dx_i dy_j``, trailing shape (n, n).
    label : str
        Identifier used in reports.
    x_box, y_box : WorkBox
        Regions where the first and second arguments may be evaluated.
    vectorized : bool
        Whether the callables broadcast over leading axes.
    """

    dim: int
    evaluate: ArrayFn
    label: str
    x_box: WorkBox
    y_box: WorkBox
    grad_x: Optional[ArrayFn] = None
    grad_y: Optional[ArrayFn] = None
    mixed_hessian: Optional[ArrayFn] = None
    vectorized: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise InputError("cost dimension must be positive")
        if self.x_box.dim != self.dim or self.y_box.dim != self.dim:
            raise InputError("work boxes must match the cost dimension")

    def check_domain(self, x, y, margin: float = 0.0) -> None:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape[-1] != self.dim or y.shape[-1] != self.dim:
            raise InputError(f"{self.label}: expected {self.dim}-vectors")
        bad_x = ~self.x_box.contains(x, margin)
        if np.any(bad_x):
            where = x.reshape(-1, self.dim)[np.flatnonzero(bad_x.ravel())[0]]
            raise DomainError(f"{self.label}: x={where.tolist()} outside work box")
        bad_y = ~self.y_box.contains(y, margin)
        if np.any(bad_y):
            where = y.reshape(-1, self.dim)[np.flatnonzero(bad_y.ravel())[0]]
            raise DomainError(f"{self.label}: y={where.tolist()} outside work box")

    def __call__(self, x, y):
        return self.evaluate(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def eval_cost(model: CostModel, x, y) -> float:
    """Return c(x, y) for one pair, checking the work box."""
    x = np.asarray(x, dtype=float).reshape(model.dim)
    y = np.asarray(y, dtype=float).reshape(model.dim)
    model.check_domain(x, y)
    return float(model.evaluate(x, y))


def cost_matrix(model: CostModel, xs, ys, check: bool = True) -> np.ndarray:
    """Dense matrix ``C[i, j] = c(xs[i], ys[j])``."""
    xs = np.asarray(xs, dtype=float).reshape(-1, model.dim)
    ys = np.asarray(ys, dtype=float).reshape(-1, model.dim)
    if check:
        model.check_domain(xs, ys)
    if model.vectorized:
        out = np.asarray(model.evaluate(xs[:, None, :], ys[None, :, :]), dtype=float)
        return np.broadcast_to(out, (len(xs), len(ys))).copy()
    return np.array([[float(model.evaluate(x, y)) for y in ys] for x in xs])


def pair_costs(model: CostModel, xs, ys) -> np.ndarray:
    """``c(xs[k], ys[k])`` for aligned arrays of points."""
    xs = np.asarray(xs, dtype=float).reshape(-1, model.dim)
    ys = np.asarray(ys, dtype=float).reshape(-1, model.dim)
    if model.vectorized:
        return np.broadcast_to(np.asarray(model.evaluate(xs, ys), dtype=float), (len(xs),)).copy()
    return np.array([float(model.evaluate(x, y)) for x, y in zip(xs, ys)])


def fd_mixed_hessian(model: CostModel, x, y, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference mixed Hessian, one 4-point stencil per entry."""
    n = model.dim
    x = np.asarray(x, dtype=float).reshape(n)
    y = np.asarray(y, dtype=float).reshape(n)
    eye = np.eye(n) * h
    # xs[i, s] = x + s*h*e_i, ys[j, t] = y + t*h*e_j, s, t in {+1, -1}
    xs = np.stack([x + eye, x - eye], axis=1)  # (n, 2, n)
    ys = np.stack([y + eye, y - eye], axis=1)
    if model.vectorized:
        vals = np.asarray(model.evaluate(xs[:, :, None, None, :], ys[None, None, :, :, :]), dtype=float)
    else:
        vals = np.empty((n, 2, n, 2))
        for i in range(n):
            for s in range(2):
                for j in range(n):
                    for t in range(2):
                        vals[i, s, j, t] = model.evaluate(xs[i, s], ys[j, t])
    # vals axes: (i, s, j, t)
    return (vals[:, 0, :, 0] - vals[:, 0, :, 1] - vals[:, 1, :, 0] + vals[:, 1, :, 1]) / (4.0 * h * h)


def mixed_hessian(model: CostModel, x, y, method: str = "analytic", h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Matrix of ``d^2 c / dx_i dy_j`` at (x, y).

    ``method`` is ``"analytic"`` or ``"finite-difference"``. The finite
    difference path requires the point to sit at least ``h`` inside the
    work box.
    """
    x = np.asarray(x, dtype=float).reshape(model.dim)
    y = np.asarray(y, dtype=float).reshape(model.dim)
    if method == "analytic":
        if model.mixed_hessian is None:
            raise UnsupportedOperationError(f"{model.label} has no analytic mixed Hessian")
        model.check_domain(x, y)
        return np.asarray(model.mixed_hessian(x, y), dtype=float).reshape(model.dim, model.dim)
    if method in ("finite-difference", "fd"):
        model.check_domain(x, y, margin=h)
        return fd_mixed_hessian(model, x, y, h)
    raise InputError(f"unknown Hessian method {method!r}")


def hessian_fn(model: CostModel, method: str = "auto", h: float = DEFAULT_FD_STEP):
    """Return a callable (x, y) -> mixed Hessian, no domain checks.

    ``auto`` picks the analytic Hessian when present.
    """
    if method == "auto":
        method = "analytic" if model.mixed_hessian is not None else "finite-difference"
    if method == "analytic":
        if model.mixed_hessian is None:
            raise UnsupportedOperationError(f"{model.label} has no analytic mixed Hessian")
        return lambda x, y: np.asarray(model.mixed_hessian(x, y), dtype=float)

    def fd(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim == 1 and y.ndim == 1:
            return fd_mixed_hessian(model, x, y, h)
        x, y = np.broadcast_arrays(x, y)
        flat = [fd_mixed_hessian(model, a, b, h) for a, b in zip(x.reshape(-1, model.dim), y.reshape(-1, model.dim))]
        return np.asarray(flat).reshape(x.shape[:-1] + (model.dim, model.dim))

    return fd


# ---------------------------------------------------------------------------
# built-in costs


def _identity_hessian(sign: float, n: int):
    def hess(x, y):
        lead = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
        return np.broadcast_to(sign * np.eye(n), lead + (n, n)).copy()

    return hess


def bilinear_cost(dim: int = 2, scale: float = 1.0, box=(-1.0, 1.0), label: Optional[str] = None) -> CostModel:
    """``c(x, y) = -scale * x.y``, i.e. surplus ``b = scale * x.y``."""
    lo, hi = box
    wb = _box(np.full(dim, lo), np.full(dim, hi))
    return CostModel(
        dim=dim,
        evaluate=lambda x, y: -scale * np.sum(x * y, axis=-1),
        grad_x=lambda x, y: -scale * np.broadcast_to(y, np.broadcast_shapes(np.shape(x), np.shape(y))),
        grad_y=lambda x, y: -scale * np.broadcast_to(x, np.broadcast_shapes(np.shape(x), np.shape(y))),
        mixed_hessian=_identity_hessian(-scale, dim),
        label=label or ("bilinear" if scale == 1.0 else f"bilinear*{scale:g}"),
        x_box=wb,
        y_box=wb,
    )


def quadratic_cost(dim: int = 2, box=(-1.0, 1.0)) -> CostModel:
    """``c(x, y) = |x - y|^2 / 2``."""
    lo, hi = box
    wb = _box(np.full(dim, lo), np.full(dim, hi))
    return CostModel(
        dim=dim,
        evaluate=lambda x, y: 0.5 * np.sum((x - y) ** 2, axis=-1),
        grad_x=lambda x, y: x - y,
        grad_y=lambda x, y: y - x,
        mixed_hessian=_identity_hessian(-1.0, dim),
        label="quadratic",
        x_box=wb,
        y_box=wb,
    )


def _ex31_eval(x, y):
    e = np.exp(x[..., 0] + y[..., 0])
    return e * np.cos(x[..., 1] - y[..., 1]) + 0.5 * np.exp(2 * x[..., 0]) + 0.5 * np.exp(2 * y[..., 0])


def _ex31_grad_x(x, y):
    e = np.exp(x[..., 0] + y[..., 0])
    d = x[..., 1] - y[..., 1]
    return np.stack([e * np.cos(d) + np.exp(2 * x[..., 0]), -e * np.sin(d)], axis=-1)


def _ex31_grad_y(x, y):
    e = np.exp(x[..., 0] + y[..., 0])
    d = x[..., 1] - y[..., 1]
    return np.stack([e * np.cos(d) + np.exp(2 * y[..., 0]), e * np.sin(d)], axis=-1)


def _ex31_hess(x, y):
    e = np.exp(x[..., 0] + y[..., 0])
    d = x[..., 1] - y[..., 1]
    ec, es = e * np.cos(d), e * np.sin(d)
    return np.stack([np.stack([ec, es], axis=-1), np.stack([-es, ec], axis=-1)], axis=-2)


def example31_cost() -> CostModel:
    """Cylinder-type cost: non-degenerate everywhere, not twisted.

    ``c(x, y) = exp(x1 + y1) cos(x2 - y2) + exp(2 x1)/2 + exp(2 y1)/2``.
    Work boxes cover the strip 0 <= x1 <= 1, 0 <= x2 <= 4 pi and the
    images of the three equality sheets (y2 up to x2 + 5 pi), with margin.
    """
    return CostModel(
        dim=2,
        evaluate=_ex31_eval,
        grad_x=_ex31_grad_x,
        grad_y=_ex31_grad_y,
        mixed_hessian=_ex31_hess,
        label="example31",
        x_box=_box([-0.5, -np.pi], [1.5, 5 * np.pi]),
        y_box=_box([-0.5, -np.pi], [1.5, 10 * np.pi]),
    )


def _ex32_eval(x, y):
    ey = np.exp(y[..., 1])
    lin = x[..., 0] * np.cos(y[..., 0]) + x[..., 1] * np.sin(y[..., 0])
    return -lin * ey + 0.5 * ey**2 + 0.5 * (x[..., 0] ** 2 + x[..., 1] ** 2)


def _ex32_grad_x(x, y):
    ey = np.exp(y[..., 1])
    return np.stack([-np.cos(y[..., 0]) * ey + x[..., 0], -np.sin(y[..., 0]) * ey + x[..., 1]], axis=-1)


def _ex32_grad_y(x, y):
    ey = np.exp(y[..., 1])
    s, c = np.sin(y[..., 0]), np.cos(y[..., 0])
    g1 = (x[..., 0] * s - x[..., 1] * c) * ey
    g2 = -(x[..., 0] * c + x[..., 1] * s) * ey + ey**2
    return np.stack([g1, g2], axis=-1)


def _ex32_hess(x, y):
    x, y = np.broadcast_arrays(x, y)
    ey = np.exp(y[..., 1])
    s, c = np.sin(y[..., 0]) * ey, np.cos(y[..., 0]) * ey
    return np.stack([np.stack([s, -c], axis=-1), np.stack([-c, -s], axis=-1)], axis=-2)


def example32_cost() -> CostModel:
    """Cost twisted in y -> x but not in x -> y.

    ``c(x, y) = -(x1 cos y1 + x2 sin y1) exp(y2) + exp(2 y2)/2 + |x|^2/2``.
    The first component of ``grad_y`` is ``(x1 sin y1 - x2 cos y1) exp(y2)``.
    """
    return CostModel(
        dim=2,
        evaluate=_ex32_eval,
        grad_x=_ex32_grad_x,
        grad_y=_ex32_grad_y,
        mixed_hessian=_ex32_hess,
        label="example32",
        x_box=_box([-3.0, -3.0], [3.0, 3.0]),
        y_box=_box([-np.pi, -1.0], [5 * np.pi, 1.0]),
    )


BUILTIN_COSTS = ("bilinear", "quadratic", "example31", "example32")


def builtin_cost(name: str, dim: Optional[int] = None, box: Optional[tuple] = None) -> CostModel:
    """Look up a built-in cost by name.

    ``bilinear`` and ``quadratic`` accept any ``dim`` (default 2) and an
    optional ``(lo, hi)`` work box (default ``(-1, 1)``); the two worked
    examples are two-dimensional only and have fixed boxes.
    """
    key = name.strip().lower().replace("-", "").replace("_", "").replace(".", "")
    box = (-1.0, 1.0) if box is None else (float(box[0]), float(box[1]))
    if key == "bilinear":
        return bilinear_cost(dim or 2, box=box)
    if key == "quadratic":
        return quadratic_cost(dim or 2, box=box)
    if key in ("example31", "ex31"):
        if dim not in (None, 2):
            raise InputError("example31 is defined for dim=2 only")
        return example31_cost()
    if key in ("example32", "ex32"):
        if dim not in (None, 2):
            raise InputError("example32 is defined for dim=2 only")
        return example32_cost()
    raise InputError(f"unknown cost {name!r}; available: {', '.join(BUILTIN_COSTS)}")


# ---------------------------------------------------------------------------
# derived models


def swap_roles(model: CostModel) -> CostModel:
    """The cost ``c'(x, y) = c(y, x)``; its mixed Hessian is the transpose."""

    def ev(x, y):
        return model.evaluate(y, x)

    hess = None
    if model.mixed_hessian is not None:
        hess = lambda x, y: np.swapaxes(np.asarray(model.mixed_hessian(y, x)), -1, -2)  # noqa: E731
    gx = (lambda x, y: model.grad_y(y, x)) if model.grad_y is not None else None
    gy = (lambda x, y: model.grad_x(y, x)) if model.grad_x is not None else None
    return replace(
        model,
        evaluate=ev,
        grad_x=gx,
        grad_y=gy,
        mixed_hessian=hess,
        label=f"swap({model.label})",
        x_box=model.y_box,
        y_box=model.x_box,
    )


def reparametrize_target(model: CostModel, matrix) -> CostModel:
    """Express ``model`` in target coordinates ``y' = matrix @ y``.

    The returned model evaluates ``c(x, matrix^{-1} y')``; its mixed Hessian
    is ``D2xy c . matrix^{-1}``. Its ``y_box`` is the bounding box of the
    image of the original target box.
    """
    m = np.asarray(matrix, dtype=float).reshape(model.dim, model.dim)
    minv = np.linalg.inv(m)

    def back(yt):
        return np.einsum("ij,...j->...i", minv, yt)

    def ev(x, yt):
        return model.evaluate(x, back(yt))

    hess = None
    if model.mixed_hessian is not None:
        hess = lambda x, yt: np.asarray(model.mixed_hessian(x, back(yt))) @ minv  # noqa: E731
    gx = (lambda x, yt: model.grad_x(x, back(yt))) if model.grad_x is not None else None
    gy = None
    if model.grad_y is not None:
        gy = lambda x, yt: np.einsum("ji,...j->...i", minv, model.grad_y(x, back(yt)))  # noqa: E731

    lo, hi = model.y_box.lower, model.y_box.upper
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(model.dim, -1).T
    image = corners @ m.T
    ybox = WorkBox(image.min(axis=0) - 1e-9, image.max(axis=0) + 1e-9)
    return replace(
        model,
        evaluate=ev,
        grad_x=gx,
        grad_y=gy,
        mixed_hessian=hess,
        label=f"{model.label}@frame",
        y_box=ybox,
        meta={**model.meta, "frame": m, "base_model": model},
    )


def fd_mixed_hessian_extrapolated(model: CostModel, x, y, h: float = 5e-3) -> np.ndarray:
    """Richardson-extrapolated central differences, error O(h^4)."""
    coarse = fd_mixed_hessian(model, x, y, h)
    fine = fd_mixed_hessian(model, x, y, 0.5 * h)
    return (4.0 * fine - coarse) / 3.0
