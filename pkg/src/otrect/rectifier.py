"""Local Lipschitz-graph certificates for monotone pair sets.

Pipeline (see :func:`rectify`):

1. normalise target coordinates so the surplus ``b = -c`` has identity
   mixed Hessian at the base point;
2. rotate every pair to diagonal coordinates ``u = (x + y)/sqrt(2)``,
   ``v = (y - x)/sqrt(2)``;
3. estimate ``eps = sup ||D2xy b - I||`` (spectral norm) on a product of
   balls around the base point;
4. verify ``(1 + eps)|du|^2 >= (1 - eps)|dv|^2`` for every two pairs in
   the neighbourhood, i.e. ``v`` is a ``sqrt((1+eps)/(1-eps))``-Lipschitz
   function of ``u`` there.

The epsilon estimate is a sampled lower bound of the true supremum, so a
certificate is empirical rather than a proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm, qmc

from .costs import CostModel, hessian_fn, reparametrize_target
from .errors import ConsistencyError, DegeneracyError, DegenerateInputError, DomainError, InputError
from .measures import DEFAULT_MASS_FLOOR, SupportSample, TransportPlan, support
from .monotonicity import DEFAULT_TOL, check_pairwise

SQRT2 = math.sqrt(2.0)
DEGENERACY_THRESHOLD = 1e-10
DUPLICATE_TOL = 1e-12
RATIO_SLACK = 1e-9
CONSERVATIVE_FACTOR = 1.25
DEFAULT_EPS_TARGET = 0.5
DEFAULT_SAMPLES = 1000


def lipschitz_bound(epsilon: float) -> float:
    """``sqrt((1 + eps)/(1 - eps))``; infinite once ``eps >= 1``."""
    if epsilon >= 1.0:
        return math.inf
    return math.sqrt((1.0 + epsilon) / (1.0 - epsilon))


@dataclass
class EpsilonEstimate:
    value: float
    radius: float
    samples: int
    at_x: np.ndarray
    at_y: np.ndarray

    def __float__(self):
        return float(self.value)


@dataclass
class RectifiabilityCertificate:
    verdict: str  # "certified" | "failed" | "degenerate"
    epsilon: float
    lipschitz_bound: float
    pairs_checked: int
    max_ratio: float
    reason: str = ""
    base_point: Optional[tuple] = None
    normalization: Optional[np.ndarray] = None
    neighborhood_radius: Optional[float] = None
    epsilon_sampled: Optional[float] = None
    epsilon_at: Optional[tuple] = None
    conservative: bool = False
    pairs_in_neighborhood: int = 0
    inequality_violations: int = 0
    vertical_pairs: int = 0
    status: str = "empirical"
    radius_trace: list = field(default_factory=list)
    monotonicity: Optional[dict] = None
    u: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)
    point_ratios: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_dict(self) -> dict:
        def vec(a):
            return None if a is None else np.asarray(a, dtype=float).tolist()

        def num(x):
            if x is None:
                return None
            x = float(x)
            return x if math.isfinite(x) else str(x)

        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "status": self.status,
            "base_point": None if self.base_point is None else {"x": vec(self.base_point[0]), "y": vec(self.base_point[1])},
            "normalization": vec(self.normalization),
            "neighborhood_radius": num(self.neighborhood_radius),
            "epsilon": num(self.epsilon),
            "epsilon_sampled": num(self.epsilon_sampled),
            "epsilon_at": None if self.epsilon_at is None else {"x": vec(self.epsilon_at[0]), "y": vec(self.epsilon_at[1])},
            "conservative": self.conservative,
            "lipschitz_bound": num(self.lipschitz_bound),
            "pairs_in_neighborhood": self.pairs_in_neighborhood,
            "pairs_checked": self.pairs_checked,
            "max_ratio": num(self.max_ratio),
            "inequality_violations": self.inequality_violations,
            "vertical_pairs": self.vertical_pairs,
            "radius_trace": [{"radius": num(r), "epsilon": num(e)} for r, e in self.radius_trace],
            "monotonicity": self.monotonicity,
        }


def _surplus_hessian(model: CostModel):
    h = hessian_fn(model)
    return lambda x, y: -np.asarray(h(x, y))


def _singular_values(A):
    return np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)


def is_degenerate(A, threshold: float = DEGENERACY_THRESHOLD) -> bool:
    s = _singular_values(A)
    return bool(s[-1] <= threshold * s[0]) if s[0] > 0 else True


def normalize_frame(model: CostModel, x0, y0, threshold: float = DEGENERACY_THRESHOLD):
    """Frame matrix ``M = D2xy b(x0, y0)`` and the cost in coordinates ``M y``.

    In the new coordinates the surplus has identity mixed Hessian at the
    base point. Raises :class:`DegeneracyError` when ``sigma_min <=
    threshold * sigma_max``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    y0 = np.asarray(y0, dtype=float).reshape(model.dim)
    model.check_domain(x0, y0)
    M = _surplus_hessian(model)(x0, y0).reshape(model.dim, model.dim)
    if is_degenerate(M, threshold):
        raise DegeneracyError(f"mixed Hessian is singular at x={x0.tolist()}, y={y0.tolist()}")
    return M, reparametrize_target(model, M)


def rotate_diagonal(pairs: SupportSample):
    """Diagonal coordinates ``(u, v)`` of pairs already in the normalised frame."""
    u = (pairs.x + pairs.y) / SQRT2
    v = (pairs.y - pairs.x) / SQRT2
    return u, v


def _unit_ball_samples(n: int, count: int, seed) -> np.ndarray:
    """Low-discrepancy points in the product of two unit n-balls, shape (count, 2n)."""
    per_block = 1 if n == 1 else n + 1
    pts = qmc.Halton(d=2 * per_block, scramble=True, seed=seed).random(count)
    pts = np.clip(pts, 1e-12, 1 - 1e-12)
    blocks = []
    for b in range(2):
        p = pts[:, b * per_block:(b + 1) * per_block]
        if n == 1:
            blocks.append(2.0 * p - 1.0)
        else:
            g = norm.ppf(p[:, :n])
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            blocks.append(g * p[:, n:n + 1] ** (1.0 / n))
    return np.concatenate(blocks, axis=1)


def ball_fits(model: CostModel, x0, y0, radius: float) -> bool:
    """Whether the product of radius-balls around (x0, y0) lies in the work boxes.

    For a reparametrised model the target ball is pulled back to the
    original coordinates before the test.
    """
    if not model.x_box.contains_ball(x0, radius):
        return False
    frame = model.meta.get("frame")
    if frame is None:
        return model.y_box.contains_ball(y0, radius)
    base = model.meta["base_model"]
    minv = np.linalg.inv(frame)
    centre = minv @ np.asarray(y0, dtype=float)
    extent = radius * np.linalg.norm(minv, axis=1)
    return bool(np.all(centre - extent >= base.y_box.lower - 1e-12) and np.all(centre + extent <= base.y_box.upper + 1e-12))


def estimate_epsilon(
    model: CostModel,
    x0,
    y0,
    radius: float,
    samples: int = DEFAULT_SAMPLES,
    seed=0,
) -> EpsilonEstimate:
    """Sampled ``max ||D2xy b - I||_2`` over the radius-ball product around (x0, y0).

    ``model`` is used in its own coordinates (normally the output of
    :func:`normalize_frame`). The same unit sample set is scaled by
    ``radius`` for a fixed seed, and the base point is always included.
    """
    if radius <= 0:
        raise InputError("radius must be positive")
    n = model.dim
    x0 = np.asarray(x0, dtype=float).reshape(n)
    y0 = np.asarray(y0, dtype=float).reshape(n)
    if not ball_fits(model, x0, y0, radius):
        raise DomainError(f"neighbourhood of radius {radius:g} leaves the work box")
    unit = _unit_ball_samples(n, max(samples - 1, 1), seed)
    xs = np.vstack([x0, x0 + radius * unit[:, :n]])
    ys = np.vstack([y0, y0 + radius * unit[:, n:]])
    H = _surplus_hessian(model)(xs, ys).reshape(len(xs), n, n)
    dev = np.linalg.norm(H - np.eye(n), ord=2, axis=(1, 2))
    k = int(np.argmax(dev))
    return EpsilonEstimate(float(dev[k]), float(radius), len(xs), xs[k], ys[k])


def _pair_stats(u, v, epsilon, tolerance, chunk=2048):
    m = len(u)
    max_ratio = 0.0
    checked = violations = vertical = 0
    point_ratio = np.zeros(m)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        du = np.linalg.norm(u[start:stop, None, :] - u[None, :, :], axis=-1)
        dv = np.linalg.norm(v[start:stop, None, :] - v[None, :, :], axis=-1)
        rows = np.arange(start, stop)[:, None]
        upper = np.arange(m)[None, :] > rows
        dup = (du < DUPLICATE_TOL) & (dv < DUPLICATE_TOL)
        valid = upper & ~dup
        checked += int(valid.sum())
        vert = valid & (du < DUPLICATE_TOL)
        vertical += int(vert.sum())
        viol = valid & ((1.0 - epsilon) * dv**2 - (1.0 + epsilon) * du**2 > tolerance)
        violations += int(viol.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(du >= DUPLICATE_TOL, dv / du, np.where(dv >= DUPLICATE_TOL, np.inf, 0.0))
        ratio = np.where(~dup & (np.arange(m)[None, :] != rows), ratio, 0.0)
        point_ratio[start:stop] = np.maximum(point_ratio[start:stop], ratio.max(axis=1, initial=0.0))
        both = np.where(upper, ratio, 0.0)
        finite = both[np.isfinite(both)]
        if finite.size:
            max_ratio = max(max_ratio, float(finite.max()))
    return checked, violations, vertical, max_ratio, point_ratio


def certify_lipschitz(uv_pairs, epsilon: float, tolerance: float = DEFAULT_TOL) -> RectifiabilityCertificate:
    """Check the Lipschitz inequality on every two points of ``uv_pairs``.

    ``uv_pairs`` is ``(u, v)`` with arrays of shape (m, n). Pairs closer than
    ``1e-12`` in both coordinates count as duplicates and are skipped; a
    pair with ``du = 0`` but ``dv != 0`` is a hard failure.
    """
    u, v = (np.asarray(a, dtype=float) for a in uv_pairs)
    u = u[:, None] if u.ndim == 1 else u
    v = v[:, None] if v.ndim == 1 else v
    if len(u) < 2:
        raise DegenerateInputError("need at least two pairs to certify")
    bound = lipschitz_bound(epsilon)
    checked, viol, vert, max_ratio, point_ratio = _pair_stats(u, v, epsilon, tolerance)
    cert = RectifiabilityCertificate(
        verdict="certified",
        epsilon=float(epsilon),
        lipschitz_bound=bound,
        pairs_checked=checked,
        max_ratio=max_ratio,
        pairs_in_neighborhood=len(u),
        inequality_violations=viol,
        vertical_pairs=vert,
        u=u,
        v=v,
        point_ratios=point_ratio,
    )
    if epsilon >= 1.0:
        cert.verdict, cert.reason = "failed", "epsilon >= 1: bound vacuous"
    elif vert:
        cert.verdict, cert.reason = "failed", f"{vert} vertical pair(s): du = 0 with dv != 0"
    elif max_ratio > bound * (1.0 + RATIO_SLACK):
        cert.verdict, cert.reason = "failed", f"max ratio {max_ratio:.6g} exceeds bound {bound:.6g}"
    elif viol:
        cert.verdict, cert.reason = "failed", f"{viol} pair(s) violate the Lipschitz inequality"
    return cert


class NearestGraph:
    """Nearest-sample interpolant ``u -> v`` (no Lipschitz extension)."""

    def __init__(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if v.ndim == 1:
            v = v[:, None]
        order = np.lexsort(u.T[::-1])
        u, v = u[order], v[order]
        keep = np.ones(len(u), dtype=bool)
        for k in range(1, len(u)):
            if np.all(np.abs(u[k] - u[k - 1]) < DUPLICATE_TOL):
                if np.any(np.abs(v[k] - v[k - 1]) >= DUPLICATE_TOL):
                    raise ConsistencyError(f"duplicate u={u[k].tolist()} with distinct v values")
                keep[k] = False
        self.u, self.v = u[keep], v[keep]
        if len(self.u) > 1:
            _, _, _, self.lipschitz, _ = _pair_stats(self.u, self.v, 0.0, math.inf)
        else:
            self.lipschitz = 0.0

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        dim = self.u.shape[1]
        single = q.ndim == 0 or (q.ndim == 1 and dim > 1)
        q = q.reshape(-1, dim)
        d = np.linalg.norm(q[:, None, :] - self.u[None, :, :], axis=-1)
        out = self.v[np.argmin(d, axis=1)]
        return out[0] if single else out


def fit_graph(uv_pairs) -> NearestGraph:
    u, v = uv_pairs
    return NearestGraph(u, v)


def _base_candidates(pairs: SupportSample):
    """Pair indices ordered by distance to the mass centroid."""
    w = pairs.mass if pairs.mass is not None else np.ones(len(pairs))
    z = np.hstack([pairs.x, pairs.y])
    centroid = np.average(z, axis=0, weights=w)
    dist = np.linalg.norm(z - centroid, axis=1)
    return np.argsort(dist, kind="stable")


def rectify(
    data,
    model: CostModel,
    base=None,
    radius=None,
    eps_target: float = DEFAULT_EPS_TARGET,
    samples: int = DEFAULT_SAMPLES,
    conservative: bool = False,
    seed=0,
    tolerance: float = DEFAULT_TOL,
    mass_floor: float = DEFAULT_MASS_FLOOR,
) -> RectifiabilityCertificate:
    """Certify that the pairs near a base point lie on a Lipschitz graph over the diagonal.

    Parameters
    ----------
    data : TransportPlan or SupportSample
        A plan (its support is used) or any raw set of pairs.
    base : (x0, y0), optional
        Base point. Defaults to the support pair nearest the mass centroid
        at which the cost is non-degenerate.
    radius : float or None
        Fixed neighbourhood radius. ``None`` starts at a quarter of the
        work-box diameter and halves until the epsilon estimate is at most
        ``eps_target`` (giving up below 1e-3 of the diameter).
    conservative : bool
        Inflate the epsilon estimate by 1.25 before certifying.
    """
    pairs = support(data, mass_floor) if isinstance(data, TransportPlan) else data
    if len(pairs) < 2:
        raise DegenerateInputError("need at least two pairs")
    mono = check_pairwise(pairs, model, tolerance)
    n = model.dim
    H = _surplus_hessian(model)

    def failed(reason, **kw):
        return RectifiabilityCertificate(
            verdict="failed", epsilon=math.nan, lipschitz_bound=math.nan, pairs_checked=0,
            max_ratio=math.nan, reason=reason, monotonicity=mono.to_dict(limit=10), **kw,
        )

    if not mono.passed:
        return failed(f"monotonicity pre-check failed (max defect {mono.max_defect:.3g})")

    if base is not None:
        x0 = np.asarray(base[0], dtype=float).reshape(n)
        y0 = np.asarray(base[1], dtype=float).reshape(n)
        model.check_domain(x0, y0)
        if is_degenerate(H(x0, y0)):
            cert = failed("mixed Hessian singular at the base point", base_point=(x0, y0))
            cert.verdict = "degenerate"
            return cert
    else:
        for k in _base_candidates(pairs):
            if not is_degenerate(H(pairs.x[k], pairs.y[k])):
                x0, y0 = pairs.x[k], pairs.y[k]
                break
        else:
            raise DegeneracyError("mixed Hessian is singular at every support pair")

    M, frame_model = normalize_frame(model, x0, y0)
    yt = pairs.y @ M.T
    yt0 = M @ y0

    diameter = max(model.x_box.diameter, model.y_box.diameter)
    trace = []
    chosen = None
    if radius is not None:
        est = estimate_epsilon(frame_model, x0, yt0, float(radius), samples, seed)
        trace.append((float(radius), est.value))
        chosen = est
    else:
        r = 0.25 * diameter
        floor = 1e-3 * diameter
        while r >= floor:
            if ball_fits(frame_model, x0, yt0, r):
                est = estimate_epsilon(frame_model, x0, yt0, r, samples, seed)
                trace.append((r, est.value))
                eff = est.value * (CONSERVATIVE_FACTOR if conservative else 1.0)
                if eff <= eps_target:
                    chosen = est
                    break
            r *= 0.5
        if chosen is None:
            cert = failed(f"no radius above {floor:.3g} reached epsilon <= {eps_target}", base_point=(x0, y0))
            cert.normalization, cert.radius_trace = M, trace
            return cert

    eps = chosen.value * (CONSERVATIVE_FACTOR if conservative else 1.0)
    r = chosen.radius
    near = (np.linalg.norm(pairs.x - x0, axis=1) <= r) & (np.linalg.norm(yt - yt0, axis=1) <= r)
    lx, ly = pairs.x[near], yt[near]
    u, v = (lx + ly) / SQRT2, (ly - lx) / SQRT2
    if len(lx) >= 2:
        cert = certify_lipschitz((u, v), eps, tolerance)
    else:
        cert = RectifiabilityCertificate(
            verdict="certified" if eps < 1 else "failed", epsilon=eps, lipschitz_bound=lipschitz_bound(eps),
            pairs_checked=0, max_ratio=0.0, reason="fewer than two pairs in the neighbourhood",
            pairs_in_neighborhood=len(lx), u=u, v=v, point_ratios=np.zeros(len(lx)),
        )
    cert.base_point = (x0, y0)
    cert.normalization = M
    cert.neighborhood_radius = r
    cert.epsilon_sampled = chosen.value
    cert.epsilon_at = (chosen.at_x, chosen.at_y)
    cert.conservative = conservative
    cert.radius_trace = trace
    cert.monotonicity = mono.to_dict(limit=10)
    return cert
