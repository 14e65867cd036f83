"""Exact discrete Kantorovich solver and a brute-force oracle.

The exact solver is a network simplex on the bipartite transportation
graph. A basis is a spanning tree of the ``m + n`` nodes (rows first, then
columns). Pricing is Dantzig's most-negative reduced cost. Bases visited
during a run of degenerate pivots are hashed; if one repeats, the solver
is cycling and switches to Bland's smallest-index rule until a pivot moves
mass again.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .costs import CostModel, cost_matrix
from .errors import CertificationFailure, InputError, SolverFailure, UnsupportedOperationError
from .measures import DiscreteMeasure, TransportPlan, permutation_plan

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
CERTIFICATE_TOL = 1e-9
BRUTE_FORCE_MAX = 8
_MASK = (1 << 64) - 1


@dataclass
class SimplexResult:
    rows: np.ndarray
    cols: np.ndarray
    flow: np.ndarray
    u: np.ndarray
    v: np.ndarray
    iterations: int
    degenerate_pivots: int


def _arc_key(k: int) -> int:
    """splitmix64 of the flat arc index: Zobrist key for basis hashing."""
    z = (k + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _least_cost_basis(a, b, C):
    """Matrix-minimum starting basis: exactly m + n - 1 cells forming a tree."""
    m, n = C.shape
    ra = a.astype(float).copy()
    rb = b.astype(float).copy()
    row_open = np.ones(m, dtype=bool)
    col_open = np.ones(n, dtype=bool)
    rows_left, cols_left = m, n
    arcs, flows = [], []
    order = np.argsort(C, axis=None, kind="stable")
    for k in order:
        i, j = divmod(int(k), n)
        if not (row_open[i] and col_open[j]):
            continue
        f = min(ra[i], rb[j])
        arcs.append((i, j))
        flows.append(f)
        ra[i] -= f
        rb[j] -= f
        # cross out exactly one line; keep the last line open until the end
        if rows_left + cols_left == 2:
            break
        if (ra[i] <= rb[j] and rows_left > 1) or cols_left == 1:
            row_open[i] = False
            rows_left -= 1
        else:
            col_open[j] = False
            cols_left -= 1
    if len(arcs) != m + n - 1:
        raise SolverFailure("initial basis is not a spanning tree")
    return arcs, flows


def _tree_flows(arcs, a, b):
    """Unique flows on a spanning tree meeting supplies ``a`` and demands ``b``."""
    m = len(a)
    nodes = m + len(b)
    resid = np.concatenate([a, b]).astype(float)
    adj = [[] for _ in range(nodes)]
    for k, (i, j) in enumerate(arcs):
        adj[i].append(k)
        adj[m + j].append(k)
    deg = np.array([len(x) for x in adj])
    used = np.zeros(len(arcs), dtype=bool)
    flow = np.zeros(len(arcs))
    leaves = deque(int(v) for v in np.flatnonzero(deg == 1))
    while leaves:
        node = leaves.popleft()
        if deg[node] != 1:
            continue
        k = next(k for k in adj[node] if not used[k])
        used[k] = True
        i, j = arcs[k]
        other = m + j if node == i else i
        flow[k] = resid[node]
        resid[other] -= resid[node]
        resid[node] = 0.0
        deg[node] -= 1
        deg[other] -= 1
        if deg[other] == 1:
            leaves.append(other)
    return flow


def _potentials(arcs, C, m, n):
    """Solve u_i + v_j = C_ij on tree arcs with u_0 = 0."""
    adj = [[] for _ in range(m + n)]
    for i, j in arcs:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if np.isnan(pot[nb]):
                if node < m:
                    pot[nb] = C[node, nb - m] - pot[node]
                else:
                    pot[nb] = C[nb, node - m] - pot[node]
                queue.append(nb)
    if np.any(np.isnan(pot)):
        raise SolverFailure("basis tree is disconnected")
    return pot[:m], pot[m:]


class _Tree:
    """Rooted spanning tree with parent/depth arrays and node potentials."""

    def __init__(self, arcs, C, m, n):
        self.m, self.n = m, n
        self.C = C
        self.adj = [set() for _ in range(m + n)]
        for i, j in arcs:
            self.adj[i].add(m + j)
            self.adj[m + j].add(i)
        self.parent = np.full(m + n, -1, dtype=np.int64)
        self.depth = np.zeros(m + n, dtype=np.int64)
        u, v = _potentials(arcs, C, m, n)
        self.pot = np.concatenate([u, v])
        self._hang(0, -1, None)

    def _hang(self, start, attach, members):
        """BFS from ``start`` (restricted to ``members``), hanging it below ``attach``."""
        parent, depth, adj = self.parent, self.depth, self.adj
        parent[start] = attach
        depth[start] = 0 if attach < 0 else depth[attach] + 1
        queue = deque([start])
        while queue:
            node = queue.popleft()
            d = depth[node] + 1
            for nb in adj[node]:
                if nb == parent[node] or (members is not None and nb not in members):
                    continue
                parent[nb] = node
                depth[nb] = d
                queue.append(nb)

    def path(self, a, b):
        """Node sequence from ``a`` to ``b``."""
        left, right = [a], [b]
        parent, depth = self.parent, self.depth
        while a != b:
            if depth[a] >= depth[b]:
                a = int(parent[a])
                left.append(a)
            else:
                b = int(parent[b])
                right.append(b)
        return left + right[-2::-1]

    def subtree(self, top):
        out = [top]
        stack = [top]
        parent, adj = self.parent, self.adj
        while stack:
            node = stack.pop()
            for nb in adj[node]:
                if nb != parent[node]:
                    out.append(nb)
                    stack.append(nb)
        return out

    def pivot(self, enter, leave):
        """Swap tree arc ``leave`` for ``enter`` (both given as (row, col))."""
        m = self.m
        ei, ej = enter[0], m + enter[1]
        li, lj = leave[0], m + leave[1]
        child = lj if self.parent[lj] == li else li
        cut = self.subtree(child)
        members = set(cut)
        red = self.C[enter[0], enter[1]] - self.pot[ei] - self.pot[ej]
        self.adj[li].discard(lj)
        self.adj[lj].discard(li)
        self.adj[ei].add(ej)
        self.adj[ej].add(ei)
        if ei in members:
            start, attach, d = ei, ej, red
        else:
            start, attach, d = ej, ei, -red
        idx = np.fromiter(cut, dtype=np.int64, count=len(cut))
        self.pot[idx[idx < m]] += d
        self.pot[idx[idx >= m]] -= d
        self._hang(start, attach, members)


def network_simplex(
    a, b, C, max_iter: int | None = None, tol: float | None = None, pricing: str = "dantzig"
) -> SimplexResult:
    """Solve ``min <C, G>`` over couplings of ``a`` and ``b`` (equal totals).

    ``pricing="bland"`` uses the smallest-index rule throughout.
    Returns the final basis with its flows and dual potentials.
    """
    if pricing not in ("dantzig", "bland"):
        raise InputError(f"unknown pricing rule {pricing!r}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.max(np.abs(C))))
    if max_iter is None:
        max_iter = 50 * (m + n) ** 2 + 1000
    flow_tol = 1e-15 * max(1.0, float(a.sum()))

    arcs, _ = _least_cost_basis(a, b, C)
    flows = dict(zip(arcs, _tree_flows(arcs, a, b)))
    tree = _Tree(arcs, C, m, n)

    iterations = 0
    degenerate_total = 0
    always_bland = pricing == "bland"
    bland = always_bland
    key = 0
    for i, j in arcs:
        key ^= _arc_key(i * n + j)
    seen = {key}
    while True:
        R = C - tree.pot[:m, None] - tree.pot[None, m:]
        if bland:
            neg = np.flatnonzero(R.ravel() < -tol)
            k = int(neg[0]) if neg.size else -1
        else:
            k = int(np.argmin(R))
            if R.flat[k] >= -tol:
                k = -1
        if k < 0:
            # confirm with potentials recomputed from scratch (no drift)
            u, v = _potentials(flows.keys(), C, m, n)
            tree.pot = np.concatenate([u, v])
            if (C - u[:, None] - v[None, :]).min() >= -tol:
                break
            continue
        iterations += 1
        if iterations > max_iter:
            raise SolverFailure(f"pivot limit {max_iter} exceeded")
        ei, ej = divmod(k, n)
        path = tree.path(m + ej, ei)
        # cycle: (ei, ej) gains; arcs along the path alternate lose / gain
        minus, plus = [], []
        for step, (p, q) in enumerate(zip(path[:-1], path[1:])):
            arc = (q, p - m) if p >= m else (p, q - m)
            (minus if step % 2 == 0 else plus).append(arc)
        theta = min(flows[arc] for arc in minus)
        leaving = min((arc for arc in minus if flows[arc] <= theta + flow_tol), key=lambda t: t[0] * n + t[1])
        theta = flows[leaving]
        for arc in minus:
            flows[arc] -= theta
        for arc in plus:
            flows[arc] += theta
        del flows[leaving]
        flows[(ei, ej)] = theta
        tree.pivot((ei, ej), leaving)
        key ^= _arc_key(leaving[0] * n + leaving[1]) ^ _arc_key(k)

        if theta <= flow_tol:
            degenerate_total += 1
            if key in seen:
                bland = True
            seen.add(key)
        else:
            seen = {key}
            bland = always_bland

    arcs = list(flows.keys())
    exact = _tree_flows(arcs, a, b)
    if np.any(exact < -1e-12):
        raise SolverFailure("final basis is infeasible")
    exact = np.clip(exact, 0.0, None)
    rows = np.array([i for i, _ in arcs], dtype=np.int64)
    cols = np.array([j for _, j in arcs], dtype=np.int64)
    log.debug("network simplex: %d pivots (%d degenerate)", iterations, degenerate_total)
    return SimplexResult(rows, cols, exact, u, v, iterations, degenerate_total)


def _check_feasible(source: DiscreteMeasure, target: DiscreteMeasure):
    if source.dim != target.dim:
        raise InputError("source and target live in different dimensions")
    sa, sb = source.total, target.total
    if abs(sa - sb) > FEASIBILITY_TOL:
        raise InputError(f"infeasible marginals: total masses {sa:.12g} and {sb:.12g} differ")
    return sa, sb


def solve_exact(source: DiscreteMeasure, target: DiscreteMeasure, model: CostModel) -> TransportPlan:
    """Optimal plan of the discrete Kantorovich problem.

    The returned plan carries ``potentials = (phi, psi)`` with
    ``phi_i + psi_j <= c(x_i, y_j)``, equality on every support pair and
    ``phi_0 = 0``. The optimum is certified to ``CERTIFICATE_TOL`` before
    returning; a failed certificate raises :class:`SolverFailure`.
    """
    sa, sb = _check_feasible(source, target)
    C = cost_matrix(model, source.points, target.points)
    if not np.all(np.isfinite(C)):
        raise InputError("cost is not finite on every pair")
    a = source.weights
    b = target.weights * (sa / sb)
    res = network_simplex(a, b, C)

    R = C - res.u[:, None] - res.v[None, :]
    if R.min() < -CERTIFICATE_TOL:
        raise SolverFailure(f"dual infeasibility {R.min():.3g} at termination")
    if np.max(np.abs(R[res.rows, res.cols])) > CERTIFICATE_TOL:
        raise SolverFailure("complementary slackness violated on the basis")
    return TransportPlan(
        source,
        target,
        res.rows,
        res.cols,
        res.flow,
        potentials=(res.u, res.v),
        validate=abs(sa - sb) <= 1e-13,
    )


def brute_force(source: DiscreteMeasure, target: DiscreteMeasure, model: CostModel) -> TransportPlan:
    """Best permutation plan by exhaustive enumeration.

    Only for equal-size uniform measures with at most 8 atoms; ties go to
    the lexicographically smallest permutation.
    """
    N = source.size
    if target.size != N or N > BRUTE_FORCE_MAX:
        raise UnsupportedOperationError(f"brute force needs equal sizes <= {BRUTE_FORCE_MAX}")
    if not (source.is_uniform() and target.is_uniform()):
        raise UnsupportedOperationError("brute force needs uniform weights")
    C = cost_matrix(model, source.points, target.points)
    perms = np.array(list(itertools.permutations(range(N))), dtype=np.int64)
    totals = C[np.arange(N), perms].sum(axis=1)
    best = perms[int(np.argmin(totals))]
    return permutation_plan(source, target, best)


def _shortest_from(W, root, eps):
    """Bellman-Ford distances from ``root`` over the dense weight matrix ``W``.

    Returns ``None`` when a negative cycle is reachable.
    """
    m = len(W)
    dist = np.full(m, np.inf)
    dist[root] = 0.0
    active = np.zeros(m, dtype=bool)
    active[root] = True
    for _ in range(m + 1):
        idx = np.flatnonzero(active & np.isfinite(dist))
        if idx.size == 0:
            return dist
        cand = np.min(dist[idx, None] + W[idx], axis=0)
        improved = cand < dist - eps
        if not np.any(improved):
            return dist
        dist = np.where(improved, cand, dist)
        active = improved
    return None


def dual_potentials(plan: TransportPlan, model: CostModel, tol: float = CERTIFICATE_TOL):
    """Potentials certifying ``plan`` as optimal, built from its support alone.

    Feasible ``phi`` are exactly the solutions of ``phi_i - phi_k <= W[k, i]``
    on the support graph (cyclical monotonicity). Shortest paths from and to
    a root give the largest and smallest such ``phi``; their midpoint is
    returned, so symmetric instances get symmetric potentials. ``psi`` is the
    c-transform ``psi_j = min_i c(x_i, y_j) - phi_i``. Raises
    :class:`CertificationFailure` if the support admits an improving cycle
    or complementary slackness fails beyond ``tol``.
    """
    C = cost_matrix(model, plan.source.points, plan.target.points)
    m = plan.source.size
    scale = max(1.0, float(np.max(np.abs(C))))
    # edge k -> i of weight min over support targets j of k: C[i, j] - C[k, j]
    W = np.full((m, m), np.inf)
    for k, j in zip(plan.rows, plan.cols):
        np.minimum(W[k], C[:, j] - C[k, j], out=W[k])
    supported = np.unique(plan.rows)
    if supported.size == 0:
        raise CertificationFailure("plan has empty support")
    root = int(supported[0])
    eps = 1e-14 * scale
    upper = _shortest_from(W, root, eps)
    if upper is None or upper[root] < -tol:
        raise CertificationFailure("support admits a cost-reducing cycle: plan is not optimal")
    if not np.all(np.isfinite(upper)):
        raise CertificationFailure("potential undefined for some source atoms")
    lower = _shortest_from(W.T, root, eps)
    if lower is not None and np.all(np.isfinite(lower)):
        dist = 0.5 * (upper - lower)
    else:
        dist = upper
    phi = dist - dist[0]
    psi = np.min(C - phi[:, None], axis=0)
    slack = C[plan.rows, plan.cols] - phi[plan.rows] - psi[plan.cols]
    if np.max(np.abs(slack)) > tol:
        raise CertificationFailure(f"complementary slackness fails by {np.max(np.abs(slack)):.3g}")
    return phi, psi


def dual_value(plan_or_measures, phi, psi) -> float:
    if isinstance(plan_or_measures, TransportPlan):
        src, tgt = plan_or_measures.source, plan_or_measures.target
    else:
        src, tgt = plan_or_measures
    return float(np.dot(phi, src.weights) + np.dot(psi, tgt.weights))
