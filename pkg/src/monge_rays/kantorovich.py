"""Kantorovich relaxation for distance cost, dual potential, and the tight set.

solve_w1 computes an optimal plan (LP on the bipartite support product), then
recovers a globally 1-Lipschitz potential: target duals are extended to every
point by the shortest-path tightening phi(x) <- min_y (d(x,y) + phi(y)), which
is iterated to a fixpoint and normalized to min 0.  The potential certifies
optimality via complementary slackness and generates the tight set Gamma.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from .errors import ClosureInflation, Infeasible, NumericFailure
from .mmspace import MetricMeasureSpace, ProbabilityMeasure, _shortest_path_idx

_LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}
_SLACKNESS_TOL = 1e-8
_CYCLE_TOL = 1e-9
_D2_TOL = 1e-12


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling: parallel index arrays plus masses; cost = sum m*d."""

    sources: np.ndarray
    targets: np.ndarray
    masses: np.ndarray
    cost: float

    def __len__(self):
        return len(self.masses)


@dataclass(frozen=True)
class KantorovichSolution:
    plan: TransportPlan
    potential: np.ndarray
    value: float


@dataclass(frozen=True)
class GammaSet:
    """Ordered tight pairs as a dense boolean matrix, the tolerance band, and
    the potential that generated the set."""

    matrix: np.ndarray
    tol: float
    potential: np.ndarray

    def pairs(self, space: MetricMeasureSpace):
        return [
            (space.points[i], space.points[j]) for i, j in np.argwhere(self.matrix)
        ]

    def contains(self, i: int, j: int) -> bool:
        return bool(self.matrix[i, j])

    @property
    def relation(self) -> np.ndarray:
        """R = Gamma union Gamma^{-1}."""
        return self.matrix | self.matrix.T


def _tighten(D: np.ndarray, phi: np.ndarray, max_iter: int = 50) -> np.ndarray:
    """Iterate phi(x) <- min_y (d(x,y) + phi(y)) to its fixpoint."""
    finite_D = np.where(np.isfinite(D), D, np.inf)
    for _ in range(max_iter):
        new = np.min(finite_D + phi[None, :], axis=1)
        if np.max(np.abs(new - phi)) <= 1e-15:
            return new
        phi = new
    return phi


def solve_w1(
    space: MetricMeasureSpace, mu0: ProbabilityMeasure, mu1: ProbabilityMeasure
) -> KantorovichSolution:
    """Optimal W1 plan plus a 1-Lipschitz potential, normalized to min 0."""
    a, b = mu0.mass, mu1.mass
    if abs(a.sum() - b.sum()) > 1e-12:
        raise Infeasible(f"marginal masses differ: {a.sum()} vs {b.sum()}")
    n = space.n
    D = space.dist

    if np.array_equal(a, b):
        sup = np.flatnonzero(a > 0)
        plan = TransportPlan(sup, sup.copy(), a[sup].copy(), 0.0)
        return KantorovichSolution(plan, np.zeros(n), 0.0)

    si = np.flatnonzero(a > 0)
    ti = np.flatnonzero(b > 0)
    C = D[np.ix_(si, ti)]
    if not np.isfinite(C).all():
        raise Infeasible("infinite transport cost between support components")
    m, k = len(si), len(ti)

    # bipartite transportation LP on the full support product
    var_rows = np.repeat(np.arange(m), k)
    var_cols = np.tile(np.arange(k), m)
    data = np.ones(2 * m * k)
    rows = np.concatenate([var_rows, m + var_cols])
    cols = np.concatenate([np.arange(m * k), np.arange(m * k)])
    A_eq = csr_matrix((data, (rows, cols)), shape=(m + k, m * k))
    b_eq = np.concatenate([a[si], b[ti]])
    res = linprog(
        C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs",
        options=_LP_OPTIONS,
    )
    if not res.success:
        raise NumericFailure(f"LP solver failed: {res.message}")

    x = np.maximum(res.x, 0.0).reshape(m, k)
    keep = x > 1e-14
    src = si[np.nonzero(keep)[0]]
    tgt = ti[np.nonzero(keep)[1]]
    ms = x[keep]
    cost = float(np.sum(ms * D[src, tgt]))

    # duals satisfy u_i + v_j <= c_ij with equality on the support; phi = -v
    # on targets, extended everywhere by tightening
    v = res.eqlin.marginals[m:]
    phi = np.min(D[:, ti] + (-v)[None, :], axis=1)
    phi = _tighten(D, phi)
    phi = phi - phi.min()

    worst = float(np.max(np.abs(phi[src] - phi[tgt] - D[src, tgt]))) if len(ms) else 0.0
    if worst > _SLACKNESS_TOL:
        raise NumericFailure(
            f"complementary slackness violated by {worst:.3e} after tightening"
        )
    plan = TransportPlan(src, tgt, ms, cost)
    return KantorovichSolution(plan, phi, cost)


def build_gamma(
    space: MetricMeasureSpace,
    solution: KantorovichSolution,
    eps_gamma: float | None = None,
) -> GammaSet:
    """All ordered pairs with phi(x) - phi(y) >= d(x,y) - eps_gamma.

    The diagonal is always included.  Default band: 1e-9 + geo_tol.
    """
    tol = (1e-9 + space.geo_tol) if eps_gamma is None else eps_gamma
    phi = solution.potential
    mat = (phi[:, None] - phi[None, :]) >= space.dist - tol
    mat &= np.isfinite(space.dist)
    return GammaSet(mat, tol, phi)


def geodesic_closure(space: MetricMeasureSpace, gamma: GammaSet) -> GammaSet:
    """Close Gamma under discrete geodesics: every ordered pair of nodes along
    shortest_path(x, y) joins the set, for each off-diagonal (x, y) in Gamma.

    Raises ClosureInflation when a closure pair misses the membership band by
    more than tol + geo_tol (inconsistent tolerance choices).
    """
    D = space.dist
    mat = gamma.matrix.copy()
    slack = 2.0 * space.geo_tol
    off = np.argwhere(gamma.matrix & (D > 0))
    for x, y in off:
        # path nodes of (x, y) lie among tb = {z : d(x,z)+d(z,y) <= d(x,y)+tol};
        # when every near-ordered tb pair is already present, the path cannot
        # add anything new and need not be walked.
        tb = np.flatnonzero(D[x] + D[:, y] <= D[x, y] + space.geo_tol)
        if len(tb) > 2:
            dx = D[x][tb]
            need = dx[:, None] <= dx[None, :] + slack
            if (mat[np.ix_(tb, tb)] | ~need).all():
                continue
        path = _shortest_path_idx(space, int(x), int(y))
        idx = np.array(path)
        upper = np.triu(np.ones((len(idx), len(idx)), dtype=bool))
        ii, jj = np.meshgrid(idx, idx, indexing="ij")
        mat[ii[upper], jj[upper]] = True

    phi = gamma.potential
    band = gamma.tol + space.geo_tol
    bad = mat & ((phi[:, None] - phi[None, :]) < D - band)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ClosureInflation(
            f"closure pair ({space.points[i]!r}, {space.points[j]!r}) violates "
            f"the potential identity beyond tol + geo_tol"
        )
    return GammaSet(mat, gamma.tol, phi)


def check_d_monotone(
    space: MetricMeasureSpace,
    pairs,
    max_cycle_len: int = 3,
    n_samples: int = 2000,
    seed: int = 0,
):
    """Cycles over the pair set that strictly lower the total cost.

    Exhaustive for cycle lengths 2 and 3, seeded random sampling above.
    Returns a list of (cycle_pairs, improvement).
    """
    if max_cycle_len < 2:
        raise ValueError("max_cycle_len must be >= 2")
    pairs = list(pairs)
    if not pairs:
        return []
    xs = np.array([space.index(x) for x, _ in pairs])
    ys = np.array([space.index(y) for _, y in pairs])
    D = space.dist
    c = D[xs, ys]
    P = len(pairs)
    out = []

    B = D[np.ix_(xs, ys)]  # B[i, j] = d(x_i, y_j)
    excess = (c[:, None] + c[None, :]) - (B + B.T)
    for i, j in np.argwhere(excess > _CYCLE_TOL):
        if i < j:
            out.append(([pairs[i], pairs[j]], float(excess[i, j])))

    if max_cycle_len >= 3 and P >= 3:
        # reduced costs R[i,j] = d(x_i, y_j) - c_i; a 3-cycle (i,j,k) violates
        # iff R[i,j] + R[j,k] + R[k,i] < -tol
        R = B - c[:, None]
        for i in range(P):
            two = R[i][:, None] + R  # two[j, k]
            jmin = np.argmin(two, axis=0)
            tot = two[jmin, np.arange(P)] + R[:, i]
            for k in np.flatnonzero(tot < -_CYCLE_TOL):
                j = int(jmin[k])
                out.append(
                    ([pairs[i], pairs[j], pairs[int(k)]], float(-tot[k]))
                )

    if max_cycle_len >= 4 and P >= 4:
        rng = np.random.default_rng(seed)
        for L in range(4, max_cycle_len + 1):
            if P < L:
                break
            for _ in range(n_samples):
                sel = rng.choice(P, size=L, replace=False)
                base = c[sel].sum()
                shuf = D[xs[sel], ys[np.roll(sel, -1)]].sum()
                if base > shuf + _CYCLE_TOL:
                    out.append(([pairs[s] for s in sel], float(base - shuf)))
    return out


def _d2_products_ok(x_vals: np.ndarray, y_vals: np.ndarray, tol: float = _D2_TOL) -> bool:
    """(phi(y1)-phi(y0)) * (phi(x1)-phi(x0)) >= -tol for all pair couples."""
    P = len(x_vals)
    if P <= 1:
        return True
    chunk = max(1, int(2.5e6 // P))
    for start in range(0, P, chunk):
        stop = min(P, start + chunk)
        dx = x_vals[None, start:stop] - x_vals[:, None]
        dy = y_vals[None, start:stop] - y_vals[:, None]
        if (dx * dy < -tol).any():
            return False
    return True


def check_d2_monotone_order(pairs, potential) -> bool:
    """True iff the pair set is certified d^2-cyclically monotone through the
    potential: all couples satisfy (phi(y1)-phi(y0))(phi(x1)-phi(x0)) >= -1e-12.

    ``potential`` maps point ids to values (mapping or callable).
    """
    pairs = list(pairs)
    if not pairs:
        return True
    look = potential if callable(potential) else potential.__getitem__
    x_vals = np.array([float(look(x)) for x, _ in pairs])
    y_vals = np.array([float(look(y)) for _, y in pairs])
    return _d2_products_ok(x_vals, y_vals)


# ---------------------------------------------------------------------------
# independent oracle: exhaustive vertex enumeration of the transport polytope
# ---------------------------------------------------------------------------

def exhaustive_w1_cost(
    space: MetricMeasureSpace, mu0: ProbabilityMeasure, mu1: ProbabilityMeasure
) -> float:
    """Enumerate all LP vertices (spanning trees of the bipartite support
    graph) and return the minimal cost.  Exponential; intended for supports
    of about 6 points total."""
    a, b = mu0.mass, mu1.mass
    si = list(np.flatnonzero(a > 0))
    ti = list(np.flatnonzero(b > 0))
    m, k = len(si), len(ti)
    D = space.dist
    cells = [(i, j) for i in range(m) for j in range(k)]
    best = np.inf
    for subset in itertools.combinations(cells, m + k - 1):
        if not _is_spanning_tree(subset, m, k):
            continue
        flow = _tree_flow(subset, a[np.array(si)], b[np.array(ti)], m, k)
        if flow is None:
            continue
        cost = sum(f * D[si[i], ti[j]] for (i, j), f in flow.items())
        best = min(best, cost)
    return float(best)


def _is_spanning_tree(edges, m, k) -> bool:
    parent = list(range(m + k))

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for i, j in edges:
        ru, rv = find(i), find(m + j)
        if ru == rv:
            return False
        parent[ru] = rv
    return True


def _tree_flow(edges, a, b, m, k):
    """Unique flow on a spanning tree; None if any arc would go negative."""
    adj = {u: [] for u in range(m + k)}
    for i, j in edges:
        adj[i].append(m + j)
        adj[m + j].append(i)
    excess = np.concatenate([a, -b]).astype(float)
    order = []
    visited = {0}
    stack = [(0, None)]
    while stack:
        u, parent = stack.pop()
        order.append((u, parent))
        for w in adj[u]:
            if w not in visited:
                visited.add(w)
                stack.append((w, u))
    flow = {}
    for u, parent in reversed(order):
        if parent is None:
            continue
        e = excess[u]
        excess[parent] += e
        excess[u] = 0.0
        if u < m:  # u source, parent target: arc u -> parent carries +e
            f, cell = e, (u, parent - m)
        else:      # u target, parent source: arc parent -> u carries -e
            f, cell = -e, (parent, u - m)
        if f < -1e-12:
            return None
        flow[cell] = flow.get(cell, 0.0) + max(f, 0.0)
    return flow
