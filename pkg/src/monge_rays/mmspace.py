"""Finite geodesic metric measure spaces, measures on them, and model generators.

A space is a finite point set with a metric, nonnegative reference weights and
a geodesic structure.  Two input modes are supported: a full distance matrix
(``matrix``), or a weighted graph whose distances are completed by all-pairs
shortest paths (``graph``).  The graph mode is the natural representation for
sampled manifolds: path metrics make distance additivity along discrete
geodesics exact, which the downstream ray decomposition relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import SphericalVoronoi

from .errors import (
    AsymmetricDistance,
    BadResolution,
    Disconnected,
    InputError,
    TriangleViolation,
    ZeroMeasure,
)

DENSE_LIMIT = 5000
# full O(n^3) triangle validation above this size is replaced by seeded sampling
FULL_VALIDATION_LIMIT = 1500
_TRI_SLACK = 1e-12


@dataclass(frozen=True)
class DiscreteGeodesic:
    """Constant-speed discrete geodesic: nodes, s-parameters in [0,1], length."""

    nodes: tuple
    params: tuple
    length: float


@dataclass
class MetricMeasureSpace:
    """Immutable after construction; all operations are pure functions of it."""

    points: list
    dist: np.ndarray
    weights: np.ndarray
    geo_tol: float
    mode: str = "matrix"
    meta: dict = field(default_factory=dict)
    _index: dict = field(default_factory=dict, repr=False)
    _rank: np.ndarray = field(default=None, repr=False)
    _adjacency: list = field(default=None, repr=False)

    def __post_init__(self):
        self._index = {p: i for i, p in enumerate(self.points)}
        order = sorted(range(len(self.points)), key=lambda i: self.points[i])
        rank = np.empty(len(self.points), dtype=np.int64)
        rank[order] = np.arange(len(self.points))
        self._rank = rank

    @property
    def n(self) -> int:
        return len(self.points)

    def index(self, point) -> int:
        try:
            return self._index[point]
        except KeyError:
            raise InputError(f"unknown point id {point!r}") from None

    def rank(self, i: int) -> int:
        """Position of point i in the sorted-id order (deterministic ties)."""
        return int(self._rank[i])

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def adjacency(self) -> list:
        """Neighbor lists (index -> sorted neighbor indices) of the geodesic graph.

        Graph mode keeps the input edges.  Matrix mode derives the graph by
        pruning every pair that admits a metrically between third point within
        geo_tol; shortest paths in this graph realize discrete geodesics.
        """
        if self._adjacency is None:
            self._adjacency = self._derive_adjacency()
        return self._adjacency

    def _derive_adjacency(self) -> list:
        n, D = self.n, self.dist
        adj = [[] for _ in range(n)]
        if self.mode == "graph":
            for i, j, _w in self.meta["edges"]:
                adj[i].append(j)
                adj[j].append(i)
            return [sorted(set(a)) for a in adj]
        tol = self.geo_tol
        for i in range(n):
            # minimal through-cost per endpoint j over witnesses z with both
            # legs strictly positive
            legs = D[i][:, None] + D
            legs[D[i] <= 0.0, :] = np.inf   # z == i or a duplicate of i
            through = np.where(D <= 0.0, np.inf, legs).min(axis=0)
            keep = (D[i] > 0.0) & np.isfinite(D[i]) & (through > D[i] + tol)
            adj[i] = list(np.flatnonzero(keep))
        return adj


@dataclass(frozen=True)
class ProbabilityMeasure:
    """Nonnegative mass per point, total mass 1."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if (m < 0).any():
            raise InputError("negative mass")
        if abs(m.sum() - 1.0) > 1e-9:
            raise InputError(f"mass sums to {m.sum()!r}, expected 1")
        object.__setattr__(self, "mass", m)

    @staticmethod
    def from_dict(space: MetricMeasureSpace, d: dict) -> "ProbabilityMeasure":
        m = np.zeros(space.n)
        by_str = {str(p): i for i, p in enumerate(space.points)}
        for key, val in d.items():
            if key in space._index:
                m[space._index[key]] += float(val)
            elif str(key) in by_str:
                m[by_str[str(key)]] += float(val)
            else:
                raise InputError(f"measure charges unknown point {key!r}")
        return ProbabilityMeasure(m)

    @staticmethod
    def uniform(space: MetricMeasureSpace, support=None) -> "ProbabilityMeasure":
        m = np.zeros(space.n)
        idx = (
            np.arange(space.n)
            if support is None
            else np.array([space.index(p) for p in support])
        )
        m[idx] = 1.0 / len(idx)
        return ProbabilityMeasure(m)

    @staticmethod
    def delta(space: MetricMeasureSpace, point) -> "ProbabilityMeasure":
        m = np.zeros(space.n)
        m[space.index(point)] = 1.0
        return ProbabilityMeasure(m)

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.mass > 0)


def _validate_metric(D: np.ndarray, n: int, rng_seed: int = 0) -> None:
    if D.shape != (n, n):
        raise InputError(f"distance matrix shape {D.shape}, expected ({n},{n})")
    if np.isnan(D).any():
        raise InputError("NaN distances")
    if (np.diag(D) != 0).any():
        raise InputError("nonzero diagonal distances")
    finite = np.isfinite(D)
    if (D[finite] < 0).any():
        raise InputError("negative distances")
    asym = np.nanmax(np.abs(np.where(finite, D, 0.0) - np.where(finite.T, D.T, 0.0)))
    if asym > 0 or (finite != finite.T).any():
        raise AsymmetricDistance(f"max asymmetry {asym:.3e}")

    def triple_defect(ks):
        worst, worst_triple = 0.0, None
        for k in ks:
            m = D[:, k, None] + D[None, k, :]
            defect = D - m
            defect = np.where(np.isnan(defect), 0.0, defect)  # inf - inf: no violation
            j = int(np.argmax(defect))
            x, y = divmod(j, n)
            if defect[x, y] > worst:
                worst, worst_triple = float(defect[x, y]), (x, k, y)
        return worst, worst_triple

    if n <= FULL_VALIDATION_LIMIT:
        worst, triple = triple_defect(range(n))
    else:
        rng = np.random.default_rng(rng_seed)
        worst, triple = triple_defect(rng.integers(0, n, size=256))
    if worst > _TRI_SLACK:
        raise TriangleViolation(triple, worst)


def build_space(
    points: Sequence,
    dist: np.ndarray | None = None,
    weights: Sequence | None = None,
    geo_tol: float = 1e-9,
    edges: Sequence | None = None,
    meta: dict | None = None,
) -> MetricMeasureSpace:
    """Validate and build a space from a distance matrix or a weighted graph.

    ``edges`` entries are (point, point, weight); distances are then completed
    by all-pairs shortest paths and missing connections become +inf.
    """
    points = list(points)
    n = len(points)
    if n == 0:
        raise InputError("empty point set")
    if len(set(points)) != n:
        raise InputError("duplicate point ids")
    types = {type(p) for p in points}
    if len(types) > 1:
        raise InputError("point ids must have a single, orderable type")
    if geo_tol < 0:
        raise InputError("geo_tol must be nonnegative")

    meta = dict(meta or {})
    index = {p: i for i, p in enumerate(points)}
    if (dist is None) == (edges is None):
        raise InputError("provide exactly one of dist= or edges=")
    if dist is not None:
        mode = "matrix"
        if n > DENSE_LIMIT:
            raise InputError(
                f"dense matrix mode limited to {DENSE_LIMIT} points; use graph mode"
            )
        D = np.array(dist, dtype=float)
    else:
        mode = "graph"
        rows, cols, vals = [], [], []
        idx_edges = []
        for a, b, w in edges:
            i, j = index[a], index[b]
            w = float(w)
            if w < 0:
                raise InputError("negative edge weight")
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
            idx_edges.append((i, j, w))
        g = csr_matrix((vals, (rows, cols)), shape=(n, n))
        D = dijkstra(g, directed=False)
        meta["edges"] = idx_edges

    if weights is None:
        raise InputError("weights required")
    w = np.array(weights, dtype=float)
    if w.shape != (n,):
        raise InputError("weights shape mismatch")
    if (w < 0).any():
        raise InputError("negative weights")
    if w.sum() <= 0:
        raise ZeroMeasure("total reference weight must be positive")

    _validate_metric(D, n)
    return MetricMeasureSpace(
        points=points, dist=D, weights=w, geo_tol=geo_tol, mode=mode, meta=meta
    )


def shortest_path(space: MetricMeasureSpace, x, y) -> DiscreteGeodesic:
    """Discrete geodesic from x to y, ties broken by smallest lexicographic
    node-id sequence among paths within geo_tol of dist(x, y)."""
    i, j = space.index(x), space.index(y)
    path = _shortest_path_idx(space, i, j)
    return _geodesic_from_path(space, path)


def _geodesic_from_path(space: MetricMeasureSpace, path: list) -> DiscreteGeodesic:
    D = space.dist
    if len(path) == 1:
        return DiscreteGeodesic((space.points[path[0]],), (0.0,), 0.0)
    hops = [D[path[k], path[k + 1]] for k in range(len(path) - 1)]
    cum = np.concatenate([[0.0], np.cumsum(hops)])
    length = float(cum[-1])
    params = tuple(float(t / length) for t in cum) if length > 0 else tuple(0.0 for _ in cum)
    return DiscreteGeodesic(tuple(space.points[k] for k in path), params, length)


def _shortest_path_idx(space: MetricMeasureSpace, i: int, j: int) -> list:
    """Greedy lexicographic walk through the geodesic graph.

    Maintains the invariant: length so far + dist(cur, target) <= dist(i, j)
    + geo_tol, so the returned path length is within geo_tol of dist(i, j).
    At each step the smallest-id neighbor that keeps the invariant and makes
    strict progress is chosen; a direct hop to the target is the fallback.
    """
    if i == j:
        return [i]
    D = space.dist
    if not np.isfinite(D[i, j]):
        raise Disconnected(f"{space.points[i]!r} and {space.points[j]!r} are not connected")
    adj = space.adjacency()
    budget = D[i, j] + space.geo_tol
    path, cur, walked = [i], i, 0.0
    visited = {i}
    while cur != j:
        best, best_rank = None, None
        for u in adj[cur]:
            if u in visited and u != j:
                continue
            if D[u, j] >= D[cur, j] and u != j:
                continue
            if walked + D[cur, u] + D[u, j] <= budget:
                r = space.rank(u)
                if best is None or r < best_rank:
                    best, best_rank = u, r
        if best is None:
            best = j  # direct hop keeps the invariant: walked + D[cur, j] <= budget
        walked += D[cur, best]
        path.append(best)
        visited.add(best)
        cur = best
    return path


# ---------------------------------------------------------------------------
# model generators
# ---------------------------------------------------------------------------

MODEL_KINDS = (
    "interval",
    "circle",
    "sphere2_sample",
    "euclidean_grid",
    "tripod",
    "binary_tree",
)


def generate_model(kind: str, n: int, seed: int = 0, size: float | None = None,
                   geo_tol: float = 1e-9):
    """Build one of the test models.  Returns (space, info).

    info carries exact fields of the construction (coordinates, mesh size,
    branch vertices, ...) that tests and tolerance choices may use.
    """
    if kind not in MODEL_KINDS:
        raise InputError(f"unknown model kind {kind!r}")
    if n < 2:
        raise BadResolution(f"n={n} < 2")
    if kind == "interval":
        return _interval(n, size or 1.0, geo_tol)
    if kind == "circle":
        return _circle(n, size or 1.0, geo_tol)
    if kind == "euclidean_grid":
        return _grid(n, size or 1.0, geo_tol)
    if kind == "tripod":
        return _tripod(n, size, geo_tol)
    if kind == "binary_tree":
        return _binary_tree(n, size, geo_tol)
    return _sphere(n, seed, geo_tol)


def _interval(n, length, geo_tol):
    xs = length * np.arange(n) / (n - 1)
    D = np.abs(xs[:, None] - xs[None, :])
    space = build_space(
        list(range(n)), dist=D, weights=np.full(n, 1.0 / n), geo_tol=geo_tol,
        meta={"kind": "interval", "mesh": float(length / (n - 1))},
    )
    return space, {"coords": xs, "mesh": length / (n - 1)}


def _circle(n, circumference, geo_tol):
    k = np.arange(n)
    gaps = np.minimum(np.abs(k[:, None] - k[None, :]), n - np.abs(k[:, None] - k[None, :]))
    D = circumference * gaps / n
    space = build_space(
        list(range(n)), dist=D, weights=np.full(n, 1.0 / n), geo_tol=geo_tol,
        meta={"kind": "circle", "mesh": float(circumference / n)},
    )
    return space, {"angles": 2 * np.pi * k / n, "mesh": circumference / n}


def _grid(n, side, geo_tol):
    if n * n > DENSE_LIMIT:
        raise BadResolution(f"grid {n}x{n} exceeds dense limit")
    h = side / (n - 1)
    ij = np.array([(r, c) for r in range(n) for c in range(n)], dtype=float)
    xy = ij * h
    diff = xy[:, None, :] - xy[None, :, :]
    D = np.hypot(diff[..., 0], diff[..., 1])
    space = build_space(
        list(range(n * n)), dist=D, weights=np.full(n * n, 1.0 / (n * n)),
        geo_tol=geo_tol, meta={"kind": "euclidean_grid", "mesh": float(h)},
    )
    return space, {"coords": xy, "shape": (n, n), "mesh": h}


def _tripod(n, size, geo_tol):
    # center 0; leg L = 0,1,2 holds nodes 1 + L*n .. n + L*n, leaf last.
    edge = (size / n) if size is not None else 1.0
    edges = []
    for leg in range(3):
        prev = 0
        for k in range(n):
            node = 1 + leg * n + k
            edges.append((prev, node, edge))
            prev = node
    pts = list(range(3 * n + 1))
    space = build_space(
        pts, edges=edges, weights=np.full(len(pts), 1.0 / len(pts)), geo_tol=geo_tol,
        meta={"kind": "tripod", "mesh": edge},
    )
    info = {
        "center": 0,
        "leaves": [n, 2 * n, 3 * n],
        "legs": [[1 + L * n + k for k in range(n)] for L in range(3)],
        "mesh": edge,
    }
    return space, info


def _binary_tree(depth, size, geo_tol):
    edge = size if size is not None else 1.0
    n_nodes = 2 ** (depth + 1) - 1
    edges = [(k, (k - 1) // 2, edge) for k in range(1, n_nodes)]
    space = build_space(
        list(range(n_nodes)), edges=edges,
        weights=np.full(n_nodes, 1.0 / n_nodes), geo_tol=geo_tol,
        meta={"kind": "binary_tree", "mesh": edge},
    )
    return space, {"depth": depth, "mesh": edge}


def _sphere_points(n, seed, candidates=40):
    """Mitchell best-candidate sampling: quasi-uniform points on S^2."""
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 3))
    v = rng.standard_normal(3)
    X[0] = v / np.linalg.norm(v)
    for i in range(1, n):
        C = rng.standard_normal((candidates, 3))
        C /= np.linalg.norm(C, axis=1)[:, None]
        d = np.min(1.0 - X[:i] @ C.T, axis=0)
        X[i] = C[int(np.argmax(d))]
    return X


def _sphere(n, seed, geo_tol):
    X = _sphere_points(n, seed)
    gc = np.arccos(np.clip(X @ X.T, -1.0, 1.0))
    np.fill_diagonal(gc, np.inf)
    nn = gc.min(axis=1)
    mesh = float(nn.max())
    k = 7
    while True:
        order = np.argsort(gc, axis=1)[:, :k]
        rows = np.repeat(np.arange(n), k)
        cols = order.ravel()
        g = csr_matrix((gc[rows, cols], (rows, cols)), shape=(n, n))
        g = g.maximum(g.T)
        ncomp, _ = connected_components(g, directed=False)
        if ncomp == 1 or k >= min(n - 1, 25):
            break
        k += 2
    if ncomp != 1:
        raise Disconnected("sphere sample graph is disconnected")
    g = g.tocoo()
    seen = set()
    edges = []
    for i, j, w in zip(g.row, g.col, g.data):
        if i < j and (i, j) not in seen:
            seen.add((i, j))
            edges.append((int(i), int(j), float(w)))
    edges.sort()
    sv = SphericalVoronoi(X, radius=1.0)
    areas = sv.calculate_areas()
    space = build_space(
        list(range(n)), edges=edges, weights=areas, geo_tol=geo_tol,
        meta={"kind": "sphere2_sample", "mesh": mesh, "knn": k},
    )
    info = {
        "coords": X,
        "mesh": mesh,
        "knn": k,
        "areas": areas,
        "polar": np.arccos(np.clip(X[:, 2], -1.0, 1.0)),
        "great_circle": gc,
    }
    return space, info
