"""Transport set, branch detection, equivalence classes, and the ray map.

Pipeline order: transport_sets -> detect_branching -> build_equivalence ->
cross_section -> ray_map.  After branch removal the relation R restricted to
the transport set T is an equivalence relation whose classes are single
discrete geodesics; each class is parametrized by signed arc length from its
representative (positive in the direction of decreasing potential).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NotAChain, TransitivityFailure
from .kantorovich import GammaSet
from .mmspace import MetricMeasureSpace


@dataclass(frozen=True)
class BranchWitness:
    x: object
    z: object
    w: object
    direction: str  # "forward" -> A+, "backward" -> A-


@dataclass
class GammaStructure:
    """Gamma, its relation R, and the derived point sets (index arrays)."""

    space: MetricMeasureSpace
    gamma: GammaSet
    Te: np.ndarray
    a: np.ndarray
    b: np.ndarray
    Aplus: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    Aminus: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    witnesses: list = field(default_factory=list)
    branching_done: bool = False

    @property
    def relation(self) -> np.ndarray:
        return self.gamma.relation

    @property
    def T(self) -> np.ndarray:
        """Transport set: Te minus the branching sets."""
        drop = np.zeros(self.space.n, dtype=bool)
        drop[self.Aplus] = True
        drop[self.Aminus] = True
        return np.array([i for i in self.Te if not drop[i]], dtype=np.int64)

    def ids(self, idx) -> list:
        return [self.space.points[int(i)] for i in idx]


@dataclass(frozen=True)
class Ray:
    """One equivalence class ordered by decreasing potential."""

    rep: int
    nodes: np.ndarray  # indices, t increasing
    ts: np.ndarray     # signed distance from rep


@dataclass
class RayDecomposition:
    space: MetricMeasureSpace
    potential: np.ndarray
    classes: list          # list of index arrays
    class_of: np.ndarray   # point index -> class number, -1 off T
    section: np.ndarray | None = None  # point index -> representative index
    S: np.ndarray | None = None        # representative per class
    rays: list | None = None           # list[Ray], aligned with classes


def transport_sets(space: MetricMeasureSpace, gamma: GammaSet) -> GammaStructure:
    """Te, a, b by direct scan of positive-distance pairs (A+- not populated)."""
    G = gamma.matrix
    pos = G & (space.dist > 0)
    has_out = pos.any(axis=1)
    has_in = pos.any(axis=0)
    Te = np.flatnonzero(has_out | has_in)
    a = np.flatnonzero(~has_in)
    b = np.flatnonzero(~has_out)
    return GammaStructure(space=space, gamma=gamma, Te=Te, a=a, b=b)


def detect_branching(space: MetricMeasureSpace, structure: GammaStructure):
    """Exhaustive pair scan per point of Te.

    x lands in A+ when two of its forward Gamma-partners are unrelated by R;
    in A- symmetrically for Gamma^{-1}.  Populates the structure and returns
    (Aplus_ids, Aminus_ids, witnesses).
    """
    G = structure.gamma.matrix
    R = structure.gamma.relation
    aplus, aminus, witnesses = [], [], []
    for x in structure.Te:
        fwd = np.flatnonzero(G[x])
        if len(fwd) > 1:
            sub = R[np.ix_(fwd, fwd)]
            if not sub.all():
                zi, wi = np.argwhere(~sub)[0]
                aplus.append(x)
                witnesses.append(
                    BranchWitness(
                        space.points[int(x)],
                        space.points[int(fwd[zi])],
                        space.points[int(fwd[wi])],
                        "forward",
                    )
                )
        bwd = np.flatnonzero(G[:, x])
        if len(bwd) > 1:
            sub = R[np.ix_(bwd, bwd)]
            if not sub.all():
                zi, wi = np.argwhere(~sub)[0]
                aminus.append(x)
                witnesses.append(
                    BranchWitness(
                        space.points[int(x)],
                        space.points[int(bwd[zi])],
                        space.points[int(bwd[wi])],
                        "backward",
                    )
                )
    structure.Aplus = np.array(aplus, dtype=np.int64)
    structure.Aminus = np.array(aminus, dtype=np.int64)
    structure.witnesses = witnesses
    structure.branching_done = True
    return structure.ids(structure.Aplus), structure.ids(structure.Aminus), witnesses


def build_equivalence(structure: GammaStructure) -> RayDecomposition:
    """Connected components of R restricted to T; transitivity verified
    exhaustively inside each class (guaranteed by theory, so a failure
    signals inconsistent tolerances)."""
    if not structure.branching_done:
        raise ValueError("detect_branching must run before build_equivalence")
    space = structure.space
    T = structure.T
    R = structure.relation
    n = space.n
    class_of = np.full(n, -1, dtype=np.int64)
    classes = []
    if len(T):
        RT = R[np.ix_(T, T)]
        ncomp, labels = connected_components(
            csr_matrix(RT), directed=False
        )
        order = {}
        for local, lab in enumerate(labels):
            order.setdefault(int(lab), []).append(local)
        # classes sorted by smallest point rank for determinism
        ranked = sorted(
            order.values(), key=lambda loc: min(space.rank(int(T[l])) for l in loc)
        )
        for cid, local_idx in enumerate(ranked):
            members = T[np.array(sorted(local_idx))]
            sub = RT[np.ix_(sorted(local_idx), sorted(local_idx))]
            if not sub.all():
                bad = np.argwhere(~sub)[0]
                x, y = int(members[bad[0]]), int(members[bad[1]])
                mid = np.flatnonzero(R[x] & R[y])
                z = int(mid[0]) if len(mid) else -1
                raise TransitivityFailure(
                    (space.points[x], space.points[z], space.points[y])
                )
            classes.append(members)
            class_of[members] = cid
    return RayDecomposition(
        space=space,
        potential=structure.gamma.potential,
        classes=classes,
        class_of=class_of,
    )


def cross_section(decomposition: RayDecomposition) -> tuple:
    """Representative per class: node of median potential, ties to smallest id.

    Returns (section, S): section maps every point index of T to its
    representative index, S is one representative per class.
    """
    space = decomposition.space
    phi = decomposition.potential
    n = space.n
    section = np.full(n, -1, dtype=np.int64)
    reps = []
    for members in decomposition.classes:
        by_phi = sorted(members, key=lambda i: (phi[int(i)], space.rank(int(i))))
        k = len(by_phi)
        cand = {int(by_phi[(k - 1) // 2]), int(by_phi[k // 2])}
        rep = min(cand, key=lambda i: space.rank(i))
        reps.append(rep)
        section[members] = rep
    decomposition.section = section
    decomposition.S = np.array(reps, dtype=np.int64)
    return section, decomposition.S


def ray_map(space: MetricMeasureSpace, decomposition: RayDecomposition) -> RayDecomposition:
    """Populate per-class chains: nodes sorted by decreasing potential with
    signed arc-length coordinates from the representative.

    Verifies chain consistency: consecutive distances match both the
    potential drop and the coordinate increment within the tolerance band.
    """
    if decomposition.S is None:
        raise ValueError("cross_section must run before ray_map")
    phi = decomposition.potential
    D = space.dist
    band = space.geo_tol + 1e-9
    rays = []
    for members, rep in zip(decomposition.classes, decomposition.S):
        order = sorted(members, key=lambda i: (-phi[int(i)], space.rank(int(i))))
        nodes = np.array(order, dtype=np.int64)
        sign = np.where(phi[nodes] > phi[rep], -1.0, 1.0)
        ts = sign * D[nodes, rep]
        ts[nodes == rep] = 0.0
        for k in range(len(nodes) - 1):
            u, v = int(nodes[k]), int(nodes[k + 1])
            dphi = phi[u] - phi[v]
            duv = D[u, v]
            if dphi <= 1e-12 and duv > band:
                raise NotAChain(
                    f"nodes {space.points[u]!r}, {space.points[v]!r} share the "
                    f"potential value but are {duv:.3e} apart"
                )
            dt = ts[k + 1] - ts[k]
            if abs(dt - duv) > band or abs(dphi - duv) > band:
                raise NotAChain(
                    f"chain inconsistency at {space.points[u]!r} -> "
                    f"{space.points[v]!r}: dt={dt:.3e} dphi={dphi:.3e} d={duv:.3e}"
                )
        rays.append(Ray(rep=int(rep), nodes=nodes, ts=ts))
    decomposition.rays = rays
    return decomposition


def ray_map_lookup(decomposition: RayDecomposition):
    """g as a callable: (representative id, t) -> point id, plus its inverse
    x -> (f(x), +-d(x, f(x)))."""
    space = decomposition.space
    by_rep = {}
    for ray in decomposition.rays:
        key = space.points[ray.rep]
        by_rep[key] = {round(float(t), 12): space.points[int(i)]
                       for t, i in zip(ray.ts, ray.nodes)}

    def g(rep_id, t):
        return by_rep[rep_id][round(float(t), 12)]

    def g_inv(x):
        i = space.index(x)
        cid = decomposition.class_of[i]
        if cid < 0:
            raise KeyError(f"{x!r} is not on the transport set")
        ray = decomposition.rays[cid]
        t = float(ray.ts[list(ray.nodes).index(i)])
        return space.points[ray.rep], t

    return g, g_inv
