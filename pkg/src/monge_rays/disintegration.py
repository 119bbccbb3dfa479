"""Disintegration of the reference measure and the optimal plan along rays.

The finite disintegration is exact: q(y) is the total reference weight of a
class, m_y its normalized weights, and sum_y q(y) m_y reassembles the
reference measure on the transport set identically.  Plan mass is grouped by
the class of the source point; mass whose endpoint sits off the rays (in the
branching sets) is reassigned to the nearest related ray node, with the
reassigned total reported rather than silently dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LeakOutsideTe, MassOffRays
from .kantorovich import TransportPlan
from .mmspace import MetricMeasureSpace
from .rays import GammaStructure, RayDecomposition

_EXACT = 1e-12


@dataclass
class RayProblem1D:
    """One-dimensional transport data of a single ray."""

    rep: object                      # representative id
    ts: np.ndarray                   # node coordinates, increasing
    nodes: np.ndarray                # node indices aligned with ts
    m_y: np.ndarray                  # conditional reference masses, sum 1
    h: np.ndarray                    # density of m_y wrt arc length
    cells: np.ndarray                # cell lengths used by the h estimator
    q_mass: float                    # quotient weight of this ray under q
    degenerate: bool                 # q == 0: excluded from 1D solving
    mu0_y: np.ndarray | None = None  # conditional source masses, sum 1
    mu1_y: np.ndarray | None = None  # conditional target masses, sum 1
    q_mu0_mass: float = 0.0          # quotient weight under q_mu0
    eta_y: list = field(default_factory=list)  # (s, t, mass) normalized


@dataclass
class PlanDisintegration:
    rays: list                 # RayProblem1D, aligned with decomposition.classes
    ray_entries: list          # per ray: list of (s, t, mass, x_idx, y_idx)
    fixed_pairs: list          # (x_idx, y_idx, mass) kept out of the 1D stage
    diagnostics: dict


def cell_lengths(ts: np.ndarray) -> np.ndarray:
    """Midpoint cells, one-sided (full adjacent gap) at the chain ends.

    This convention makes h constant on uniformly weighted, uniformly spaced
    chains and keeps the reassembly h * cell = mass exact.
    """
    k = len(ts)
    if k == 1:
        return np.array([np.nan])
    cells = np.empty(k)
    cells[1:-1] = (ts[2:] - ts[:-2]) / 2.0
    cells[0] = ts[1] - ts[0]
    cells[-1] = ts[-1] - ts[-2]
    return cells


def disintegrate_reference(
    space: MetricMeasureSpace, decomposition: RayDecomposition
) -> list:
    """Conditional reference measures and 1D densities, one per ray."""
    out = []
    for ray in decomposition.rays:
        w = space.weights[ray.nodes]
        q = float(w.sum())
        degenerate = q <= 0.0
        m_y = w / q if not degenerate else np.zeros_like(w)
        cells = cell_lengths(ray.ts)
        with np.errstate(invalid="ignore", divide="ignore"):
            h = m_y / cells
        out.append(
            RayProblem1D(
                rep=space.points[ray.rep],
                ts=ray.ts.copy(),
                nodes=ray.nodes.copy(),
                m_y=m_y,
                h=h,
                cells=cells,
                q_mass=q,
                degenerate=degenerate,
            )
        )
    return out


def restrict_to_transport_set(
    mu0: np.ndarray, mu1: np.ndarray, structure: GammaStructure, tol: float = 1e-9
):
    """Fix shared mass outside Te in place (identity transport).

    Returns (mu0', mu1', diagonal_mass).  Raises LeakOutsideTe when either
    measure keeps unmatched mass outside the transport set, which contradicts
    plan optimality and signals a too-tight Gamma band.
    """
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    outside = np.ones(len(mu0), dtype=bool)
    outside[structure.Te] = False
    shared = np.where(outside, np.minimum(mu0, mu1), 0.0)
    r0 = mu0 - shared
    r1 = mu1 - shared
    leak0 = float(r0[outside].sum())
    leak1 = float(r1[outside].sum())
    if max(leak0, leak1) > tol:
        raise LeakOutsideTe(
            f"mass outside the transport set must stay in place: "
            f"mu0 leak {leak0:.3e}, mu1 leak {leak1:.3e}"
        )
    return r0, r1, float(shared.sum())


def _nearest_related(space, relation, node, members) -> int:
    """Nearest ray member related to node by R; ties to smallest id."""
    rel = members[relation[node, members] | relation[members, node]]
    cand = rel if len(rel) else members
    d = space.dist[node, cand]
    best = np.flatnonzero(d == d.min())
    ranks = [space.rank(int(cand[i])) for i in best]
    return int(cand[best[int(np.argmin(ranks))]])


def disintegrate_plan(
    space: MetricMeasureSpace,
    plan: TransportPlan,
    decomposition: RayDecomposition,
    structure: GammaStructure,
    ray_problems: list,
    max_off_ray_mass: float = np.inf,
) -> PlanDisintegration:
    """Group plan mass by the class of the source; proxy off-ray endpoints.

    Diagonal entries are kept out of the 1D stage (identity is optimal and
    exact).  Off-diagonal mass with an endpoint in A+ u A- rides on the
    nearest R-related node of the partner's ray; its true endpoints are kept
    for the final gluing so reported costs use original positions.
    """
    class_of = decomposition.class_of
    relation = structure.relation
    in_te = np.zeros(space.n, dtype=bool)
    in_te[structure.Te] = True
    coord_of = {}
    for ray in decomposition.rays:
        for t, i in zip(ray.ts, ray.nodes):
            coord_of[int(i)] = float(t)

    n_classes = len(decomposition.classes)
    ray_entries = [[] for _ in range(n_classes)]
    fixed_pairs = []
    reassigned_src = 0.0
    reassigned_tgt = 0.0
    passthrough = 0.0
    diagonal_mass = 0.0

    for x, y, m in zip(plan.sources, plan.targets, plan.masses):
        x, y, m = int(x), int(y), float(m)
        if x == y:
            fixed_pairs.append((x, y, m))
            diagonal_mass += m
            continue
        if not (in_te[x] and in_te[y]):
            raise LeakOutsideTe(
                f"plan moves {space.points[x]!r} -> {space.points[y]!r} "
                f"outside the transport set"
            )
        cx, cy = int(class_of[x]), int(class_of[y])
        if cx >= 0:
            cid = cx
            sx = coord_of[x]
            if cy == cx:
                ty = coord_of[y]
            else:
                proxy = _nearest_related(
                    space, relation, y, decomposition.classes[cid]
                )
                ty = coord_of[proxy]
                reassigned_tgt += m
        elif cy >= 0:
            cid = cy
            ty = coord_of[y]
            proxy = _nearest_related(space, relation, x, decomposition.classes[cid])
            sx = coord_of[proxy]
            reassigned_src += m
        else:
            fixed_pairs.append((x, y, m))
            passthrough += m
            continue
        ray_entries[cid].append((sx, ty, m, x, y))

    reassigned = reassigned_src + reassigned_tgt
    if reassigned + passthrough > max_off_ray_mass:
        raise MassOffRays(
            f"off-ray plan mass {reassigned + passthrough:.6g} exceeds the "
            f"threshold {max_off_ray_mass:.6g}"
        )

    aw = space.weights
    diagnostics = {
        "reassigned_mass": reassigned,
        "reassigned_source_mass": reassigned_src,
        "reassigned_target_mass": reassigned_tgt,
        "off_ray_passthrough_mass": passthrough,
        "diagonal_mass": diagonal_mass,
        "a_plus_weight": float(aw[structure.Aplus].sum()),
        "a_minus_weight": float(aw[structure.Aminus].sum()),
        "te_weight": float(aw[structure.Te].sum()),
    }

    for cid, rp in enumerate(ray_problems):
        entries = ray_entries[cid]
        q = sum(e[2] for e in entries)
        rp.q_mu0_mass = float(q)
        k = len(rp.ts)
        mu0_y = np.zeros(k)
        mu1_y = np.zeros(k)
        pos = {round(float(t), 12): i for i, t in enumerate(rp.ts)}
        for s, t, m, _x, _y in entries:
            mu0_y[pos[round(s, 12)]] += m
            mu1_y[pos[round(t, 12)]] += m
        if q > 0:
            rp.mu0_y = mu0_y / q
            rp.mu1_y = mu1_y / q
            rp.eta_y = [(s, t, m / q) for s, t, m, _x, _y in entries]
        else:
            rp.mu0_y = mu0_y
            rp.mu1_y = mu1_y
            rp.eta_y = []
    return PlanDisintegration(
        rays=ray_problems,
        ray_entries=ray_entries,
        fixed_pairs=fixed_pairs,
        diagnostics=diagnostics,
    )
