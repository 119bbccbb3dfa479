"""Glue per-ray monotone couplings into a global transport.

solve_monge runs the whole pipeline: Kantorovich solve, tight-set
construction and closure, transport set and branch removal, ray
decomposition, disintegration, per-ray monotone rearrangement, gluing, and
identity extension outside the transport set.  The result reports its duality
gap against W1 together with the discretization diagnostics (reassigned,
split and branch mass) that bound it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np

from .disintegration import (
    disintegrate_plan,
    disintegrate_reference,
    restrict_to_transport_set,
)
from .errors import GapExceeded, PushforwardMismatch
from .kantorovich import (
    GammaSet,
    KantorovichSolution,
    build_gamma,
    geodesic_closure,
    solve_w1,
)
from .mmspace import MetricMeasureSpace, ProbabilityMeasure
from .oned import Coupling1D, cost_1d, monotone_rearrangement
from .rays import (
    GammaStructure,
    RayDecomposition,
    build_equivalence,
    cross_section,
    detect_branching,
    ray_map,
    transport_sets,
)

_EPS = 1e-15


@dataclass(frozen=True)
class SolveConfig:
    eps_gamma: float | None = None   # default: 1e-9 + geo_tol
    max_gap: float | None = None     # abort when |cost - W1| exceeds this
    max_off_ray_mass: float = np.inf
    virtual_map_cap: int = 64


@dataclass
class MongeSolution:
    assignment: list                 # (x_id, y_id, mass), deterministic order
    cost: float
    w1: float
    gap: float                       # |cost - w1|
    is_map: bool
    diagnostics: dict
    per_ray: list                    # one row per ray with 1D costs
    virtual_map: list | None
    kantorovich: KantorovichSolution
    gamma: GammaSet
    structure: GammaStructure
    decomposition: RayDecomposition
    ray_problems: list
    couplings: list = field(default_factory=list)


def solve_monge(
    space: MetricMeasureSpace,
    mu0: ProbabilityMeasure,
    mu1: ProbabilityMeasure,
    config: SolveConfig | None = None,
) -> MongeSolution:
    config = config or SolveConfig()
    sol = solve_w1(space, mu0, mu1)
    gamma = geodesic_closure(space, build_gamma(space, sol, config.eps_gamma))
    structure = transport_sets(space, gamma)
    detect_branching(space, structure)
    deco = build_equivalence(structure)
    cross_section(deco)
    ray_map(space, deco)
    _, _, outside_diag = restrict_to_transport_set(
        mu0.mass, mu1.mass, structure
    )
    ray_problems = disintegrate_reference(space, deco)
    pd = disintegrate_plan(
        space, sol.plan, deco, structure, ray_problems,
        max_off_ray_mass=config.max_off_ray_mass,
    )

    triples, per_ray, couplings, split_mass = _solve_rays(space, deco, pd)
    triples.extend(
        (int(x), int(y), float(m)) for x, y, m in pd.fixed_pairs
    )

    assignment, is_map = _merge_triples(space, triples)
    cost = float(sum(m * space.dist[x, y] for x, y, m in _indexed(space, assignment)))
    _check_pushforward(space, assignment, mu0, mu1)

    gap = abs(cost - sol.value)
    diagnostics = dict(pd.diagnostics)
    diagnostics["split_mass"] = split_mass
    diagnostics["outside_te_diagonal_mass"] = outside_diag
    if config.max_gap is not None and gap > config.max_gap:
        raise GapExceeded(f"duality gap {gap:.3e} exceeds --max-gap {config.max_gap:.3e}")

    virtual_map = _virtual_map(space, mu0, assignment, is_map, config.virtual_map_cap)
    return MongeSolution(
        assignment=assignment,
        cost=cost,
        w1=sol.value,
        gap=gap,
        is_map=is_map,
        diagnostics=diagnostics,
        per_ray=per_ray,
        virtual_map=virtual_map,
        kantorovich=sol,
        gamma=gamma,
        structure=structure,
        decomposition=deco,
        ray_problems=ray_problems,
        couplings=couplings,
    )


def _solve_rays(space, deco, pd):
    """Monotone rearrangement per ray, then split coupled mass back onto the
    original endpoints (proxied atoms remember where they came from)."""
    triples = []
    per_ray = []
    couplings = []
    split_total = 0.0
    for cid, rp in enumerate(pd.rays):
        entries = pd.ray_entries[cid]
        row = {
            "rep": rp.rep,
            "n_nodes": int(len(rp.ts)),
            "length": float(rp.ts[-1] - rp.ts[0]) if len(rp.ts) > 1 else 0.0,
            "q_mass": rp.q_mass,
            "q_mu0": rp.q_mu0_mass,
            "cost_1d": 0.0,
        }
        if not entries:
            per_ray.append(row)
            couplings.append(None)
            continue
        src_break, tgt_break = {}, {}
        for s, t, m, x, y in entries:
            src_break.setdefault(round(s, 12), {}).setdefault(x, 0.0)
            src_break[round(s, 12)][x] += m
            tgt_break.setdefault(round(t, 12), {}).setdefault(y, 0.0)
            tgt_break[round(t, 12)][y] += m
        s_pos = sorted(src_break)
        t_pos = sorted(tgt_break)
        mu0_atoms = (np.array(s_pos), np.array([sum(src_break[p].values()) for p in s_pos]))
        mu1_atoms = (np.array(t_pos), np.array([sum(tgt_break[p].values()) for p in t_pos]))
        coupling = monotone_rearrangement(mu0_atoms, mu1_atoms)
        couplings.append(coupling)
        row["cost_1d"] = cost_1d(coupling) / rp.q_mu0_mass if rp.q_mu0_mass > 0 else 0.0

        src_state = {
            p: [[x, m] for x, m in sorted(d.items(), key=lambda kv: space.rank(kv[0]))]
            for p, d in src_break.items()
        }
        tgt_state = {
            p: [[y, m] for y, m in sorted(d.items(), key=lambda kv: space.rank(kv[0]))]
            for p, d in tgt_break.items()
        }
        for s, t, m in coupling.pairs:
            sk, tk = round(s, 12), round(t, 12)
            rem = m
            while rem > _EPS:
                xs = src_state[sk]
                ys = tgt_state[tk]
                while xs and xs[0][1] <= _EPS:
                    xs.pop(0)
                while ys and ys[0][1] <= _EPS:
                    ys.pop(0)
                if not xs or not ys:
                    break
                take = min(rem, xs[0][1], ys[0][1])
                triples.append((xs[0][0], ys[0][0], take))
                xs[0][1] -= take
                ys[0][1] -= take
                rem -= take
        per_ray.append(row)

    # split accounting at original-source granularity
    by_source = {}
    for x, y, m in triples:
        by_source.setdefault(x, set()).add(y)
    mass_by_source = {}
    for x, _y, m in triples:
        mass_by_source[x] = mass_by_source.get(x, 0.0) + m
    split_total = sum(
        mass_by_source[x] for x, ys in by_source.items() if len(ys) > 1
    )
    return triples, per_ray, couplings, float(split_total)


def _merge_triples(space, triples):
    agg = {}
    for x, y, m in triples:
        agg[(x, y)] = agg.get((x, y), 0.0) + m
    items = sorted(agg.items(), key=lambda kv: (space.rank(kv[0][0]), space.rank(kv[0][1])))
    assignment = [
        (space.points[x], space.points[y], float(m)) for (x, y), m in items
    ]
    sources = [x for (x, _y), _m in items]
    is_map = len(sources) == len(set(sources))
    return assignment, is_map


def _indexed(space, assignment):
    for x, y, m in assignment:
        yield space.index(x), space.index(y), m


def _check_pushforward(space, assignment, mu0, mu1, tol: float = 1e-9):
    push0 = np.zeros(space.n)
    push1 = np.zeros(space.n)
    for x, y, m in _indexed(space, assignment):
        push0[x] += m
        push1[y] += m
    err0 = float(np.abs(push0 - mu0.mass).max())
    err1 = float(np.abs(push1 - mu1.mass).max())
    if max(err0, err1) > tol:
        raise PushforwardMismatch(
            f"marginal mismatch: mu0 {err0:.3e}, mu1 {err1:.3e}"
        )


def _virtual_map(space, mu0, assignment, is_map, cap):
    """Strict map by sub-atom refinement, for uniform source atoms only.

    Each split source atom is divided into equal virtual sub-atoms (count =
    lcm of the split denominators, capped); every sub-atom then maps to a
    single target.  Returns [(x, sub_index, y)], or None when inapplicable.
    """
    if is_map:
        return [(x, 0, y) for x, y, _m in assignment]
    sup = mu0.support()
    masses = mu0.mass[sup]
    if len(masses) == 0 or np.abs(masses - masses[0]).max() > 1e-12 * masses[0]:
        return None
    atom = masses[0]
    by_source = {}
    for x, y, m in assignment:
        by_source.setdefault(x, []).append((y, m))
    denoms = []
    for x, lst in by_source.items():
        for _y, m in lst:
            frac = Fraction(m / atom).limit_denominator(cap)
            if abs(float(frac) - m / atom) > 1e-9:
                return None
            denoms.append(frac.denominator)
    m_lcm = 1
    for d in denoms:
        m_lcm = lcm(m_lcm, d)
        if m_lcm > cap:
            return None
    out = []
    for x in sorted(by_source, key=lambda p: space.rank(space.index(p))):
        lst = sorted(by_source[x], key=lambda ym: space.rank(space.index(ym[0])))
        k = 0
        for y, m in lst:
            count = round(m / atom * m_lcm)
            for _ in range(count):
                out.append((x, k, y))
                k += 1
    return out


def duality_report(solution: MongeSolution, kantorovich: KantorovichSolution) -> dict:
    """Gap, per-ray cost decomposition, diagnostics, and the gap bound implied
    by the reassigned mass."""
    space = solution.decomposition.space
    finite = solution.decomposition.space.dist[np.isfinite(space.dist)]
    diameter = float(finite.max()) if len(finite) else 0.0
    reassigned = solution.diagnostics.get("reassigned_mass", 0.0)
    passthrough = solution.diagnostics.get("off_ray_passthrough_mass", 0.0)
    per_ray_cost = sum(r["q_mu0"] * r["cost_1d"] for r in solution.per_ray)
    return {
        "w1": kantorovich.value,
        "monge_cost": solution.cost,
        "gap": solution.gap,
        "per_ray": solution.per_ray,
        "per_ray_cost_total": float(per_ray_cost),
        "diagnostics": solution.diagnostics,
        "gap_bound_reassigned_times_diameter": float(
            (reassigned + passthrough) * diameter
        ),
        "gap_within_bound": bool(
            solution.gap <= (reassigned + passthrough) * diameter + 1e-9
        ),
    }
