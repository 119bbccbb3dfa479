"""One-dimensional Monge problems solved by monotone rearrangement.

The discrete realization of the quantile map T(s) = sup{t : F(t) <= H(s)}:
sweep both supports in increasing order matching mass greedily.  The result
is the unique monotone coupling of the two measures; when no source atom has
to split the coupling is a map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

_MASS_EPS = 1e-15


def _as_atoms(ts, ms=None):
    if ms is None:
        arr = np.asarray(list(ts), dtype=float)
        ts, ms = arr[:, 0], arr[:, 1]
    ts = np.asarray(ts, dtype=float)
    ms = np.asarray(ms, dtype=float)
    keep = ms > 0
    ts, ms = ts[keep], ms[keep]
    order = np.argsort(ts, kind="stable")
    return ts[order], ms[order]


@dataclass(frozen=True)
class StepCDF:
    """Left-continuous distribution function H(s) = mass strictly below s."""

    ts: np.ndarray
    masses: np.ndarray
    cum: np.ndarray  # cum[i] = mass strictly below ts[i]

    def __call__(self, s: float) -> float:
        i = np.searchsorted(self.ts, s, side="left")
        if i == 0:
            return 0.0
        return float(self.cum[i - 1] + self.masses[i - 1])


def cdf(ts, ms=None) -> StepCDF:
    """Left-continuous CDF of a finite measure on the line."""
    ts, ms = _as_atoms(ts, ms)
    cum = np.concatenate([[0.0], np.cumsum(ms)[:-1]])
    return StepCDF(ts, ms, cum)


@dataclass(frozen=True)
class Coupling1D:
    """Monotone coupling on ray coordinates.

    pairs is the support list (s, t, mass); map_form is the map s -> t when
    no source atom splits, else None.
    """

    pairs: tuple
    map_form: dict | None

    @property
    def cost(self) -> float:
        return cost_1d(self)

    def split_mass(self) -> float:
        """Total mass of source atoms coupled to more than one target."""
        targets = {}
        mass = {}
        for s, t, m in self.pairs:
            targets.setdefault(s, set()).add(t)
            mass[s] = mass.get(s, 0.0) + m
        return sum(mass[s] for s, ts in targets.items() if len(ts) > 1)


def monotone_rearrangement(mu0, mu1) -> Coupling1D:
    """Quantile coupling of two 1D probability measures.

    Each measure is given as (positions, masses) or as [(t, mass), ...].
    """
    s_ts, s_ms = _as_atoms(*mu0) if isinstance(mu0, tuple) else _as_atoms(mu0)
    t_ts, t_ms = _as_atoms(*mu1) if isinstance(mu1, tuple) else _as_atoms(mu1)
    if abs(s_ms.sum() - t_ms.sum()) > 1e-9:
        raise ValueError(
            f"mass mismatch: {s_ms.sum()} vs {t_ms.sum()}"
        )
    pairs = []
    i = j = 0
    rem_s = s_ms.copy()
    rem_t = t_ms.copy()
    total = s_ms.sum()
    while i < len(s_ts) and j < len(t_ts):
        m = min(rem_s[i], rem_t[j])
        if m > _MASS_EPS * max(total, 1.0):
            pairs.append((float(s_ts[i]), float(t_ts[j]), float(m)))
        rem_s[i] -= m
        rem_t[j] -= m
        if rem_s[i] <= _MASS_EPS * max(total, 1.0):
            i += 1
        if rem_t[j] <= _MASS_EPS * max(total, 1.0):
            j += 1
    by_source = {}
    for s, t, _m in pairs:
        by_source.setdefault(s, set()).add(t)
    if all(len(v) == 1 for v in by_source.values()):
        map_form = {s: next(iter(v)) for s, v in by_source.items()}
    else:
        map_form = None
    return Coupling1D(tuple(pairs), map_form)


def cost_1d(coupling: Coupling1D) -> float:
    return float(sum(m * abs(t - s) for s, t, m in coupling.pairs))


def l1_cdf_distance(mu0, mu1) -> float:
    """Integral of |H - F| over the line: the 1D transport cost identity."""
    H = cdf(*mu0) if isinstance(mu0, tuple) else cdf(mu0)
    F = cdf(*mu1) if isinstance(mu1, tuple) else cdf(mu1)
    grid = np.unique(np.concatenate([H.ts, F.ts]))
    total = 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        r = 0.5 * (a + b)
        total += abs(H(r) - F(r)) * (b - a)
    return float(total)


def lp_1d_cost(mu0, mu1, max_atoms: int = 8) -> float:
    """Independent 1D LP oracle for small instances (scipy linprog)."""
    s_ts, s_ms = _as_atoms(*mu0) if isinstance(mu0, tuple) else _as_atoms(mu0)
    t_ts, t_ms = _as_atoms(*mu1) if isinstance(mu1, tuple) else _as_atoms(mu1)
    m, k = len(s_ts), len(t_ts)
    if m > max_atoms or k > max_atoms:
        raise ValueError(f"oracle limited to {max_atoms} atoms per side")
    C = np.abs(s_ts[:, None] - t_ts[None, :])
    rows = np.concatenate([np.repeat(np.arange(m), k), m + np.tile(np.arange(k), m)])
    cols = np.concatenate([np.arange(m * k)] * 2)
    A_eq = csr_matrix((np.ones(2 * m * k), (rows, cols)), shape=(m + k, m * k))
    res = linprog(
        C.ravel(), A_eq=A_eq, b_eq=np.concatenate([s_ms, t_ms]),
        bounds=(0, None), method="highs",
    )
    if not res.success:
        raise RuntimeError(f"1D oracle LP failed: {res.message}")
    return float(res.fun)


def optimality_check(mu0, mu1, coupling: Coupling1D, max_atoms: int = 8) -> float:
    """Deviation of the coupling cost from the exhaustive 1D LP optimum."""
    return cost_1d(coupling) - lp_1d_cost(mu0, mu1, max_atoms=max_atoms)
