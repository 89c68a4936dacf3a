"""Exact solvers used as ground truth for the Monte Carlo estimators.

Two oracles live here:

* :func:`exact_race_probability` solves the discrete Dirichlet problem for
  the probability a walk is absorbed in one site family before another, on
  instances of up to ~2e4 transient sites;
* :func:`exact_cluster_distribution` enumerates the exact law of small
  aggregation clusters (a handful of explorers) by dynamic programming over
  occupied sets, with per-explorer absorbing-chain solves.

Both are pure functions of their instance and independent of every sampling
code path in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .lattice import Site, SiteSet, neighbors

MAX_PERMITTED_SITES = 20_000
DENSE_LIMIT = 2_000
SWEEP_TOL = 1e-10
_NBR_A = -1  # neighbor contributes value 1 (absorbed in A)
_NBR_B = -2  # neighbor contributes value 0 (absorbed in B / escaped)


@dataclass(frozen=True)
class AbsorbingInstance:
    """Transient sites plus two absorbing families and a start site.

    Steps from a permitted site to anything outside
    permitted | absorb_a | absorb_b count as absorption in B (outer escape),
    so absorb_b need not be spelled out exhaustively.
    """

    permitted: SiteSet
    absorb_a: SiteSet
    absorb_b: SiteSet
    start: Site

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(int(c) for c in self.start))
        if len(self.start) != self.permitted.d:
            raise ValueError("start dimension does not match the instance")
        if not self.permitted.isdisjoint(self.absorb_a):
            raise ValueError("permitted and absorb_a overlap")
        if not self.permitted.isdisjoint(self.absorb_b):
            raise ValueError("permitted and absorb_b overlap")
        if not self.absorb_a.isdisjoint(self.absorb_b):
            raise ValueError("absorb_a and absorb_b overlap")
        if len(self.permitted) > MAX_PERMITTED_SITES:
            raise ValueError(
                f"instance too large: {len(self.permitted)} permitted sites "
                f"(limit {MAX_PERMITTED_SITES})")

    # --- labeled-section text format -----------------------------------
    def to_text(self) -> str:
        parts = ["START " + " ".join(str(c) for c in self.start)]
        for label, ss in (("PERMITTED", self.permitted), ("ABSORB_A", self.absorb_a),
                          ("ABSORB_B", self.absorb_b)):
            parts.append(f"[{label}]")
            parts.append(ss.to_text().rstrip("\n"))
        return "\n".join(parts) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AbsorbingInstance":
        start: Site | None = None
        sections: dict[str, list[str]] = {}
        current: list[str] | None = None
        for ln in text.splitlines():
            ln = ln.strip()
            if not ln:
                continue
            if ln.startswith("START"):
                start = tuple(int(c) for c in ln.split()[1:])
            elif ln.startswith("[") and ln.endswith("]"):
                current = sections.setdefault(ln[1:-1], [])
            elif current is not None:
                current.append(ln)
            else:
                raise ValueError(f"unexpected line outside any section: {ln!r}")
        if start is None:
            raise ValueError("instance text has no START line")
        d = len(start)
        sets = {}
        for label in ("PERMITTED", "ABSORB_A", "ABSORB_B"):
            lines = sections.get(label, [])
            sets[label] = (SiteSet.from_text("\n".join(lines)) if lines
                           else SiteSet([], d=d))
        return cls(sets["PERMITTED"], sets["ABSORB_A"], sets["ABSORB_B"], start)


@dataclass
class ExactSolution:
    probability: float
    solver: str
    residual: float
    field: dict[Site, float] = field(repr=False, default_factory=dict)

    def metadata(self) -> dict:
        return {"solver": self.solver, "residual": self.residual,
                "tolerance": SWEEP_TOL}


@njit(cache=True)
def _gauss_seidel(nbr, a_count, two_d, tol, max_sweeps):
    n = nbr.shape[0]
    h = np.zeros(n, dtype=np.float64)
    inv = 1.0 / two_d
    residual = 1.0
    for _ in range(max_sweeps):
        residual = 0.0
        for i in range(n):
            acc = float(a_count[i])
            for k in range(two_d):
                j = nbr[i, k]
                if j >= 0:
                    acc += h[j]
            new = acc * inv
            delta = abs(new - h[i])
            if delta > residual:
                residual = delta
            h[i] = new
        if residual < tol:
            break
    return h, residual


def _neighbor_table(inst: AbsorbingInstance):
    sites = inst.permitted.sorted_sites()
    index = {s: i for i, s in enumerate(sites)}
    n = len(sites)
    d = inst.permitted.d if n else len(inst.start)
    nbr = np.full((n, 2 * d), _NBR_B, dtype=np.int64)
    a_count = np.zeros(n, dtype=np.int64)
    for i, s in enumerate(sites):
        for k, nb in enumerate(neighbors(s)):
            j = index.get(nb)
            if j is not None:
                nbr[i, k] = j
            elif nb in inst.absorb_a:
                nbr[i, k] = _NBR_A
                a_count[i] += 1
            # else: absorb_b or outer escape, already _NBR_B
    return sites, index, nbr, a_count


def solve_field(inst: AbsorbingInstance) -> ExactSolution:
    """Solve h = neighbor mean on permitted sites, h=1 on A, h=0 on B.

    Direct dense solve below DENSE_LIMIT unknowns, residual-driven
    Gauss-Seidel sweeps above; the choice is recorded in the result.
    """
    sites, index, nbr, a_count = _neighbor_table(inst)
    n = len(sites)
    two_d = 2 * (inst.permitted.d if n else len(inst.start))
    if n == 0:
        h = np.zeros(0)
        solver, residual = "trivial", 0.0
    elif n < DENSE_LIMIT:
        A = np.eye(n)
        for i in range(n):
            for j in nbr[i]:
                if j >= 0:
                    A[i, j] -= 1.0 / two_d
        b = a_count / two_d
        h = np.linalg.solve(A, b)
        solver = "dense"
        residual = _field_residual(h, nbr, a_count, two_d)
    else:
        h, _ = _gauss_seidel(nbr, a_count, two_d, SWEEP_TOL, max_sweeps=1_000_000)
        solver = "gauss-seidel"
        residual = _field_residual(h, nbr, a_count, two_d)

    # evaluate the start with the n >= 1 hitting convention: if the start is
    # not a transient site, its value is one averaging step over neighbors
    start = inst.start
    if start in index:
        p = float(h[index[start]])
    else:
        acc = 0.0
        touches = start in inst.absorb_a or start in inst.absorb_b
        for nb in neighbors(start):
            if nb in index:
                acc += h[index[nb]]
                touches = True
            elif nb in inst.absorb_a:
                acc += 1.0
                touches = True
            elif nb in inst.absorb_b:
                touches = True
        if not touches:
            raise ValueError("start is neither inside nor adjacent to the instance region")
        p = acc / two_d
    p = min(1.0, max(0.0, p))
    return ExactSolution(p, solver, float(residual), {s: float(h[i]) for s, i in index.items()})


def _field_residual(h, nbr, a_count, two_d) -> float:
    if len(h) == 0:
        return 0.0
    worst = 0.0
    for i in range(len(h)):
        acc = float(a_count[i])
        for j in nbr[i]:
            if j >= 0:
                acc += h[j]
        worst = max(worst, abs(h[i] - acc / two_d))
    return worst


def exact_race_probability(inst: AbsorbingInstance) -> float:
    """P(absorption in absorb_a before absorb_b), exact up to solver tolerance."""
    return solve_field(inst).probability


def crossing_instance(r: float, h: float, v_sites: SiteSet, start: Site) -> AbsorbingInstance:
    """The absorbing instance for a shell-crossing race.

    Transient sites are the obstacle set V; absorption in A is the inner
    ball B(0, r-h); every other site (leaving V) absorbs as B via the outer
    escape rule.
    """
    from .lattice import BallSpec, ball_sites  # local import avoids cycles at module load

    d = v_sites.d
    inner = ball_sites(BallSpec((0.0,) * d, r - h))
    permitted = v_sites.difference(inner)
    return AbsorbingInstance(permitted, inner, SiteSet([], d=d), start)


# --- exact small-cluster law ------------------------------------------


def _exit_distribution(occupied: frozenset, start: Site) -> dict[Site, float]:
    """Law of the first empty site visited by a walk on `occupied` from `start`.

    The walk lives on occupied sites only (it settles the moment it steps
    off), so the chain is finite no matter what the ambient lattice is.
    """
    sites = sorted(occupied)
    index = {s: i for i, s in enumerate(sites)}
    n = len(sites)
    d = len(start)
    two_d = 2 * d
    exits: list[Site] = []
    exit_index: dict[Site, int] = {}
    rows = []
    for s in sites:
        row = []
        for nb in neighbors(s):
            if nb in index:
                row.append(("occ", index[nb]))
            else:
                if nb not in exit_index:
                    exit_index[nb] = len(exits)
                    exits.append(nb)
                row.append(("exit", exit_index[nb]))
        rows.append(row)
    A = np.eye(n)
    R = np.zeros((n, len(exits)))
    for i, row in enumerate(rows):
        for kind, j in row:
            if kind == "occ":
                A[i, j] -= 1.0 / two_d
            else:
                R[i, j] += 1.0 / two_d
    E = np.linalg.solve(A, R)
    probs = E[index[start]]
    return {exits[j]: float(probs[j]) for j in range(len(exits)) if probs[j] > 0.0}


def exact_cluster_distribution(starts: list[Site]) -> dict[tuple[Site, ...], float]:
    """Exact law of the final cluster for explorers launched in the given order.

    Returns {sorted site tuple: probability}.  Feasible for a handful of
    explorers; intended as the ground truth behind sampling tests.  By the
    abelian property the result does not depend on the order, which makes
    for a free consistency check.
    """
    if not starts:
        raise ValueError("need at least one explorer")
    if len(starts) > 9:
        raise ValueError("exact enumeration is meant for at most ~9 explorers")
    level: dict[frozenset, float] = {frozenset(): 1.0}
    for z in starts:
        nxt: dict[frozenset, float] = {}
        for occ, p in level.items():
            if z not in occ:
                new = occ | {z}
                nxt[new] = nxt.get(new, 0.0) + p
            else:
                for site, q in _exit_distribution(occ, z).items():
                    new = occ | {site}
                    nxt[new] = nxt.get(new, 0.0) + p * q
        level = nxt
    return {tuple(sorted(occ)): p for occ, p in level.items()}
