"""Internal DLA: cluster construction, abelian testing, fluctuation radii.

Explorers run one at a time.  An explorer whose start site is empty settles
there immediately (step 0 counts as stepping on it); otherwise it performs a
simple random walk on occupied sites and settles at the first empty site it
steps on.  Exactly one explorer settles per site, so a completed cluster has
|A| = |eta|.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

import numpy as np
from numba import njit, uint64

from . import _rng, estimate
from .lattice import Site, SiteSet, norm_sq
from .walk import DEFAULT_STEP_CAP, SeedSpec


class StepCapExceeded(RuntimeError):
    """An explorer failed to settle within the step cap; the build aborted."""


@dataclass(frozen=True)
class ExplorerConfig:
    """A finite multiset of explorer start sites."""

    counts: Mapping[Site, int]

    def __post_init__(self):
        clean = {}
        for site, m in self.counts.items():
            site = tuple(int(c) for c in site)
            if m < 1:
                raise ValueError(f"multiplicity for {site} must be >= 1, got {m}")
            clean[site] = int(m)
        if not clean:
            raise ValueError("configuration must contain at least one explorer")
        dims = {len(s) for s in clean}
        if len(dims) != 1:
            raise ValueError("sites of mixed dimension")
        object.__setattr__(self, "counts", clean)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def d(self) -> int:
        return len(next(iter(self.counts)))

    def support(self) -> SiteSet:
        return SiteSet(self.counts.keys())

    def lex_expansion(self) -> list[Site]:
        out = []
        for site in sorted(self.counts):
            out.extend([site] * self.counts[site])
        return out

    @classmethod
    def single(cls, site: Site, multiplicity: int = 1) -> "ExplorerConfig":
        return cls({tuple(site): multiplicity})

    @classmethod
    def at_origin(cls, n: int, d: int = 2) -> "ExplorerConfig":
        return cls({(0,) * d: n})

    # file format: one line per site, "x1 ... xd multiplicity"
    def to_text(self) -> str:
        lines = [" ".join(str(c) for c in s) + f" {m}" for s, m in sorted(self.counts.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExplorerConfig":
        counts: dict[Site, int] = {}
        for ln in text.strip().splitlines():
            parts = ln.split()
            if not parts:
                continue
            site, m = tuple(int(c) for c in parts[:-1]), int(parts[-1])
            counts[site] = counts.get(site, 0) + m
        return cls(counts)


@dataclass(frozen=True)
class OrderingPolicy:
    """How the explorers of a configuration are sequenced."""

    kind: str
    explicit_order: tuple[int, ...] | None = None

    BY_SITE_LEX = "by_site_lex"
    BY_SITE_REVERSED = "by_site_reversed"
    EXPLICIT = "explicit"
    RANDOM = "random"

    @classmethod
    def by_site_lex(cls) -> "OrderingPolicy":
        return cls(cls.BY_SITE_LEX)

    @classmethod
    def by_site_reversed(cls) -> "OrderingPolicy":
        return cls(cls.BY_SITE_REVERSED)

    @classmethod
    def explicit(cls, order: Iterable[int]) -> "OrderingPolicy":
        return cls(cls.EXPLICIT, tuple(int(i) for i in order))

    @classmethod
    def random(cls) -> "OrderingPolicy":
        """Re-randomized per build from the build seed."""
        return cls(cls.RANDOM)

    def apply(self, eta: ExplorerConfig, seed: SeedSpec) -> list[Site]:
        base = eta.lex_expansion()
        if self.kind == self.BY_SITE_LEX:
            return base
        if self.kind == self.BY_SITE_REVERSED:
            return base[::-1]
        if self.kind == self.EXPLICIT:
            order = self.explicit_order or ()
            if sorted(order) != list(range(len(base))):
                raise ValueError("explicit order must be a permutation of explorer indices")
            return [base[i] for i in order]
        if self.kind == self.RANDOM:
            rng = seed.child(0x0AD3).numpy_rng()
            perm = rng.permutation(len(base))
            return [base[i] for i in perm]
        raise ValueError(f"unknown ordering policy {self.kind!r}")


@dataclass(frozen=True)
class Cluster:
    """A completed aggregation cluster, with the realized settle order."""

    occupied: SiteSet
    settle_order: tuple[tuple[Site, int], ...]

    def __post_init__(self):
        if len(self.occupied) != len(self.settle_order):
            raise ValueError("one explorer settles per occupied site")

    def __contains__(self, site) -> bool:
        return site in self.occupied

    def settle_coords(self) -> np.ndarray:
        return np.array([s for s, _ in self.settle_order], dtype=np.int64)

    # dump: occupied sites in the site-set text format, plus a sidecar with
    # one "x1 ... xd explorer_index" line per settle event in order
    def occupied_text(self) -> str:
        return self.occupied.to_text()

    def settle_order_text(self) -> str:
        lines = [" ".join(str(c) for c in site) + f" {k}" for site, k in self.settle_order]
        return "\n".join(lines) + "\n"

    def dump(self, path_prefix) -> tuple:
        from pathlib import Path

        prefix = Path(path_prefix)
        sites_path = prefix.with_suffix(".sites")
        order_path = prefix.with_suffix(".order")
        sites_path.write_text(self.occupied_text())
        order_path.write_text(self.settle_order_text())
        return sites_path, order_path


class FluctuationResult(NamedTuple):
    inner_radius: float
    outer_radius: float


# --- build kernel ------------------------------------------------------

_DONE, _REGROW, _CAP = 0, 1, 2


@njit(cache=True)
def _build_kernel(starts, grid, shape, strides, origin, master_seed, stream_key,
                  step_cap, settles, first):
    """Run explorers first.. onward, mutating the occupancy grid.

    Walks happen on occupied sites only, so positions never leave the grid
    as long as every occupied cell sits >= 2 cells away from the border;
    the kernel hands control back (_REGROW) when a settle erodes that
    margin.  Per-explorer substreams make realizations independent of where
    regrows interrupt.
    """
    n, d = starts.shape
    pos = np.empty(d, dtype=np.int64)
    two_d = 2 * d
    for k in range(first, n):
        s = _rng.seed_state(uint64(master_seed), (stream_key + uint64(k)) & uint64(0x7FFFFFFFFFFFFFFF))
        idx = 0
        for i in range(d):
            pos[i] = starts[k, i]
            idx += (pos[i] - origin[i]) * strides[i]
        if grid[idx] == 0:
            grid[idx] = 1
        else:
            settled = False
            steps = 0
            if d == 2:
                x = pos[0]
                y = pos[1]
                s0 = strides[0]
                buf = uint64(0)
                avail = 0
                while steps < step_cap:
                    if avail == 0:
                        buf = _rng.next_u64(s)
                        avail = 32
                    move = int(buf & uint64(3))
                    buf = buf >> uint64(2)
                    avail -= 1
                    if move == 0:
                        x += 1
                        idx += s0
                    elif move == 1:
                        x -= 1
                        idx -= s0
                    elif move == 2:
                        y += 1
                        idx += 1
                    else:
                        y -= 1
                        idx -= 1
                    steps += 1
                    if grid[idx] == 0:
                        grid[idx] = 1
                        pos[0] = x
                        pos[1] = y
                        settled = True
                        break
            else:
                while steps < step_cap:
                    move = _rng.next_direction(s, two_d)
                    axis = move >> 1
                    delta = 1 - 2 * (move & 1)
                    pos[axis] += delta
                    idx += delta * strides[axis]
                    steps += 1
                    if grid[idx] == 0:
                        grid[idx] = 1
                        settled = True
                        break
            if not settled:
                return _CAP, k
        for i in range(d):
            settles[k, i] = pos[i]
        # regrow when the new site is within 2 cells of the grid border
        for i in range(d):
            c = pos[i] - origin[i]
            if c < 2 or c >= shape[i] - 2:
                return _REGROW, k + 1
    return _DONE, n


def _initial_box(starts: np.ndarray):
    n, d = starts.shape
    lo = starts.min(axis=0)
    hi = starts.max(axis=0)
    # generous margin: diffusive radius estimate plus slack; regrow covers the tail
    margin = int(math.ceil(1.6 * (n / 2.0) ** (1.0 / d))) + 8
    return lo - margin, hi + margin


def _grid_for(lo: np.ndarray, hi: np.ndarray):
    shape = (hi - lo + 1).astype(np.int64)
    d = len(shape)
    strides = np.empty(d, dtype=np.int64)
    acc = 1
    for i in range(d - 1, -1, -1):
        strides[i] = acc
        acc *= int(shape[i])
    grid = np.zeros(int(np.prod(shape)), dtype=np.uint8)
    return grid, shape, strides, lo.copy()


def _build_raw(starts: np.ndarray, seed: SeedSpec, step_cap: int):
    """Core build: returns (settle coords (n,d), grid, shape, strides, origin)."""
    n, d = starts.shape
    lo, hi = _initial_box(starts)
    grid, shape, strides, origin = _grid_for(lo, hi)
    settles = np.empty((n, d), dtype=np.int64)
    stream_key = uint64(_rng.splitmix64(np.uint64(seed.stream_id)))
    first = 0
    while True:
        status, k = _build_kernel(starts, grid, shape, strides, origin,
                                  seed.master_seed, stream_key, step_cap, settles, first)
        if status == _DONE:
            return settles, grid, shape, strides, origin
        if status == _CAP:
            raise StepCapExceeded(
                f"explorer {k}/{n} did not settle within {step_cap} steps")
        # regrow: double the margin around the current box and copy occupancy
        growth = np.maximum((shape * 0.5).astype(np.int64), 16)
        new_lo, new_hi = origin - growth, origin + shape - 1 + growth
        new_grid, new_shape, new_strides, new_origin = _grid_for(new_lo, new_hi)
        old = grid.reshape(tuple(shape))
        view = new_grid.reshape(tuple(new_shape))
        slices = tuple(slice(int(o - no), int(o - no + sh))
                       for o, no, sh in zip(origin, new_origin, shape))
        view[slices] = old
        grid, shape, strides, origin = new_grid, new_shape, new_strides, new_origin
        first = k


def build_cluster(eta: ExplorerConfig, order: OrderingPolicy | None = None,
                  seed: SeedSpec = SeedSpec(0), step_cap: int = DEFAULT_STEP_CAP) -> Cluster:
    """Build the aggregation cluster of eta under the given ordering."""
    order = order or OrderingPolicy.by_site_lex()
    starts = np.array(order.apply(eta, seed), dtype=np.int64)
    settles, *_ = _build_raw(starts, seed, step_cap)
    sites = [tuple(int(c) for c in row) for row in settles]
    return Cluster(SiteSet(sites), tuple((s, k) for k, s in enumerate(sites)))


def covers_origin(eta: ExplorerConfig, seed: SeedSpec, r: float | None = None,
                  order: OrderingPolicy | None = None,
                  step_cap: int = DEFAULT_STEP_CAP) -> bool:
    """Build the cluster and report whether the origin was occupied.

    If `r` is given, the configuration is checked against the convention that
    it live outside B(0, 2r); violations are warned about, not rejected.
    """
    if r is not None:
        bound = (2.0 * r) ** 2
        if any(norm_sq(s) <= bound + 1e-9 for s in eta.counts):
            warnings.warn(f"configuration has support inside B(0, {2 * r}); "
                          "coverage convention violated", stacklevel=2)
    cluster = build_cluster(eta, order, seed, step_cap)
    return (0,) * eta.d in cluster


def fluctuation_run(n_particles: int, seed: SeedSpec, d: int = 2,
                    step_cap: int = DEFAULT_STEP_CAP) -> FluctuationResult:
    """Launch n explorers from the origin; measure inner and outer radii.

    outer is the largest occupied norm; inner is the largest occupied norm
    whose closed ball is fully occupied, so inner <= outer always.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    starts = np.zeros((n_particles, d), dtype=np.int64)
    settles, grid, shape, strides, origin = _build_raw(starts, seed, step_cap)
    occ_norms = np.sum(settles.astype(np.float64) ** 2, axis=1)
    outer_sq = float(occ_norms.max())

    # nearest empty site: scan the grid's empty cells adjacent to occupancy
    mask = grid.reshape(tuple(shape)).astype(bool)
    adjacent_empty = np.zeros_like(mask)
    for axis in range(d):
        for shift in (1, -1):
            adjacent_empty |= np.roll(mask, shift, axis=axis)
    adjacent_empty &= ~mask
    coords = np.argwhere(adjacent_empty) + origin
    empty_norms = np.sum(coords.astype(np.float64) ** 2, axis=1)
    min_empty_sq = float(empty_norms.min())
    inner_candidates = occ_norms[occ_norms < min_empty_sq]
    inner_sq = float(inner_candidates.max()) if len(inner_candidates) else 0.0
    return FluctuationResult(math.sqrt(inner_sq), math.sqrt(outer_sq))


# --- shape-distribution sampling and the abelian test -------------------


def sample_cluster_shapes(eta: ExplorerConfig, order: OrderingPolicy, trials: int,
                          seed: SeedSpec, step_cap: int = 1_000_000) -> dict[tuple, int]:
    """Empirical distribution of the final cluster (as sorted site tuples)."""
    counts: dict[tuple, int] = {}
    caps = 0
    for t in range(trials):
        trial_seed = SeedSpec(seed.master_seed, (seed.stream_id + t) & 0x3FFFFFFFFFFFFFFF)
        try:
            cluster = build_cluster(eta, order, trial_seed, step_cap)
        except StepCapExceeded:
            caps += 1
            continue
        shape = tuple(sorted(cluster.occupied))
        counts[shape] = counts.get(shape, 0) + 1
    if caps:
        warnings.warn(f"{caps}/{trials} builds hit the step cap and were dropped",
                      stacklevel=2)
    return counts


@dataclass
class AbelianReport:
    statistic: float
    p_value: float
    trials: int
    n_shapes: int
    counts_a: dict
    counts_b: dict


def abelian_test(eta: ExplorerConfig, order_1: OrderingPolicy, order_2: OrderingPolicy,
                 trials: int, seed: SeedSpec) -> AbelianReport:
    """Chi-square homogeneity between cluster laws under two orderings."""
    if eta.total > 6:
        raise ValueError("abelian test enumerates shapes from samples; keep |eta| <= 6")
    counts_a = sample_cluster_shapes(eta, order_1, trials, seed.child(1))
    counts_b = sample_cluster_shapes(eta, order_2, trials, seed.child(2))
    stat, p = estimate.chi_square_homogeneity(counts_a, counts_b)
    shapes = set(counts_a) | set(counts_b)
    return AbelianReport(stat, p, trials, len(shapes), counts_a, counts_b)
