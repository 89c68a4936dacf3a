"""Poisson clouds crossing a shell through adaptively-sized subshells.

A Poisson number of explorers is placed on the outer boundary of a shell
and run one at a time.  Each stage has a random width tied to an explorer
count through H^d = gamma * count; explorers either settle at the first
empty site of the current stage's shell (first-visit, n >= 1) or are
suspended on entering the stage's inner ball and resume from their stopping
sites at the next stage.  Two width schemes exist:

* ARRIVAL_COUNT: H_k^d = gamma * (number of explorers arriving at stage k),
  the ladder spans B(0, 2r) down to B(0, r), and the process ends at the
  first stage with no arrivals (H = 0) or when the ladder reaches r;
* SETTLED_PREVIOUS: H_0 = r/4 and H_k^d = gamma * N_{k-1} with N_k the
  number settling in stage k; the ladder spans B(0, r) downward and stops
  at the first k with sum_{i<k} H_i > 3r/4 or H_k < 1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, uint64

from . import _rng, estimate
from .flashing import BoundParams
from .idla import ExplorerConfig
from .lattice import BallSpec, boundary_sites, closed_radius_sq
from .walk import SeedSpec

CLOUD_STEP_CAP = 1_000_000


class WidthScheme(enum.Enum):
    ARRIVAL_COUNT = "arrival_count"
    SETTLED_PREVIOUS = "settled_previous"


@dataclass(frozen=True)
class CloudParams:
    """Configuration of a cloud run."""

    r: float
    epsilon: float
    gamma: float
    d: int = 2
    width_scheme: WidthScheme = WidthScheme.ARRIVAL_COUNT
    eta_base: ExplorerConfig | None = None
    step_cap: int = CLOUD_STEP_CAP

    def __post_init__(self):
        if self.r < 4:
            raise ValueError("cloud experiments need r >= 4")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")

    @property
    def lambda0(self) -> float:
        return self.epsilon * self.r**self.d


# --- Poisson machinery ---------------------------------------------------


def poisson_tail_bound(theta: float, lam: float) -> float:
    """exp(-theta * log(theta / (e * lam))).

    A Chernoff-style *upper* bound on P(K >= theta) for a Poisson(lam) K,
    valid in the deviation regime theta >= e * lam (elsewhere it exceeds 1
    and is vacuous).
    """
    if theta <= 0 or lam <= 0:
        raise ValueError("theta and lam must be positive")
    return math.exp(-theta * math.log(theta / (math.e * lam)))


def i_star(epsilon: float, r: float, d: int) -> int:
    """Smallest i >= 0 with e^-i * epsilon * r^d < 1 (0 if already < 1)."""
    lam = epsilon * r**d
    if lam < 1:
        return 0
    # smallest integer strictly above log(lam)
    i = int(math.floor(math.log(lam))) + 1
    while math.exp(-i) * lam >= 1:  # float-boundary guard
        i += 1
    while i > 0 and math.exp(-(i - 1)) * lam < 1:
        i -= 1
    return i


def gamma_from_bounds(bounds: BoundParams, d: int) -> float:
    """Width constant max(1, (2 log C / kappa)^(d-1)) from fitted bound constants."""
    return max(1.0, (2.0 * math.log(bounds.C_d) / bounds.kappa_d) ** (d - 1))


def gamma_from_fit(kappa_hat: float, c_hat: float, d: int) -> float:
    """gamma_from_bounds tolerant of fitted prefactors C <= 1.

    Fits against easy obstacle sets routinely give C_hat < 1 (the bound
    constant must cover the worst case, the fit reports the observed case);
    the width rule then clamps at gamma = 1.
    """
    if kappa_hat <= 0:
        raise ValueError("kappa_hat must be positive")
    if c_hat <= 1:
        return 1.0
    return gamma_from_bounds(BoundParams(kappa_hat, c_hat), d)


# --- increasing boundary configurations ----------------------------------


def zeta_config(k: int, r: float, d: int = 2,
                eta_base: ExplorerConfig | None = None) -> ExplorerConfig:
    """The k-th element of the canonical increasing configuration sequence.

    Explorers fill the sites of the boundary of B(0, 2r) round-robin in
    lexicographic order, on top of eta_base; so |zeta_k| = k, the sequence
    is increasing, and eta_base precedes zeta_k for every k >= |eta_base|.
    """
    starts = zeta_expansion(k, r, d, eta_base)
    counts: dict = {}
    for s in starts:
        counts[s] = counts.get(s, 0) + 1
    return ExplorerConfig(counts)


def zeta_expansion(k: int, r: float, d: int = 2,
                   eta_base: ExplorerConfig | None = None) -> list[tuple]:
    """The explorer sequence underlying zeta_k (construction order)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    ring = boundary_sites(BallSpec((0.0,) * d, 2.0 * r)).sorted_sites()
    base: list[tuple] = []
    if eta_base is not None:
        if eta_base.d != d:
            raise ValueError("eta_base dimension mismatch")
        base = eta_base.lex_expansion()
        ring_set = set(ring)
        if any(s not in ring_set for s in base):
            raise ValueError("eta_base must be supported on the boundary of B(0, 2r)")
    out = list(base[:k])
    i = 0
    while len(out) < k:
        out.append(ring[i % len(ring)])
        i += 1
    return out


# --- the staged cloud process --------------------------------------------

_SETTLED, _ARRIVED, _FLOOR, _CAP = 0, 1, 2, 3


@njit(cache=True)
def _cloud_stage_kernel(positions, grid, shape, strides, origin,
                        outer_sq, inner_sq, floor_sq,
                        master_seed, stage_key, step_cap, out_code, out_pos):
    """Run one stage: each explorer walks until settled, suspended, or capped.

    Settling: first site visited (n >= 1) that is empty and inside the
    current shell (inner < |x| <= outer).  Suspension: first site with
    |x|^2 <= inner_sq (<= floor_sq means the floor was crossed).  The
    occupancy grid persists across stages of a run.
    """
    m, d = positions.shape
    two_d = 2 * d
    pos = np.empty(d, dtype=np.int64)
    for e in range(m):
        s = _rng.seed_state(uint64(master_seed),
                            (stage_key + uint64(e)) & uint64(0x7FFFFFFFFFFFFFFF))
        nsq = 0
        for i in range(d):
            pos[i] = positions[e, i]
            nsq += pos[i] * pos[i]
        steps = 0
        code = _CAP
        while steps < step_cap:
            move = _rng.next_direction(s, two_d)
            axis = move >> 1
            delta_c = 1 - 2 * (move & 1)
            nsq += delta_c * (2 * pos[axis]) + 1
            pos[axis] += delta_c
            steps += 1
            if nsq <= inner_sq:
                code = _FLOOR if nsq <= floor_sq else _ARRIVED
                break
            if nsq <= outer_sq:
                idx = 0
                for i in range(d):
                    idx += (pos[i] - origin[i]) * strides[i]
                if grid[idx] == 0:
                    grid[idx] = 1
                    code = _SETTLED
                    break
        out_code[e] = code
        for i in range(d):
            out_pos[e, i] = pos[i]


@dataclass
class StageRecord:
    stage: int
    width: float
    outer_radius: float
    inner_radius: float
    entered: int
    settled: int
    arrived: int
    floor_hits: int
    capped: int


@dataclass
class ShellProcessTrace:
    """Realized widths, counts and stopping data of one cloud run."""

    params: CloudParams
    seed: SeedSpec
    k_poisson: int
    widths: list[float]
    counts: list[int]
    stop_index: int                 # L
    crossed_inner: bool
    floor_reached: bool
    stages: list[StageRecord] = field(repr=False, default_factory=list)
    total_capped: int = 0

    @property
    def total_width(self) -> float:
        return float(sum(self.widths))

    def width_relation_residual(self) -> float:
        """Max relative error of H^d = gamma * count over the trace."""
        worst = 0.0
        g = self.params.gamma
        d = self.params.d
        if self.params.width_scheme is WidthScheme.ARRIVAL_COUNT:
            pairs = [(self.widths[k], self.counts[k]) for k in range(len(self.widths))]
        else:
            pairs = [(self.widths[k], self.counts[k - 1]) for k in range(1, len(self.widths))]
        for w, c in pairs:
            target = g * c
            err = abs(w**d - target) / max(target, 1e-300)
            worst = max(worst, err)
        return worst


def run_cloud_experiment(params: CloudParams, seed: SeedSpec) -> ShellProcessTrace:
    """One realization of the staged shell process."""
    d = params.d
    r = params.r
    scheme = params.width_scheme
    rng = seed.child(0xC10D).numpy_rng()
    k_poisson = int(rng.poisson(params.lambda0)) if params.lambda0 > 0 else 0

    if scheme is WidthScheme.ARRIVAL_COUNT:
        ladder_top, floor = 2.0 * r, r
    else:
        ladder_top, floor = r, r / 4.0
    starts = _cloud_starts(k_poisson, params, ladder_top)

    # occupancy grid over the ladder region
    half = int(math.ceil(ladder_top)) + 2
    shape = np.full(d, 2 * half + 1, dtype=np.int64)
    origin = np.full(d, -half, dtype=np.int64)
    strides = np.empty(d, dtype=np.int64)
    acc = 1
    for i in range(d - 1, -1, -1):
        strides[i] = acc
        acc *= int(shape[i])
    grid = np.zeros(int(np.prod(shape)), dtype=np.uint8)

    widths: list[float] = []
    counts: list[int] = []
    stages: list[StageRecord] = []
    crossed = False
    floor_reached = False
    total_capped = 0
    positions = starts
    outer = ladder_top
    stage = 0
    settled_prev = 0
    while True:
        if scheme is WidthScheme.ARRIVAL_COUNT:
            width = (params.gamma * len(positions)) ** (1.0 / d)
            if width <= 0:
                break  # L = stage (no arrivals)
        else:
            if stage == 0:
                width = r / 4.0
            else:
                width = (params.gamma * settled_prev) ** (1.0 / d)
            if sum(widths) > 3.0 * r / 4.0 or width < 1.0:
                break  # L = stage per the settled-width stopping rule
        if outer <= floor + 1e-9:
            floor_reached = True
            break
        inner = max(outer - width, floor)
        is_floor = inner <= floor + 1e-12
        out_code = np.empty(len(positions), dtype=np.int8)
        out_pos = np.empty_like(positions)
        stage_key = uint64(_rng.derive_stream(seed.stream_id, 0x57A6E + stage))
        if len(positions):
            _cloud_stage_kernel(positions, grid, shape, strides, origin,
                                closed_radius_sq(outer), closed_radius_sq(inner),
                                closed_radius_sq(floor),
                                seed.master_seed, stage_key, params.step_cap,
                                out_code, out_pos)
        settled = int(np.sum(out_code == _SETTLED))
        floor_hits = int(np.sum(out_code == _FLOOR))
        capped = int(np.sum(out_code == _CAP))
        arrived_mask = out_code == _ARRIVED
        arrived = int(np.sum(arrived_mask))
        widths.append(float(width))
        if scheme is WidthScheme.ARRIVAL_COUNT:
            counts.append(len(positions))
        else:
            counts.append(settled)
        stages.append(StageRecord(stage, float(width), float(outer), float(inner),
                                  len(positions), settled, arrived, floor_hits, capped))
        total_capped += capped
        crossed = crossed or floor_hits > 0
        settled_prev = settled
        positions = out_pos[arrived_mask]
        outer = inner
        stage += 1
        if is_floor:
            floor_reached = True
            break
        if scheme is WidthScheme.ARRIVAL_COUNT and arrived == 0:
            break  # next width would be 0: L = stage
    return ShellProcessTrace(params=params, seed=seed, k_poisson=k_poisson,
                             widths=widths, counts=counts, stop_index=len(widths),
                             crossed_inner=crossed, floor_reached=floor_reached,
                             stages=stages, total_capped=total_capped)


def _cloud_starts(k: int, params: CloudParams, ladder_top: float) -> np.ndarray:
    if params.width_scheme is WidthScheme.ARRIVAL_COUNT:
        sites = zeta_expansion(k, params.r, params.d, params.eta_base)
    else:
        # the settled-width ladder starts at r; fill its outer boundary
        ring = boundary_sites(BallSpec((0.0,) * params.d, ladder_top)).sorted_sites()
        sites = [ring[i % len(ring)] for i in range(k)]
    if not sites:
        return np.empty((0, params.d), dtype=np.int64)
    return np.array(sites, dtype=np.int64)


# --- batch statistics ------------------------------------------------------


@dataclass
class CloudBatchReport:
    params: CloudParams
    runs: int
    domination: estimate.DominationReport
    first_shell_crossers: int
    total_explorers: int
    crossing_frequency: float
    frequency_threshold: float
    frequency_ok: bool
    cap_fraction: float
    crossed_inner_count: int

    @property
    def passed(self) -> bool:
        return self.domination.passed and self.frequency_ok


def run_cloud_batch(params: CloudParams, runs: int, seed: SeedSpec) -> list[ShellProcessTrace]:
    return [run_cloud_experiment(params, seed.child(i)) for i in range(runs)]


def crossers_domination_test(params: CloudParams, runs: int, seed: SeedSpec,
                             traces: list[ShellProcessTrace] | None = None,
                             n_sigma: float = 3.0) -> CloudBatchReport:
    """Is the stage-1 crosser count dominated by Poisson(lambda0 / e)?

    Also reports the per-explorer first-shell crossing frequency against
    1/e + n_sigma * sigma (binomial sigma at 1/e).
    """
    if runs < 1:
        raise ValueError("need at least one run")
    if traces is None:
        traces = run_cloud_batch(params, runs, seed)
    crossers = []
    total_explorers = 0
    total_crossers = 0
    total_caps = 0
    crossed_count = 0
    for tr in traces:
        first = tr.stages[0] if tr.stages else None
        c = (first.arrived + first.floor_hits) if first else 0
        crossers.append(c)
        total_crossers += c
        total_explorers += tr.k_poisson
        total_caps += tr.total_capped
        crossed_count += int(tr.crossed_inner)
    lam = params.lambda0 / math.e
    dom = estimate.survival_domination(crossers, lam, n_runs=len(traces),
                                       n_sigma=n_sigma,
                                       t_max=int(math.ceil(params.lambda0)))
    freq = total_crossers / total_explorers if total_explorers else 0.0
    p0 = 1.0 / math.e
    sigma = math.sqrt(p0 * (1 - p0) / total_explorers) if total_explorers else 0.0
    threshold = p0 + n_sigma * sigma
    return CloudBatchReport(
        params=params, runs=len(traces), domination=dom,
        first_shell_crossers=total_crossers, total_explorers=total_explorers,
        crossing_frequency=freq, frequency_threshold=threshold,
        frequency_ok=freq <= threshold,
        cap_fraction=total_caps / max(total_explorers, 1),
        crossed_inner_count=crossed_count)


@dataclass
class WidthStatsReport:
    n_traces: int
    i_star: int
    freq_total_gt_r: float
    freq_head_gt_half_r: float
    freq_tail_event: float
    nistar_survival: dict
    inclusion_violations: int
    crossed_inner_freq: float
    coverage_by_k: list[dict]


def width_sequence_stats(traces: list[ShellProcessTrace], r: float) -> WidthStatsReport:
    """Frequencies of the width-sum decomposition events over a trace batch.

    Events: {sum H_i > r}, {sum_{i<i*} H_i > r/2} and the complementary
    tail event; the inclusion of the first in the union of the other two is
    checked pathwise on every trace (it is arithmetic, so violations
    indicate a bookkeeping bug).  Also reports the survival counts of the
    arrival count at stage i* and coverage frequency binned by the Poisson
    draw.
    """
    if not traces:
        raise ValueError("need at least one trace")
    p = traces[0].params
    istar = i_star(p.epsilon, p.r, p.d)
    n = len(traces)
    c_total = c_head = c_tail = violations = crossed = 0
    nistar_values = []
    by_k: dict[int, list[int]] = {}
    for tr in traces:
        total = sum(tr.widths)
        head = sum(tr.widths[:istar])
        tail = sum(tr.widths[istar:])
        ev_total = total > r
        ev_head = head > r / 2.0
        ev_tail = (head <= r / 2.0) and (tail >= r / 2.0)
        c_total += ev_total
        c_head += ev_head
        c_tail += ev_tail
        if ev_total and not (ev_head or ev_tail):
            violations += 1
        if p.width_scheme is WidthScheme.ARRIVAL_COUNT:
            nistar_values.append(tr.counts[istar] if istar < len(tr.counts) else 0)
        crossed += int(tr.crossed_inner)
        by_k.setdefault(tr.k_poisson, []).append(int(tr.crossed_inner))
    nistar = np.array(nistar_values, dtype=np.int64) if nistar_values else np.zeros(0, np.int64)
    survival = {t: float(np.mean(nistar > t)) if len(nistar) else 0.0 for t in (0, 1, 2, 5)}
    coverage = [{"k": k, "runs": len(v), "coverage": float(np.mean(v))}
                for k, v in sorted(by_k.items())]
    return WidthStatsReport(
        n_traces=n, i_star=istar,
        freq_total_gt_r=c_total / n, freq_head_gt_half_r=c_head / n,
        freq_tail_event=c_tail / n, nistar_survival=survival,
        inclusion_violations=violations, crossed_inner_freq=crossed / n,
        coverage_by_k=coverage)
