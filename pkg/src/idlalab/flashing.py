"""Flashing explorers: subshell geometry, trace simulation, crossing MC.

A shell B(0,r) \\ B(0,r-h) is split into n subshells of width 2*delta with
stopping spheres between them.  A walk launched outside the shell draws, at
its first arrival on each sphere, a random flash radius; the exit site of
the walk from that flash ball is a flash site.  The flashing explorer
settles at the first flash site that misses the obstacle set V, which is
what makes its survival dominate the true crossing event pathwise: a walk
that reaches the inner ball while staying inside V has necessarily placed
every flash site inside V.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit, uint64

from . import _rng, estimate
from .lattice import BallSpec, SiteSet, Site, ball_sites, boundary_sites, closed_radius_sq, shell_sites
from .walk import DEFAULT_STEP_CAP, SeedSpec, ABSORB_A, ABSORB_B, FREE, _race_kernel

FLASH_STEP_CAP = 1_000_000


@dataclass(frozen=True)
class BoundParams:
    """Constants of the crossing-probability bound C * exp(-kappa * x)."""

    kappa_d: float
    C_d: float

    def __post_init__(self):
        if self.kappa_d <= 0:
            raise ValueError("kappa_d must be positive")
        if self.C_d <= 1:
            raise ValueError("C_d must exceed 1")


@dataclass(frozen=True)
class DenseParams:
    """Density threshold and the empirically fitted generic constants."""

    beta: float
    kappa_fit: float = float("nan")
    c_fit: float = float("nan")

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")

    @classmethod
    def from_fits(cls, kappa_fit: float, c_fit: float) -> "DenseParams":
        # beta chosen so that 4 * kappa * beta < 1 holds with margin
        return cls(beta=min(0.5, 1.0 / (8.0 * kappa_fit)), kappa_fit=kappa_fit, c_fit=c_fit)


class FlashingPlan:
    """Subshell geometry for a shell of outer radius r and depth h.

    n subshells of width 2*delta = h/n, with stopping spheres
    sigma_k = boundary of B(0, r - (2k+1)*delta) for k < n.
    """

    def __init__(self, r: float, h: float, n: int, d: int = 2):
        if not 0 < h < r / 2:
            raise ValueError(f"flashing plan requires 0 < h < r/2, got h={h}, r={r}")
        if not (isinstance(n, (int, np.integer)) and n >= 1):
            raise ValueError("subshell count n must be a positive integer")
        if n >= h:
            raise ValueError(f"subshell count must satisfy n < h, got n={n}, h={h}")
        if n > 64:
            raise ValueError("at most 64 subshells supported (bitmask bookkeeping)")
        self.r = float(r)
        self.h = float(h)
        self.n = int(n)
        self.d = int(d)
        self.delta = self.h / (2 * self.n)
        self.sphere_radii = [self.r - (2 * k + 1) * self.delta for k in range(self.n)]
        self.sigma = [boundary_sites(BallSpec((0.0,) * d, rho)) for rho in self.sphere_radii]

    def shell(self) -> SiteSet:
        return shell_sites((0.0,) * self.d, self.r, self.r - self.h)

    def __repr__(self) -> str:
        return (f"FlashingPlan(r={self.r}, h={self.h}, n={self.n}, d={self.d}, "
                f"delta={self.delta})")


@dataclass
class FlashingTrace:
    """One walk's realized flashing data."""

    arrival_sites: list[Site | None]
    flash_radii: list[float]
    flash_sites: list[Site | None]
    settled_at: int | None
    crossed: bool
    capped: bool
    steps: int
    flash_in_v: list[bool]

    @property
    def passed_all(self) -> bool:
        return (not self.capped and self.settled_at is None
                and all(s is not None for s in self.flash_sites))


def sample_flash_radius(delta: float, d: int, u):
    """Inverse-CDF draw of the flash radius: density d*x^(d-1)/delta^d on [0, delta].

    `u` may be a scalar or an array of uniform variates.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("u must lie in [0, 1]")
    out = delta * u ** (1.0 / d)
    return float(out) if out.ndim == 0 else out


def dense_sites(sigma_k: SiteSet, v_sites: SiteSet, delta: float, beta: float) -> SiteSet:
    """Sphere sites whose delta-ball meets V in at least beta * delta^d sites."""
    if delta <= 0 or beta <= 0:
        raise ValueError("delta and beta must be positive")
    if len(v_sites) == 0:
        return SiteSet([], d=sigma_k.d)
    threshold = beta * delta ** sigma_k.d
    v_arr = v_sites.as_array()
    out = []
    cap_sq = closed_radius_sq(delta)
    for y in sigma_k:
        dist_sq = np.sum((v_arr - np.array(y)) ** 2, axis=1)
        if int(np.count_nonzero(dist_sq <= cap_sq)) >= threshold:
            out.append(y)
    return SiteSet(out, d=sigma_k.d)


# --- trace kernel -------------------------------------------------------


@njit(cache=True)
def _flashing_kernel(start, sphere_grid, v_grid, shape, strides, origin,
                     inner_sq, delta, n_spheres, d_inv,
                     master_seed, stream_base, n_trials, step_cap,
                     out_settled, out_crossed, out_capped, out_violation,
                     out_violation_relaxed, out_armed, out_closed, out_zinv,
                     out_steps, out_arrivals, out_radii, out_flashes):
    """Simulate flashing traces; one walk per trial, per-trial streams.

    Per step the order matters: close any open flash windows at the new
    site, then arm a window on first sphere arrival, then decide the true
    crossing event.  A walk ends once both the true event (hit inner ball
    vs left V) and the flashing fate (first flash site off V, or all spheres
    passed) are decided.

    Two domination violation flags come out: the strict one (crossed with
    some flash site off V) and a relaxed one that also accepts flash sites
    inside the inner ball.  The strict inclusion is a continuum statement;
    on the lattice a final-sphere flash ball can exit straight into the
    inner ball (overshoot < 1), so only the relaxed flag is exact here.
    """
    d = len(start)
    two_d = 2 * d
    for t in range(n_trials):
        s = _rng.seed_state(uint64(master_seed), uint64(stream_base + t))
        pos = np.empty(d, dtype=np.int64)
        centers = np.zeros((n_spheres, d), dtype=np.int64)
        radii_sq = np.zeros(n_spheres, dtype=np.float64)
        nsq = 0
        for i in range(d):
            pos[i] = start[i]
            nsq += pos[i] * pos[i]
        armed = np.zeros(n_spheres, dtype=np.uint8)
        closed = np.zeros(n_spheres, dtype=np.uint8)
        zinv = np.zeros(n_spheres, dtype=np.uint8)
        zinner = np.zeros(n_spheres, dtype=np.uint8)
        in_v = True            # "walk has stayed inside V since step 1"
        true_decided = False
        crossed = False
        flash_decided = False
        settled = -1
        ptr = 0
        steps = 0
        capped = False
        while True:
            if steps >= step_cap:
                capped = True
                break
            move = _rng.next_direction(s, two_d)
            axis = move >> 1
            delta_c = 1 - 2 * (move & 1)
            nsq += delta_c * (2 * pos[axis]) + 1
            pos[axis] += delta_c
            steps += 1
            # grid index (valid only while inside the box)
            inside = True
            idx = 0
            for i in range(d):
                c = pos[i] - origin[i]
                if c < 0 or c >= shape[i]:
                    inside = False
                    break
                idx += c * strides[i]
            # 1) close open flash windows
            for k in range(n_spheres):
                if armed[k] == 1 and closed[k] == 0:
                    dist_sq = 0.0
                    for i in range(d):
                        dc = pos[i] - centers[k, i]
                        dist_sq += dc * dc
                    if dist_sq > radii_sq[k]:
                        closed[k] = 1
                        if inside and v_grid[idx] == 1:
                            zinv[k] = 1
                        if nsq <= inner_sq:
                            zinner[k] = 1
                        for i in range(d):
                            out_flashes[t, k, i] = pos[i]
            # 2) arm a window on first sphere arrival
            if inside and not flash_decided:
                k = sphere_grid[idx]
                if k >= 0 and armed[k] == 0:
                    armed[k] = 1
                    for i in range(d):
                        centers[k, i] = pos[i]
                        out_arrivals[t, k, i] = pos[i]
                    rr = delta * (_rng.next_unit(s) ** d_inv)
                    radii_sq[k] = rr * rr
                    out_radii[t, k] = rr
            # 3) the true crossing event
            if not true_decided:
                if nsq <= inner_sq:
                    true_decided = True
                    crossed = in_v
                elif not (inside and v_grid[idx] == 1):
                    in_v = False
                    true_decided = True
            # 4) flashing fate
            if not flash_decided:
                while ptr < n_spheres and closed[ptr] == 1 and zinv[ptr] == 1:
                    ptr += 1
                if ptr >= n_spheres:
                    flash_decided = True
                elif closed[ptr] == 1:
                    settled = ptr
                    flash_decided = True
            if true_decided and flash_decided:
                break
        out_settled[t] = settled if flash_decided else -2
        out_crossed[t] = 1 if crossed else 0
        out_capped[t] = 1 if capped else 0
        out_steps[t] = steps
        viol = 0
        viol_relaxed = 0
        if crossed:
            for k in range(n_spheres):
                if not (armed[k] == 1 and closed[k] == 1 and zinv[k] == 1):
                    viol = 1
                if not (armed[k] == 1 and closed[k] == 1
                        and (zinv[k] == 1 or zinner[k] == 1)):
                    viol_relaxed = 1
        out_violation[t] = viol
        out_violation_relaxed[t] = viol_relaxed
        am = uint64(0)
        cm = uint64(0)
        zm = uint64(0)
        for k in range(n_spheres):
            if armed[k]:
                am |= uint64(1) << uint64(k)
            if closed[k]:
                cm |= uint64(1) << uint64(k)
            if zinv[k]:
                zm |= uint64(1) << uint64(k)
        out_armed[t] = am
        out_closed[t] = cm
        out_zinv[t] = zm


def _plan_grids(plan: FlashingPlan, v_sites: SiteSet):
    """Sphere-index and V-occupancy grids over a box covering B(0, r + 2)."""
    d = plan.d
    half = int(math.ceil(plan.r)) + 2
    shape = np.full(d, 2 * half + 1, dtype=np.int64)
    origin = np.full(d, -half, dtype=np.int64)
    strides = np.empty(d, dtype=np.int64)
    acc = 1
    for i in range(d - 1, -1, -1):
        strides[i] = acc
        acc *= int(shape[i])
    sphere_grid = np.full(int(np.prod(shape)), -1, dtype=np.int16)
    for k, sig in enumerate(plan.sigma):
        flat = (sig.as_array() - origin) @ strides
        sphere_grid[flat] = k
    v_grid = np.zeros(int(np.prod(shape)), dtype=np.uint8)
    if len(v_sites):
        flat = (v_sites.as_array() - origin) @ strides
        v_grid[flat] = 1
    return sphere_grid, v_grid, shape, strides, origin


@dataclass
class FlashingBatch:
    """Aggregated flashing traces plus the derived per-shell diagnostics."""

    plan: FlashingPlan
    trials: int
    capped: int
    crossed: int
    violations: int
    violations_relaxed: int
    settled_hist: dict
    passed_all: int
    per_shell_pass: list[float]
    per_shell_pass_conditional: list[float]
    cumulative_pass: list[float]
    seed: SeedSpec
    extra: dict = field(default_factory=dict)


def flashing_traces(z: Site, plan: FlashingPlan, v_sites: SiteSet, seed: SeedSpec,
                    trials: int, step_cap: int = FLASH_STEP_CAP) -> FlashingBatch:
    """Run a batch of flashing traces and aggregate the per-shell statistics."""
    _validate_flashing_inputs(z, plan, v_sites)
    sphere_grid, v_grid, shape, strides, origin = _plan_grids(plan, v_sites)
    n = plan.n
    out_settled = np.empty(trials, dtype=np.int16)
    out_crossed = np.empty(trials, dtype=np.uint8)
    out_capped = np.empty(trials, dtype=np.uint8)
    out_violation = np.empty(trials, dtype=np.uint8)
    out_violation_relaxed = np.empty(trials, dtype=np.uint8)
    out_armed = np.empty(trials, dtype=np.uint64)
    out_closed = np.empty(trials, dtype=np.uint64)
    out_zinv = np.empty(trials, dtype=np.uint64)
    out_steps = np.empty(trials, dtype=np.int64)
    out_arrivals = np.zeros((trials, n, plan.d), dtype=np.int64)
    out_radii = np.zeros((trials, n), dtype=np.float64)
    out_flashes = np.zeros((trials, n, plan.d), dtype=np.int64)
    _flashing_kernel(np.array(z, dtype=np.int64), sphere_grid, v_grid, shape, strides,
                     origin, closed_radius_sq(plan.r - plan.h), plan.delta, n,
                     1.0 / plan.d, seed.master_seed, seed.stream_id, trials, step_cap,
                     out_settled, out_crossed, out_capped, out_violation,
                     out_violation_relaxed, out_armed, out_closed, out_zinv, out_steps,
                     out_arrivals, out_radii, out_flashes)
    ok = out_capped == 0
    closed_bits = out_closed[ok]
    zinv_bits = out_zinv[ok]
    per_shell, per_shell_cond, cumulative = [], [], []
    passed_prefix = np.ones(int(ok.sum()), dtype=bool)
    n_ok = max(int(ok.sum()), 1)
    for k in range(n):
        bit = np.uint64(1) << np.uint64(k)
        determined = (closed_bits & bit) != 0
        passed_k = determined & ((zinv_bits & bit) != 0)
        n_det = max(int(determined.sum()), 1)
        per_shell.append(float(passed_k.sum()) / n_det)
        among = passed_prefix & determined
        per_shell_cond.append(float((passed_k & passed_prefix).sum()) / max(int(among.sum()), 1))
        passed_prefix &= passed_k
        cumulative.append(float(passed_prefix.sum()) / n_ok)
    hist: dict[int, int] = {}
    for v in out_settled[ok]:
        hist[int(v)] = hist.get(int(v), 0) + 1
    return FlashingBatch(
        plan=plan, trials=trials, capped=int(out_capped.sum()),
        crossed=int(out_crossed.sum()), violations=int(out_violation.sum()),
        violations_relaxed=int(out_violation_relaxed.sum()),
        settled_hist=hist, passed_all=int((out_settled[ok] == -1).sum()),
        per_shell_pass=per_shell, per_shell_pass_conditional=per_shell_cond,
        cumulative_pass=cumulative, seed=seed,
        extra={"mean_steps": float(out_steps.mean()), "v_size": len(v_sites)},
    )


def run_flashing(z: Site, plan: FlashingPlan, v_sites: SiteSet, seed: SeedSpec,
                 step_cap: int = FLASH_STEP_CAP) -> FlashingTrace:
    """Simulate one flashing trace (the batched kernel with one trial)."""
    _validate_flashing_inputs(z, plan, v_sites)
    sphere_grid, v_grid, shape, strides, origin = _plan_grids(plan, v_sites)
    n = plan.n
    o_settled = np.empty(1, dtype=np.int16)
    o_crossed = np.empty(1, dtype=np.uint8)
    o_capped = np.empty(1, dtype=np.uint8)
    o_viol = np.empty(1, dtype=np.uint8)
    o_viol_rel = np.empty(1, dtype=np.uint8)
    o_armed = np.empty(1, dtype=np.uint64)
    o_closed = np.empty(1, dtype=np.uint64)
    o_zinv = np.empty(1, dtype=np.uint64)
    o_steps = np.empty(1, dtype=np.int64)
    o_arr = np.zeros((1, n, plan.d), dtype=np.int64)
    o_rad = np.zeros((1, n), dtype=np.float64)
    o_fla = np.zeros((1, n, plan.d), dtype=np.int64)
    _flashing_kernel(np.array(z, dtype=np.int64), sphere_grid, v_grid, shape, strides,
                     origin, closed_radius_sq(plan.r - plan.h), plan.delta, n,
                     1.0 / plan.d, seed.master_seed, seed.stream_id, 1, step_cap,
                     o_settled, o_crossed, o_capped, o_viol, o_viol_rel,
                     o_armed, o_closed, o_zinv, o_steps, o_arr, o_rad, o_fla)
    armed, closed, zinv = int(o_armed[0]), int(o_closed[0]), int(o_zinv[0])
    arrivals = [tuple(int(c) for c in o_arr[0, k]) if armed >> k & 1 else None
                for k in range(n)]
    flashes = [tuple(int(c) for c in o_fla[0, k]) if closed >> k & 1 else None
               for k in range(n)]
    settled = int(o_settled[0])
    return FlashingTrace(
        arrival_sites=arrivals,
        flash_radii=[float(r) for r in o_rad[0]],
        flash_sites=flashes,
        settled_at=settled if settled >= 0 else None,
        crossed=bool(o_crossed[0]),
        capped=bool(o_capped[0]),
        steps=int(o_steps[0]),
        flash_in_v=[bool(zinv >> k & 1) for k in range(n)],
    )


def _validate_flashing_inputs(z: Site, plan: FlashingPlan, v_sites: SiteSet) -> None:
    if len(z) != plan.d:
        raise ValueError("start dimension does not match the plan")
    if v_sites.d != plan.d:
        raise ValueError("V dimension does not match the plan")
    shell = plan.shell()
    if not v_sites.issubset(shell):
        raise ValueError("V must be contained in the shell B(0,r) \\ B(0,r-h)")
    if z not in boundary_sites(BallSpec((0.0,) * plan.d, plan.r)):
        raise ValueError("start must lie on the outer boundary of B(0, r)")


# --- crossing Monte Carlo ------------------------------------------------


def default_start(r: float, d: int = 2) -> Site:
    """A canonical outer-boundary site: just past r on the first axis."""
    return (int(math.floor(r)) + 1,) + (0,) * (d - 1)


def crossing_mc(r: float, h: float, v_sites: SiteSet, z: Site, trials: int,
                seed: SeedSpec, step_cap: int = DEFAULT_STEP_CAP) -> estimate.McEstimate:
    """Monte Carlo estimate of the shell-crossing probability.

    The walk wins (hit) when it enters B(0, r-h) having stayed inside V
    since its first step; stepping anywhere else ends the trial.  Reports
    the decay coordinate x = (h^d / |V|)^(1/(d-1)) alongside the estimate.
    """
    if not 0 < h < r / 2:
        raise ValueError(f"crossing requires 0 < h < r/2, got h={h}, r={r}")
    if len(v_sites) == 0:
        raise ValueError("V is empty: the crossing probability is degenerate, rejected")
    d = v_sites.d
    if len(z) != d:
        raise ValueError("start dimension does not match V")
    shell = shell_sites((0.0,) * d, r, r - h)
    if not v_sites.issubset(shell):
        raise ValueError("V must be contained in the shell B(0,r) \\ B(0,r-h)")
    inner = ball_sites(BallSpec((0.0,) * d, r - h))

    # coded grid: default B (leaving V ends the trial), V walks free, inner ball wins
    half = int(math.ceil(r)) + 2
    shape = np.full(d, 2 * half + 1, dtype=np.int64)
    origin = np.full(d, -half, dtype=np.int64)
    strides = np.empty(d, dtype=np.int64)
    acc = 1
    for i in range(d - 1, -1, -1):
        strides[i] = acc
        acc *= int(shape[i])
    grid = np.full(int(np.prod(shape)), ABSORB_B, dtype=np.int8)
    if len(v_sites):
        grid[(v_sites.as_array() - origin) @ strides] = FREE
    grid[(inner.as_array() - origin) @ strides] = ABSORB_A
    hits, _, caps = _race_kernel(grid, shape, strides, origin,
                                 np.array(z, dtype=np.int64), 2 * d,
                                 seed.master_seed, seed.stream_id, trials, step_cap,
                                 ABSORB_B)
    x = (h**d / len(v_sites)) ** (1.0 / (d - 1))
    return estimate.McEstimate(
        trials=trials, hits=int(hits), cap_count=int(caps),
        metadata={"d": d, "r": r, "h": h, "vol_V": len(v_sites), "x": x,
                  "master_seed": seed.master_seed, "stream_id": seed.stream_id})


def fit_bound(points: list[tuple], use_ci_upper_for_zero: bool = False) -> estimate.FitResult:
    """Fit log p = log C - kappa * x through crossing estimates.

    `points` holds (x, p_hat, (ci_low, ci_high)) triples.  Zero estimates
    carry no log-scale information and are excluded with a warning, unless
    `use_ci_upper_for_zero` substitutes their CI upper bound.
    """
    xs, ys = [], []
    excluded = 0
    for x, p_hat, ci in points:
        if p_hat > 0:
            xs.append(x)
            ys.append(math.log(p_hat))
        elif use_ci_upper_for_zero and ci is not None and ci[1] > 0:
            xs.append(x)
            ys.append(math.log(ci[1]))
        else:
            excluded += 1
    if excluded:
        warnings.warn(f"excluded {excluded} zero-probability points from the fit",
                      stacklevel=2)
    if len(xs) < 3:
        raise ValueError("need at least 3 positive points to fit the bound")
    result = estimate.fit_log_linear(xs, ys)
    result.excluded = excluded
    return result


# --- diagnostics ---------------------------------------------------------


@njit(cache=True)
def _flash_exit_kernel(delta, d_inv, half, counts, master_seed, stream_base, samples):
    """Accumulate exit-site counts for walks flashed from the origin (d=2)."""
    side = 2 * half + 1
    for t in range(samples):
        s = _rng.seed_state(uint64(master_seed), uint64(stream_base + t))
        rr = delta * (_rng.next_unit(s) ** d_inv)
        rr_sq = rr * rr
        x = 0
        y = 0
        while True:
            move = int(_rng.next_u64(s) & uint64(3))
            if move == 0:
                x += 1
            elif move == 1:
                x -= 1
            elif move == 2:
                y += 1
            else:
                y -= 1
            if x * x + y * y > rr_sq:
                counts[(x + half) * side + (y + half)] += 1
                break


@dataclass
class UniformityReport:
    delta: float
    d: int
    samples: int
    interior_radius: float
    max_min_ratio: float
    interior_sites: int
    frequencies: dict


def flash_uniformity_diagnostic(delta: float, d: int, samples: int,
                                seed: SeedSpec) -> UniformityReport:
    """How uniform are flash sites within their ball?

    Walks start at the flash center; the draw-and-exit construction is the
    one used on every sphere arrival.  Reports the max/min ratio of
    per-site landing frequencies over the interior (distance < delta - 1),
    where boundary discretization does not bite.
    """
    if delta < 2:
        raise ValueError("uniformity diagnostic needs delta >= 2")
    if d != 2:
        raise ValueError("uniformity diagnostic is implemented for d=2")
    half = int(math.ceil(delta)) + 2
    side = 2 * half + 1
    counts = np.zeros(side * side, dtype=np.int64)
    _flash_exit_kernel(float(delta), 1.0 / d, half, counts,
                       seed.master_seed, seed.stream_id, samples)
    counts = counts.reshape(side, side)
    # closed comparison: landings start at distance 1, so a strict cutoff
    # would empty the interior at delta = 2
    interior_radius = delta * (1.0 - 1.0 / delta)
    freqs = {}
    interior = []
    for ix in range(side):
        for iy in range(side):
            c = int(counts[ix, iy])
            if c == 0:
                continue
            site = (ix - half, iy - half)
            freqs[site] = c / samples
            if math.sqrt(site[0] ** 2 + site[1] ** 2) <= interior_radius + 1e-9:
                interior.append(c)
    if not interior:
        raise ValueError("no interior landing sites; delta too small")
    ratio = max(interior) / max(min(interior), 1)
    return UniformityReport(delta, d, samples, interior_radius, float(ratio),
                            len(interior), freqs)


@dataclass
class HittingDensityReport:
    delta: float
    samples_per_start: int
    n_starts: int
    kappa_delta: float          # max_y p(y) * delta^(d-1)
    kappa_h: float | None       # same, normalized by h^(d-1) when h given
    max_point_prob: float
    argmax_site: Site
    cap_fraction: float
    per_start: list[dict] = field(repr=False, default_factory=list)


def hitting_density_diagnostic(sigma: SiteSet, delta: float, starts: SiteSet,
                               samples: int, seed: SeedSpec,
                               h_norm: float | None = None,
                               step_cap: int = FLASH_STEP_CAP) -> HittingDensityReport:
    """Estimate the max point mass of the first-hit distribution on a sphere.

    For each start, `samples` walks run to their first visit of `sigma`;
    the largest per-site hit frequency times delta^(d-1) is the fitted
    uniform-hitting constant.  Both the delta and (optional) h
    normalizations are reported.
    """
    d = sigma.d
    sites = sigma.sorted_sites()
    index = {s: i for i, s in enumerate(sites)}
    per_start = []
    worst = 0.0
    argmax: Site = sites[0]
    caps_total = 0
    runs_total = 0
    for j, z in enumerate(starts.sorted_sites()):
        counts, caps = _first_hit_counts(sigma, z, samples, seed.child(j), step_cap)
        caps_total += caps
        runs_total += samples
        landed = samples - caps
        if landed == 0:
            continue
        i_max = int(np.argmax(counts))
        p_max = counts[i_max] / landed
        per_start.append({"start": z, "max_prob": float(p_max),
                          "argmax": sites[i_max], "caps": caps})
        if p_max > worst:
            worst = float(p_max)
            argmax = sites[i_max]
    return HittingDensityReport(
        delta=delta, samples_per_start=samples, n_starts=len(starts),
        kappa_delta=worst * delta ** (d - 1),
        kappa_h=(worst * h_norm ** (d - 1)) if h_norm is not None else None,
        max_point_prob=worst, argmax_site=argmax,
        cap_fraction=caps_total / max(runs_total, 1), per_start=per_start)


@njit(cache=True)
def _first_hit_kernel(target_grid, shape, strides, origin, start, two_d,
                      master_seed, stream_base, n_trials, step_cap, counts):
    caps = 0
    d = len(shape)
    pos = np.empty(d, dtype=np.int64)
    for t in range(n_trials):
        s = _rng.seed_state(uint64(master_seed), uint64(stream_base + t))
        for i in range(d):
            pos[i] = start[i]
        n = 0
        while True:
            if n >= step_cap:
                caps += 1
                break
            move = _rng.next_direction(s, two_d)
            axis = move >> 1
            pos[axis] += 1 - 2 * (move & 1)
            n += 1
            inside = True
            idx = 0
            for i in range(d):
                c = pos[i] - origin[i]
                if c < 0 or c >= shape[i]:
                    inside = False
                    break
                idx += c * strides[i]
            if inside and target_grid[idx] >= 0:
                counts[target_grid[idx]] += 1
                break
    return caps


def _first_hit_counts(sigma: SiteSet, start: Site, samples: int, seed: SeedSpec,
                      step_cap: int):
    sites = sigma.sorted_sites()
    arr = sigma.as_array()
    pts = np.vstack([arr, np.array([start], dtype=np.int64)])
    lo = pts.min(axis=0) - 2
    hi = pts.max(axis=0) + 2
    shape = (hi - lo + 1).astype(np.int64)
    d = len(shape)
    strides = np.empty(d, dtype=np.int64)
    acc = 1
    for i in range(d - 1, -1, -1):
        strides[i] = acc
        acc *= int(shape[i])
    grid = np.full(int(np.prod(shape)), -1, dtype=np.int64)
    for i, s in enumerate(sites):
        grid[(np.array(s) - lo) @ strides] = i
    counts = np.zeros(len(sites), dtype=np.int64)
    caps = _first_hit_kernel(grid, shape, strides, lo, np.array(start, dtype=np.int64),
                             2 * d, seed.master_seed, seed.stream_id, samples,
                             step_cap, counts)
    return counts, int(caps)


# --- bound-driven planning ------------------------------------------------


def fit_counting_constant(plan: FlashingPlan, v_sites: SiteSet, beta: float) -> float:
    """Empirical constant c with sum_k beta * |D_k| * delta <= c * |V|."""
    if len(v_sites) == 0:
        raise ValueError("V must be nonempty")
    total = 0.0
    for sig in plan.sigma:
        total += len(dense_sites(sig, v_sites, plan.delta, beta))
    return beta * plan.delta * total / len(v_sites)


def choose_delta(r: float, h: float, v_size: int, dense: DenseParams, d: int = 2,
                 c: float | None = None) -> FlashingPlan:
    """Smallest half-width delta = h/(2n) with delta^(d-1) >= 2c|V| / (beta^2 h).

    Warns (rather than rejects) when |V| exceeds beta^2 h^d / (2^d c), the
    regime where no admissible subdivision exists and the trivial bound
    takes over; the coarsest plan (n = 1) is returned there.
    """
    c = dense.c_fit if c is None else c
    if not (c > 0):
        raise ValueError("need a positive counting constant c")
    bound = 2.0 * c * v_size / (dense.beta**2 * h)
    if v_size > dense.beta**2 * h**d / (2**d * c):
        warnings.warn(
            f"|V|={v_size} exceeds beta^2 h^d / (2^d c) = "
            f"{dense.beta ** 2 * h ** d / (2 ** d * c):.1f}: no subdivision can meet "
            "the width rule; falling back to n=1", stacklevel=2)
        return FlashingPlan(r, h, 1, d)
    best_n = 1
    for n in range(1, int(math.ceil(h))):
        if (h / (2 * n)) ** (d - 1) >= bound:
            best_n = n
        else:
            break
    return FlashingPlan(r, h, best_n, d)
