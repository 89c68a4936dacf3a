"""Simple-random-walk engine: deterministic seeding and hitting-time races.

Hitting times follow the convention ``T(S) = inf{n >= 1 : walk(n) in S}``:
the start site is never examined at step 0.  This matters for crossing
events whose start lies inside one of the competing targets; it is applied
uniformly by every kernel in the package.

A race runs a walk until it first enters one of two absorbing families or a
step cap fires.  CAP outcomes are always counted separately and never folded
into either side.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit, uint64

from . import _rng
from .lattice import Site, SiteSet

DEFAULT_STEP_CAP = 100_000_000

# absorption codes used by the race kernels
FREE = 0
ABSORB_A = 1
ABSORB_B = 2


class RaceOutcome(enum.Enum):
    A_FIRST = "A_FIRST"
    B_FIRST = "B_FIRST"
    CAP = "CAP"


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus a stream index; the unit of reproducibility.

    Identical (master_seed, stream_id) pairs give bit-identical walks.
    Trials of an experiment use consecutive stream ids, so results do not
    depend on how trials are sharded over threads.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.master_seed < 0 or self.stream_id < 0:
            raise ValueError("seeds must be nonnegative")
        # normalize into int64-safe range for the kernels
        object.__setattr__(self, "master_seed", self.master_seed & 0x3FFFFFFFFFFFFFFF)
        object.__setattr__(self, "stream_id", self.stream_id & 0x3FFFFFFFFFFFFFFF)

    def child(self, index: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, _rng.derive_stream(self.stream_id, index))

    def numpy_rng(self) -> np.random.Generator:
        return _rng.philox_generator(self.master_seed, self.stream_id)

    def walk_state(self) -> np.ndarray:
        return _rng.seed_state(self.master_seed, self.stream_id)

    def metadata(self) -> dict:
        return {"master_seed": self.master_seed, "stream_id": self.stream_id,
                "rng": "philox4x64 (distributions) / splitmix64+xoshiro256++ (walk steps)"}


@dataclass(frozen=True)
class WalkState:
    """Position plus how many steps produced it."""

    position: Site
    step_count: int = 0


def step(state: WalkState, rng) -> WalkState:
    """One nearest-neighbor move, each of the 2d directions with prob 1/(2d).

    ``rng`` is either a numpy Generator or a xoshiro state array from
    ``SeedSpec.walk_state()``; both advance deterministically.
    """
    d = len(state.position)
    if isinstance(rng, np.ndarray):
        direction = _rng.next_direction(rng, 2 * d)
    else:
        direction = int(rng.integers(0, 2 * d))
    axis, sign = direction >> 1, 1 - 2 * (direction & 1)
    pos = list(state.position)
    pos[axis] += sign
    return WalkState(tuple(pos), state.step_count + 1)


@njit(cache=True)
def _race_kernel(code_grid, shape, strides, origin, start, two_d,
                 master_seed, stream_base, n_trials, step_cap, outside_code):
    """Race n_trials independent walks through a coded grid.

    code_grid is flat int8: FREE keeps walking, ABSORB_A / ABSORB_B finish
    the trial.  Sites outside the grid take outside_code (FREE lets the walk
    wander off-grid and come back).  Returns (a_hits, b_hits, caps).
    """
    d = len(shape)
    a_hits = 0
    b_hits = 0
    caps = 0
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
            direction = _rng.next_direction(s, two_d)
            axis = direction >> 1
            pos[axis] += 1 - 2 * (direction & 1)
            n += 1
            # resolve the code at the new position
            code = outside_code
            inside = True
            idx = 0
            for i in range(d):
                c = pos[i] - origin[i]
                if c < 0 or c >= shape[i]:
                    inside = False
                    break
                idx += c * strides[i]
            if inside:
                code = code_grid[idx]
            if code == ABSORB_A:
                a_hits += 1
                break
            if code == ABSORB_B:
                b_hits += 1
                break
    return a_hits, b_hits, caps


def _coded_grid(target_a: SiteSet, target_b: SiteSet, extra_margin: int = 2):
    """Flat int8 grid covering both targets; A wins ties by being written last."""
    d = target_a.d
    pts = [target_a.as_array(), target_b.as_array()]
    pts = [p for p in pts if len(p)]
    if not pts:
        raise ValueError("race needs at least one nonempty target")
    allpts = np.concatenate(pts, axis=0)
    lo = allpts.min(axis=0) - extra_margin
    hi = allpts.max(axis=0) + extra_margin
    shape = (hi - lo + 1).astype(np.int64)
    grid = np.zeros(int(np.prod(shape)), dtype=np.int8)
    strides = np.empty(d, dtype=np.int64)
    acc = 1
    for i in range(d - 1, -1, -1):
        strides[i] = acc
        acc *= int(shape[i])

    def put(sites: SiteSet, code: int) -> None:
        if len(sites) == 0:
            return
        rel = sites.as_array() - lo
        flat = rel @ strides
        grid[flat] = code

    put(target_b, ABSORB_B)
    put(target_a, ABSORB_A)  # tie-break: A wins on overlap
    return grid, shape, strides, lo.astype(np.int64)


def race_counts(start: Site, target_a: SiteSet, target_b: SiteSet, seed: SeedSpec,
                trials: int, step_cap: int = DEFAULT_STEP_CAP,
                outside_is_b: bool = False) -> tuple[int, int, int]:
    """Run `trials` races with per-trial streams; returns (a, b, cap) counts.

    Trial t uses stream ``seed.stream_id + t``.  With ``outside_is_b`` every
    site beyond the targets' bounding box absorbs as B; otherwise the walk
    keeps going out there (and the step cap guards transient escapes).
    """
    if step_cap <= 0:
        raise ValueError("step_cap must be positive")
    grid, shape, strides, origin_arr = _coded_grid(target_a, target_b)
    d = len(shape)
    if len(start) != d:
        raise ValueError(f"dimension mismatch: start has d={len(start)}, targets d={d}")
    outside = ABSORB_B if outside_is_b else FREE
    a, b, c = _race_kernel(grid, shape, strides, origin_arr,
                           np.array(start, dtype=np.int64), 2 * d,
                           seed.master_seed, seed.stream_id, trials, step_cap, outside)
    return int(a), int(b), int(c)


def race(start: Site, target_a: SiteSet, target_b: SiteSet, seed: SeedSpec,
         step_cap: int = DEFAULT_STEP_CAP) -> RaceOutcome:
    """Which target does the walk enter first?  (A wins ties.)

    Uses the n >= 1 hitting convention: a start inside a target does not
    decide the race at step 0.
    """
    a, b, c = race_counts(start, target_a, target_b, seed, trials=1, step_cap=step_cap)
    if a:
        return RaceOutcome.A_FIRST
    if b:
        return RaceOutcome.B_FIRST
    return RaceOutcome.CAP


def walk_path(start: Site, n_steps: int, seed: SeedSpec) -> list[Site]:
    """The first n_steps sites of the seeded walk (testing hook)."""
    state = WalkState(start)
    rng = seed.walk_state()
    path = [start]
    for _ in range(n_steps):
        state = step(state, rng)
        path.append(state.position)
    return path
