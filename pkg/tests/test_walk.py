import numpy as np
import pytest

from idlalab.lattice import BallSpec, SiteSet, ball_sites, boundary_sites
from idlalab.oracle import AbsorbingInstance, exact_race_probability
from idlalab.walk import RaceOutcome, SeedSpec, WalkState, race, race_counts, step, walk_path

from conftest import assert_within_sigma


class TestStep:
    def test_moves_to_nearest_neighbor(self):
        rng = SeedSpec(3).numpy_rng()
        for _ in range(200):
            s = step(WalkState((0, 0)), rng)
            assert s.position in {(1, 0), (-1, 0), (0, 1), (0, -1)}

    def test_step_count_increments(self):
        rng = SeedSpec(4).numpy_rng()
        s = WalkState((0, 0, 0))
        for n in range(1, 20):
            s = step(s, rng)
            assert s.step_count == n

    @pytest.mark.parametrize("d", [2, 3])
    def test_direction_frequencies(self, d, master_seed):
        # binomial 4-sigma band around 1/(2d) per direction over 1e6 steps
        n = 1_000_000
        counts = np.zeros(2 * d, dtype=int)
        state = WalkState((0,) * d)
        prev = state.position
        xoshiro = SeedSpec(master_seed, 18).walk_state()
        for _ in range(n):
            state = step(state, xoshiro)
            diff = tuple(a - b for a, b in zip(state.position, prev))
            axis = next(i for i, v in enumerate(diff) if v != 0)
            counts[2 * axis + (0 if diff[axis] > 0 else 1)] += 1
            prev = state.position
        for c in counts:
            assert_within_sigma(c / n, 1 / (2 * d), n, 4)

    def test_parity_alternates_d2(self):
        rng = SeedSpec(5).walk_state()
        s = WalkState((0, 0))
        for n in range(1, 50):
            s = step(s, rng)
            assert (abs(s.position[0]) + abs(s.position[1])) % 2 == n % 2


class TestDeterminism:
    def test_same_seed_same_path(self):
        a = walk_path((2, -1), 500, SeedSpec(99, 5))
        b = walk_path((2, -1), 500, SeedSpec(99, 5))
        assert a == b

    def test_different_stream_different_path(self):
        a = walk_path((0, 0), 100, SeedSpec(99, 5))
        b = walk_path((0, 0), 100, SeedSpec(99, 6))
        assert a != b

    def test_race_outcome_reproducible(self):
        A = ball_sites(BallSpec((0.0, 0.0), 1))
        B = boundary_sites(BallSpec((0.0, 0.0), 4))
        outs = {race((2, 0), A, B, SeedSpec(123, 9)) for _ in range(5)}
        assert len(outs) == 1

    def test_batch_matches_singles(self):
        A = ball_sites(BallSpec((0.0, 0.0), 1))
        B = boundary_sites(BallSpec((0.0, 0.0), 4))
        a, b, c = race_counts((2, 0), A, B, SeedSpec(7, 100), trials=40)
        singles = [race((2, 0), A, B, SeedSpec(7, 100 + t)) for t in range(40)]
        assert a == sum(o is RaceOutcome.A_FIRST for o in singles)
        assert b == sum(o is RaceOutcome.B_FIRST for o in singles)
        assert c == 0


class TestRace:
    def test_neighbors_win_at_step_one(self):
        nb = SiteSet([(1, 0), (-1, 0), (0, 1), (0, -1)])
        far = SiteSet([(9, 9)])
        for t in range(20):
            assert race((0, 0), nb, far, SeedSpec(11, t)) is RaceOutcome.A_FIRST

    def test_start_inside_target_not_decided_at_step_zero(self):
        # hitting times start at n=1: standing on A does not win by itself
        A = SiteSet([(0, 0)])
        nb = SiteSet([(1, 0), (-1, 0), (0, 1), (0, -1)])
        wins = sum(race((0, 0), A, nb, SeedSpec(13, t)) is RaceOutcome.A_FIRST
                   for t in range(200))
        assert wins == 0  # every first step lands in B

    def test_tie_break_a_wins(self):
        both = SiteSet([(1, 0), (-1, 0), (0, 1), (0, -1)])
        assert race((0, 0), both, both, SeedSpec(1, 0)) is RaceOutcome.A_FIRST

    def test_cap_counted_separately(self):
        # unreachable-by-cap targets: tiny cap forces CAP outcomes
        A = SiteSet([(50, 50)])
        B = SiteSet([(-50, -50)])
        a, b, c = race_counts((0, 0), A, B, SeedSpec(2, 0), trials=25, step_cap=10)
        assert c == 25 and a == 0 and b == 0

    def test_step_cap_validation(self):
        A = SiteSet([(1, 0)])
        with pytest.raises(ValueError):
            race_counts((0, 0), A, A, SeedSpec(1), trials=1, step_cap=0)

    def test_mc_matches_oracle(self, master_seed):
        # reference race: start (3,0), A = B(0,1), B = boundary of B(0,5)
        A = ball_sites(BallSpec((0.0, 0.0), 1))
        B = boundary_sites(BallSpec((0.0, 0.0), 5))
        permitted = ball_sites(BallSpec((0.0, 0.0), 5)).difference(A)
        exact = exact_race_probability(AbsorbingInstance(permitted, A, B, (3, 0)))
        n = 400_000
        a, b, c = race_counts((3, 0), A, B, SeedSpec(master_seed, 0), trials=n)
        assert c == 0
        assert_within_sigma(a / n, exact, n, 3)

    def test_cap_rate_shrinks_with_cap(self):
        A = SiteSet([(6, 0)])
        B = SiteSet([(-6, 0)])
        caps = []
        for cap in (10, 100, 10_000):
            _, _, c = race_counts((0, 0), A, B, SeedSpec(3, 0), trials=300, step_cap=cap)
            caps.append(c)
        assert caps[0] >= caps[1] >= caps[2]
