import pytest

from idlalab.flashing import crossing_mc
from idlalab.lattice import BallSpec, SiteSet, ball_sites, boundary_sites, neighbors, shell_sites
from idlalab.oracle import (
    AbsorbingInstance,
    crossing_instance,
    exact_cluster_distribution,
    exact_race_probability,
    solve_field,
)
from idlalab.walk import SeedSpec, race_counts

from conftest import assert_within_sigma


def full_shell(r, h, d=2):
    return shell_sites((0.0,) * d, r, r - h)


class TestValidation:
    def test_overlapping_sets_rejected(self):
        s = SiteSet([(0, 0)])
        with pytest.raises(ValueError):
            AbsorbingInstance(s, s, SiteSet([], d=2), (1, 1))

    def test_too_large_rejected(self):
        big = SiteSet([(i, j) for i in range(150) for j in range(150)])
        with pytest.raises(ValueError, match="too large"):
            AbsorbingInstance(big, SiteSet([(-1, -1)]), SiteSet([], d=2), (0, 0))

    def test_isolated_start_rejected(self):
        inst = AbsorbingInstance(SiteSet([(0, 0)]), SiteSet([(1, 0)]),
                                 SiteSet([], d=2), (50, 50))
        with pytest.raises(ValueError, match="start"):
            exact_race_probability(inst)


class TestExactProbability:
    def test_no_permitted_all_neighbors_b(self):
        # first step decides; every neighbor escapes to B
        inst = AbsorbingInstance(SiteSet([], d=2), SiteSet([(9, 9)]),
                                 SiteSet([(1, 0), (-1, 0), (0, 1), (0, -1)]), (0, 0))
        assert exact_race_probability(inst) == 0.0

    def test_first_step_split(self):
        # two neighbors absorb in A, two in B, no transient sites: p = 1/2
        inst = AbsorbingInstance(SiteSet([], d=2), SiteSet([(1, 0), (-1, 0)]),
                                 SiteSet([(0, 1), (0, -1)]), (0, 0))
        assert exact_race_probability(inst) == pytest.approx(0.5)

    def test_symmetric_instance_half(self):
        # a fully enclosed ball whose absorbing hemispheres swap under the
        # point reflection x -> -x fixing the start: p is exactly 1/2
        permitted = ball_sites(BallSpec((0.0, 0.0), 3))
        wall = boundary_sites(BallSpec((0.0, 0.0), 3))
        a = SiteSet([s for s in wall if s > (0,) * 2], d=2)
        b = SiteSet([s for s in wall if s < (0,) * 2], d=2)
        assert len(a) + len(b) == len(wall)
        p = exact_race_probability(AbsorbingInstance(permitted, a, b, (0, 0)))
        assert p == pytest.approx(0.5, abs=1e-10)

    def test_monotone_in_absorb_a(self):
        # converting two former escape sites into absorb_a cannot lower p
        permitted = SiteSet([(x, y) for x in range(-3, 4) for y in range(-2, 3)])
        a1 = SiteSet([(4, y) for y in range(-2, 3)])
        a2 = a1.union(SiteSet([(0, 3), (0, -3)]))
        p1 = exact_race_probability(AbsorbingInstance(permitted, a1, SiteSet([], d=2), (0, 0)))
        p2 = exact_race_probability(AbsorbingInstance(permitted, a2, SiteSet([], d=2), (0, 0)))
        assert p2 > p1

    def test_nested_crossing_targets(self):
        # same transient set, absorb_a grown by one ring: p must not decrease
        v = full_shell(5, 3)
        start = (5, 0)
        p_small = exact_race_probability(crossing_instance(5, 2.4, v, start))
        p_big = exact_race_probability(crossing_instance(5, 3.0, v, start))
        # crossing_instance(r, h): absorb_a = B(0, r-h); larger h = smaller target
        assert p_big <= p_small + 1e-12

    def test_harmonicity_residual(self):
        inst = crossing_instance(6, 2.5, full_shell(6, 2.5), (7, 0))
        sol = solve_field(inst)
        assert sol.residual < 1e-9

    def test_output_in_unit_interval(self):
        for start in ((3, 0), (4, 0), (2, 2)):
            inst = crossing_instance(3, 2, full_shell(3, 2), start)
            assert 0.0 <= exact_race_probability(inst) <= 1.0

    def test_spec_instance_r3_h2_vs_mc(self, master_seed):
        # r=3, h=2, V the full shell, start (3,0): exact value vs an
        # independently-coded race over explicit absorbing sets
        v = full_shell(3, 2)
        inner = ball_sites(BallSpec((0.0, 0.0), 1))
        inst = crossing_instance(3, 2, v, (3, 0))
        exact = exact_race_probability(inst)
        # explicit B: anything adjacent to the region that is not V or inner
        b_sites = set()
        for s in list(v) + [(3, 0)]:
            for nb in neighbors(s):
                if nb not in v and nb not in inner:
                    b_sites.add(nb)
        n = 400_000
        a, b, c = race_counts((3, 0), inner, SiteSet(b_sites), SeedSpec(master_seed, 1),
                              trials=n, outside_is_b=True)
        assert c == 0
        assert_within_sigma(a / n, exact, n, 3)

    def test_crossing_mc_agrees_small_geometry(self, master_seed):
        v = full_shell(6, 2.5)
        start = (7, 0)
        exact = exact_race_probability(crossing_instance(6, 2.5, v, start))
        n = 300_000
        est = crossing_mc(6, 2.5, v, start, n, SeedSpec(master_seed, 2))
        assert est.cap_count == 0
        assert_within_sigma(est.p_hat, exact, n, 3)

    def test_solver_switch_consistency(self):
        import idlalab.oracle as om
        inst = crossing_instance(10, 4, full_shell(10, 4), (11, 0))
        dense = solve_field(inst)
        assert dense.solver == "dense"
        old = om.DENSE_LIMIT
        om.DENSE_LIMIT = 1
        try:
            sweep = solve_field(inst)
        finally:
            om.DENSE_LIMIT = old
        assert sweep.solver == "gauss-seidel"
        assert sweep.probability == pytest.approx(dense.probability, abs=1e-8)
        assert sweep.residual < 1e-9


class TestInstanceIO:
    def test_roundtrip(self):
        inst = crossing_instance(4, 1.5, full_shell(4, 1.5), (5, 0))
        back = AbsorbingInstance.from_text(inst.to_text())
        assert back.permitted == inst.permitted
        assert back.absorb_a == inst.absorb_a
        assert back.absorb_b == inst.absorb_b
        assert back.start == inst.start
        assert exact_race_probability(back) == pytest.approx(exact_race_probability(inst))

    def test_missing_start_rejected(self):
        with pytest.raises(ValueError, match="START"):
            AbsorbingInstance.from_text("[PERMITTED]\nd=2 n=0\n")


class TestExactClusterDistribution:
    def test_single_explorer(self):
        assert exact_cluster_distribution([(2, 3)]) == {((2, 3),): pytest.approx(1.0)}

    def test_two_at_origin(self):
        dist = exact_cluster_distribution([(0, 0), (0, 0)])
        assert len(dist) == 4
        for shape, p in dist.items():
            assert p == pytest.approx(0.25)
            assert (0, 0) in shape

    def test_probabilities_sum_to_one(self):
        dist = exact_cluster_distribution([(0, 0)] * 4)
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
        assert all(len(shape) == 4 for shape in dist)

    def test_three_at_origin_hand_check(self):
        # third explorer walks on {0, N}; exit-from-0 probability f solves
        # f = 3/4 + (1/16) f, i.e. f = 4/5, and exits land uniformly over the
        # three free neighbors of the exit state
        dist = exact_cluster_distribution([(0, 0), (0, 0), (0, 0)])
        assert len(dist) == 18
        f = (3 / 4) / (1 - 1 / 16)
        # {0, (1,0), (0,-1)} arises from N=(1,0) or N=(0,-1), each then
        # exiting from the origin onto the other site: 2 * 1/4 * f/3
        ell = tuple(sorted([(0, 0), (1, 0), (0, -1)]))
        assert dist[ell] == pytest.approx(2 * 0.25 * f / 3, abs=1e-12)
        # {0, (1,0), (2,0)} arises only from N=(1,0) exiting from N outward
        straight = tuple(sorted([(0, 0), (1, 0), (2, 0)]))
        assert dist[straight] == pytest.approx(0.25 * (1 - f) / 3, abs=1e-12)

    def test_order_independence(self):
        # the enumerated law realizes the order-independence exactly
        a = exact_cluster_distribution([(0, 0), (1, 0), (0, 0)])
        b = exact_cluster_distribution([(1, 0), (0, 0), (0, 0)])
        assert set(a) == set(b)
        for shape in a:
            assert a[shape] == pytest.approx(b[shape], abs=1e-12)

    def test_too_many_rejected(self):
        with pytest.raises(ValueError):
            exact_cluster_distribution([(0, 0)] * 10)
