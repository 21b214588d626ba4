import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hkelab.cubes import (PushforwardMeasure, build_approx_isometry, christ_cubes,
                          correspondence_distortion, default_tests, gh_upper_bound,
                          identity_isometry, map_distortion, measure_isometry, pushforward,
                          quasi_inverse, verify_cubes, weak_gap, write_isometry)
from hkelab.metric import MetricMeasureSpace, geodesic_space
from hkelab.models import (CARPET_ALPHA, GASKET_ALPHA, GASKET_BETA, gasket_cable, pre_carpet,
                           rescale)

from conftest import cycle_graph, one_point, path_graph, random_connected_graph, two_point

from test_metric import grid_graph


def gasket_space(n):
    return geodesic_space(rescale(gasket_cable(n), 2, GASKET_ALPHA, GASKET_BETA, n))


def brute_gh(a, b):
    """Half the least distortion over all correspondences (tiny spaces only)."""
    cells = list(itertools.product(range(a.size), range(b.size)))
    best = math.inf
    for r in range(1, len(cells) + 1):
        for rel in itertools.combinations(cells, r):
            if {i for i, _ in rel} == set(range(a.size)) and {j for _, j in rel} == set(range(b.size)):
                d = max(abs(a.dist[i, k] - b.dist[j, l]) for i, j in rel for k, l in rel)
                best = min(best, d)
    return best / 2


class TestCubes:
    @pytest.mark.parametrize("space", [
        geodesic_space(grid_graph(6)),
        geodesic_space(rescale(pre_carpet(2), 3, CARPET_ALPHA, 2.0, 2)),
        gasket_space(3),
    ], ids=["grid", "carpet2", "gasket3"])
    def test_partition_and_sandwich(self, space):
        cd = christ_cubes(space, 0.5, 3, scale=float(space.dist.max()))
        chk = verify_cubes(space, cd)
        assert chk.covers and chk.disjoint and chk.sandwich
        assert 0 < cd.a0 <= cd.a1

    def test_carpet_third(self):
        sp = geodesic_space(rescale(pre_carpet(2), 3, CARPET_ALPHA, 2.0, 2))
        cd = christ_cubes(sp, 1 / 3, 2, scale=float(sp.dist.max()))
        assert verify_cubes(sp, cd).ok

    def test_single_point(self):
        cd = christ_cubes(one_point(), 0.5, 2)
        assert verify_cubes(one_point(), cd).ok
        assert all(len(level) == 1 for level in cd.cubes)

    def test_levels_refine_counts(self):
        sp = gasket_space(3)
        cd = christ_cubes(sp, 0.5, 3, scale=1.0)
        counts = [len(c) for c in cd.cubes]
        assert counts == sorted(counts) and counts[0] >= 1

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            christ_cubes(one_point(), 1.0, 2)

    @given(st.integers(3, 20), st.integers(0, 30), st.floats(0.2, 0.8))
    def test_random_graphs(self, n, seed, delta):
        sp = geodesic_space(random_connected_graph(n, seed))
        assert verify_cubes(sp, christ_cubes(sp, delta, 2, scale=float(sp.dist.max()))).ok


class TestIsometries:
    def test_identical_spaces_zero(self):
        sp = gasket_space(2)
        iso = build_approx_isometry(sp, sp)
        assert iso.eps == 0.0 and iso.basepoint_preserved

    def test_identity_pair(self, path5):
        iso = identity_isometry(path5)
        assert iso.eps == 0.0 and iso.net_radius == 0.0

    def test_two_points_to_one(self):
        iso = build_approx_isometry(two_point(), one_point())
        np.testing.assert_array_equal(iso.forward, [0, 0])
        assert iso.distortion_forward == 1.0 and iso.eps == 1.0

    def test_relabelled_cycle_is_exact(self):
        a = geodesic_space(cycle_graph(8))
        perm = np.random.default_rng(0).permutation(8)
        perm = np.concatenate([[0], perm[perm != 0]])
        b = MetricMeasureSpace(a.ids, a.dist[np.ix_(perm, perm)], a.measure[perm], 0)
        iso = build_approx_isometry(a, b)
        assert iso.eps == 0.0
        assert map_distortion(a, b, iso.forward) == 0.0

    def test_measure_isometry_recomputes(self):
        a, b = gasket_space(2), gasket_space(3)
        iso = build_approx_isometry(a, b)
        again = measure_isometry(a, b, iso.forward, quasi_inverse(a, b, iso.forward))
        assert again.distortion_forward == iso.distortion_forward
        assert again.net_radius == iso.net_radius

    def test_gasket_eps_halves(self):
        eps = [build_approx_isometry(gasket_space(n), gasket_space(n + 1)).eps for n in range(1, 5)]
        ratios = np.array(eps[1:]) / np.array(eps[:-1])
        assert np.all((ratios >= 0.3) & (ratios <= 0.7)), eps

    def test_write_isometry(self, tmp_path):
        a, b = two_point(), one_point()
        iso = build_approx_isometry(a, b)
        write_isometry(iso, a, b, tmp_path / "f.csv", tmp_path / "f.json")
        assert (tmp_path / "f.csv").read_text() == "source_id,target_id\n0,0\n1,0\n"
        assert '"eps": 1.0' in (tmp_path / "f.json").read_text()


class TestGromovHausdorff:
    def test_two_points_vs_point(self):
        assert gh_upper_bound(two_point(), one_point()) == 0.5

    def test_identity_zero(self):
        assert gh_upper_bound(two_point(2.0), two_point(2.0)) == 0.0

    def test_symmetric(self):
        a = two_point(1.0)
        b = MetricMeasureSpace((0, 1, 2), np.array([[0, 2, 3], [2, 0, 1], [3, 1, 0]], float),
                               np.ones(3))
        assert gh_upper_bound(a, b) == gh_upper_bound(b, a)

    def test_matches_brute_force(self):
        a = two_point(1.0)
        b = MetricMeasureSpace((0, 1, 2), np.array([[0, 2, 3], [2, 0, 1], [3, 1, 0]], float),
                               np.ones(3))
        assert gh_upper_bound(a, b) == pytest.approx(brute_gh(a, b))

    def test_cycles(self):
        a, b = geodesic_space(cycle_graph(3)), geodesic_space(cycle_graph(4))
        assert 0 < gh_upper_bound(a, b) <= 0.5

    def test_large_pair_uses_maps(self):
        a, b = gasket_space(1), gasket_space(2)
        bound = gh_upper_bound(a, b)
        iso = build_approx_isometry(a, b)
        assert 0 < bound <= max(iso.distortion_forward, iso.distortion_backward,
                                iso.roundtrip_source + iso.roundtrip_target + iso.net_radius)

    def test_correspondence_distortion(self):
        a, b = two_point(1.0), two_point(3.0)
        assert correspondence_distortion(a, b, [[0, 0], [1, 1]]) == 2.0


class TestMeasures:
    def test_pushforward_sums_fibres(self):
        pf = pushforward([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1], [0, 1, 2], 3)
        np.testing.assert_array_equal(pf.masses, [3.0, 3.0, 0.0])
        assert pf.total == 6.0 and pf.source_mass == 6.0

    @given(st.integers(2, 15), st.integers(0, 40))
    def test_pushforward_preserves_mass(self, n, seed):
        rng = np.random.default_rng(seed)
        m = rng.uniform(0.1, 2, n)
        f = rng.integers(0, 5, n)
        pf = pushforward(m, f, np.arange(n), 5)
        assert pf.total == pytest.approx(m.sum(), rel=1e-14)

    def test_weak_gap_zero_for_same_measure(self, path5):
        tests = default_tests(path5, 2.0)
        gaps = weak_gap(path5.measure, PushforwardMeasure(path5.measure.copy(), np.arange(5), 5.0),
                        tests)
        assert set(gaps) == {"one", "dist_capped", "bump_q1", "bump_q2", "bump_q3"}
        assert all(v == 0.0 for v in gaps.values())

    def test_weak_gap_mass_shift(self, path5):
        tests = default_tests(path5, 2.0)
        nu = path5.measure.copy()
        nu[0] += 0.5
        assert weak_gap(path5.measure, nu, tests)["one"] == 0.5

    def test_default_tests_shapes(self):
        sp = geodesic_space(path_graph(9, 0.25))
        tests = default_tests(sp, 1.0)
        assert tests["dist_capped"].max() == 1.0
        assert all(np.all(v >= 0) for v in tests.values())
