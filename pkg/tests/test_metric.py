import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hkelab.metric import (TRIANGLE_RTOL, GraphValidationError, WeightedGraph, annulus_ratio,
                           ball, ball_masses, closed_ball, covering_radius, diameter,
                           diameter_sequence_gap, epsilon_net, geodesic_space, triangle_check,
                           volume_regularity)
from hkelab.models import (GASKET_ALPHA, GASKET_BETA, gasket_cable, nearest_vertex, pre_carpet,
                           rescale)
from hkelab.profiles import PiecewisePower, VolumeProfile

from conftest import one_point, path_graph, random_connected_graph, two_point


def grid_graph(k: int) -> WeightedGraph:
    pts = [(i, j) for i in range(k) for j in range(k)]
    pos = {p: n for n, p in enumerate(pts)}
    edges = [(pos[(i, j)], pos[(i + 1, j)]) for i in range(k - 1) for j in range(k)]
    edges += [(pos[(i, j)], pos[(i, j + 1)]) for i in range(k) for j in range(k - 1)]
    m = len(edges)
    return WeightedGraph(tuple(pts), np.array(edges), np.ones(m), np.ones(m), np.ones(len(pts)))


class TestGeodesicSpace:
    def test_grid_diagonal_two_steps(self):
        g = grid_graph(2)
        sp = geodesic_space(g)
        assert sp.dist[g.index((0, 0)), g.index((1, 1))] == 2.0

    def test_single_edge(self):
        sp = geodesic_space(path_graph(2))
        np.testing.assert_array_equal(sp.dist, [[0.0, 1.0], [1.0, 0.0]])

    def test_pre_carpet_level_one_corner_to_corner(self):
        g = pre_carpet(1)
        assert g.n_vertices == 16 and g.n_edges == 24
        sp = geodesic_space(g)
        a, b = nearest_vertex(g, (0, 0)), nearest_vertex(g, (1, 1))
        assert sp.dist[a, b] == pytest.approx(2.0, abs=1e-15)

    def test_disconnected_lists_component(self):
        with pytest.raises(GraphValidationError, match="disconnected"):
            WeightedGraph((0, 1, 2), np.array([[0, 1]]), [1.0], [1.0], np.ones(3))

    def test_measure_copied(self):
        g = random_connected_graph(7, seed=1)
        sp = geodesic_space(g)
        np.testing.assert_array_equal(sp.measure, g.measure)

    def test_triangle_exact_on_random_graphs(self):
        for seed in range(5):
            sp = geodesic_space(random_connected_graph(30, seed, extra=20))
            excess, _ = triangle_check(sp.dist)
            assert excess <= TRIANGLE_RTOL * sp.dist.max()


class TestBall:
    def test_two_point_strict(self):
        sp = two_point()
        assert list(ball(sp, 0, 1.0)) == [0]
        assert list(ball(sp, 0, 1.5)) == [0, 1]

    def test_path_center(self, path5):
        assert list(ball(path5, 2, 2.0)) == [1, 2, 3]
        assert list(closed_ball(path5, 2, 2.0)) == [0, 1, 2, 3, 4]

    @given(st.floats(0.0, 6.0), st.floats(0.0, 6.0))
    def test_monotone_in_radius(self, r1, r2):
        sp = geodesic_space(path_graph(7, 0.7))
        lo, hi = sorted((r1, r2))
        assert set(ball(sp, 3, lo)) <= set(ball(sp, 3, hi))


class TestEpsilonNet:
    def test_path(self, path5):
        net = epsilon_net(path5, 1.5)
        assert len(net) == 3
        assert covering_radius(path5, net) <= 1.5

    def test_large_eps_single_point(self, path5):
        assert len(epsilon_net(path5, 4.0)) == 1

    def test_gasket_level_two(self):
        g = rescale(gasket_cable(2), 2, GASKET_ALPHA, GASKET_BETA, 2)
        sp = geodesic_space(g)
        net = epsilon_net(sp, 0.5)
        assert 3 <= len(net) <= 15
        assert covering_radius(sp, net) <= 0.5

    @given(st.integers(4, 25), st.integers(0, 50), st.floats(0.2, 3.0))
    def test_cover_and_separation(self, n, seed, eps):
        sp = geodesic_space(random_connected_graph(n, seed))
        net = epsilon_net(sp, eps, seed=seed)
        assert covering_radius(sp, net) <= eps
        d = sp.dist[np.ix_(net, net)]
        assert np.all(d[~np.eye(len(net), dtype=bool)] > eps / 2)
        np.testing.assert_array_equal(net, epsilon_net(sp, eps, seed=seed))


class TestVolumeRegularity:
    def test_path_linear_profile(self):
        sp = geodesic_space(path_graph(40))
        V = VolumeProfile(1.0, 1.0)
        rep = volume_regularity(sp, V, np.linspace(1.5, 20, 12))
        assert rep.C_v <= 3.0

    def test_single_point(self):
        sp = one_point(2.0)
        V = PiecewisePower(1.0, 1.0)
        grid = np.array([0.5, 1.0, 2.0])
        rep = volume_regularity(sp, V, grid)
        ratios = np.maximum(2.0 / V(grid), V(grid) / 2.0)
        assert rep.C_v == pytest.approx(ratios.max())

    def test_pre_carpet_level_two_bounded(self):
        sp = geodesic_space(rescale(pre_carpet(2), 3, 2.0, 2.0, 2))
        rep = volume_regularity(sp, VolumeProfile(2.0, 2.0), np.geomspace(0.15, 0.9, 6))
        assert math.isfinite(rep.C_v) and rep.C_v <= 10
        assert rep.passed

    def test_ball_masses_match_enumeration(self):
        sp = geodesic_space(random_connected_graph(12, 3))
        radii = [0.3, 1.0, 2.5]
        got = ball_masses(sp, radii)
        for x in range(sp.size):
            for k, r in enumerate(radii):
                assert got[x, k] == pytest.approx(sp.measure[ball(sp, x, r)].sum(), rel=1e-14)


class TestAnnulus:
    def test_whole_ball(self, path5):
        res = annulus_ratio(path5, 2, 0.0, 2.5)
        assert res.ratio <= 1.0 <= 6 ** res.gamma

    def test_fine_interval_grid(self):
        n = 1001
        sp = geodesic_space(path_graph(n, 1.0 / (n - 1), measure=np.full(n, 1.0 / n)))
        z = n // 2
        res = annulus_ratio(sp, z, 0.25, 0.5, C_v=1.0)
        assert res.ratio == pytest.approx(0.5, abs=0.01)
        assert res.gamma == pytest.approx(math.log(2) / math.log(3))
        assert res.bound == pytest.approx(2.0, abs=0.01)
        assert not res.exceeds

    def test_thin_shell_is_sphere(self, path5):
        res = annulus_ratio(path5, 2, 1.0 - 1e-9, 1.0 + 1e-9)
        assert res.ratio == pytest.approx(2 / 3)

    def test_empty_ball_rejected(self, path5):
        with pytest.raises(ValueError):
            annulus_ratio(path5, 2, 0.0, 0.0)


class TestDiameter:
    def test_two_point(self):
        assert diameter(two_point()) == 1.0

    def test_identical_sequence(self, path5):
        np.testing.assert_array_equal(diameter_sequence_gap([path5] * 3), 0.0)

    def test_gasket_levels_decay(self):
        spaces = [geodesic_space(rescale(gasket_cable(n), 2, GASKET_ALPHA, GASKET_BETA, n))
                  for n in range(1, 5)]
        gaps = diameter_sequence_gap(spaces)
        assert np.all(np.diff(gaps) <= 0)
