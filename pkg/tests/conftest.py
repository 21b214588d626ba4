import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hkelab.metric import MetricMeasureSpace, WeightedGraph, geodesic_space

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def path_graph(n: int, length: float = 1.0, measure=None) -> WeightedGraph:
    """Path ``v0 - v1 - ... - v(n-1)`` with unit conductances."""
    edges = [(i, i + 1) for i in range(n - 1)]
    m = np.ones(n) if measure is None else np.asarray(measure, dtype=float)
    return WeightedGraph(tuple(range(n)), np.array(edges, dtype=np.int64).reshape(-1, 2),
                         np.full(n - 1, length), np.ones(n - 1), m,
                         coords=np.stack([np.arange(n) * length, np.zeros(n)], axis=1))


def cycle_graph(n: int) -> WeightedGraph:
    edges = [(i, (i + 1) % n) for i in range(n)]
    return WeightedGraph(tuple(range(n)), np.array(edges), np.ones(n), np.ones(n), np.ones(n))


def star_graph(leaves: int) -> WeightedGraph:
    edges = [(0, i) for i in range(1, leaves + 1)]
    return WeightedGraph(tuple(range(leaves + 1)), np.array(edges), np.ones(leaves),
                         np.ones(leaves), np.ones(leaves + 1))


def random_connected_graph(n: int, seed: int, extra: int = 3) -> WeightedGraph:
    """Random spanning tree plus ``extra`` chords, random positive weights."""
    rng = np.random.default_rng(seed)
    edges = {(int(rng.integers(i)), i) for i in range(1, n)}
    while len(edges) < n - 1 + extra and len(edges) < n * (n - 1) // 2:
        a, b = sorted(int(x) for x in rng.choice(n, 2, replace=False))
        edges.add((a, b))
    e = np.array(sorted(edges))
    return WeightedGraph(tuple(range(n)), e, rng.uniform(0.5, 2.0, len(e)),
                         rng.uniform(0.5, 2.0, len(e)), rng.uniform(0.5, 2.0, n))


def two_point(d: float = 1.0, masses=(1.0, 1.0)) -> MetricMeasureSpace:
    return MetricMeasureSpace((0, 1), np.array([[0.0, d], [d, 0.0]]), np.array(masses, float))


def one_point(mass: float = 1.0) -> MetricMeasureSpace:
    return MetricMeasureSpace((0,), np.zeros((1, 1)), np.array([mass]))


@pytest.fixture
def path5():
    return geodesic_space(path_graph(5))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        passed, detail = RESULTS[k]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {k:2d}: {detail}")
