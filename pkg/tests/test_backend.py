import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import hkelab
from hkelab import _core_py
from hkelab._backend import as_index, as_matrix, core
from hkelab.cubes import build_approx_isometry
from hkelab.metric import geodesic_space
from hkelab.models import GASKET_ALPHA, GASKET_BETA, gasket_cable, rescale

from conftest import random_connected_graph

compiled = pytest.importorskip("hkelab._core")


@pytest.fixture
def python_backend():
    before = hkelab.get_backend()
    hkelab.set_backend("python")
    yield
    hkelab.set_backend(before)


def spaces(seed, n=18):
    a = geodesic_space(random_connected_graph(n, seed))
    b = geodesic_space(random_connected_graph(n + 3, seed + 100))
    return as_matrix(a.dist), as_matrix(b.dist)


class TestSelection:
    def test_compiled_is_default(self):
        assert "compiled" in hkelab.available_backends()
        assert hkelab.get_backend() == "compiled"

    def test_unknown(self):
        with pytest.raises(ValueError):
            hkelab.set_backend("fortran")

    def test_switch(self, python_backend):
        assert core.farthest_point_order is _core_py.farthest_point_order


class TestBitIdentical:
    @given(st.integers(0, 200))
    def test_farthest_point_order(self, seed):
        da, _ = spaces(seed)
        prio = as_index(np.random.default_rng(seed).permutation(len(da)))
        o1, r1 = compiled.farthest_point_order(da, 0, prio)
        o2, r2 = _core_py.farthest_point_order(da, 0, prio)
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(r1, r2)

    @given(st.integers(0, 200))
    def test_pair_distortion(self, seed):
        da, db = spaces(seed)
        rng = np.random.default_rng(seed)
        ia = as_index(np.arange(len(da)))
        ib = as_index(rng.integers(0, len(db), len(da)))
        assert tuple(compiled.pair_distortion(da, db, ia, ib)) == \
            tuple(_core_py.pair_distortion(da, db, ia, ib))

    @given(st.integers(0, 200))
    def test_assignment_costs(self, seed):
        da, db = spaces(seed)
        rng = np.random.default_rng(seed)
        f = as_index(rng.integers(0, len(db), len(da)))
        anchors = as_index(np.sort(rng.choice(len(da), 5, replace=False)))
        np.testing.assert_array_equal(compiled.assignment_costs(as_matrix(da[3]), db, f, anchors),
                                      _core_py.assignment_costs(as_matrix(da[3]), db, f, anchors))

    @given(st.integers(0, 200))
    def test_local_search(self, seed):
        da, db = spaces(seed)
        f0 = as_index(np.random.default_rng(seed).integers(0, len(db), len(da)))
        f1, f2 = f0.copy(), f0.copy()
        n1 = compiled.local_search(da, db, f1, 0, 50)
        n2 = _core_py.local_search(da, db, f2, 0, 50)
        assert n1 == n2
        np.testing.assert_array_equal(f1, f2)

    @given(st.integers(0, 200))
    def test_triangle_violation(self, seed):
        da, _ = spaces(seed, 12)
        da = da.copy()
        da[1, 2] = da[2, 1] = da[1, 2] * 3
        assert tuple(compiled.triangle_violation(da)) == tuple(_core_py.triangle_violation(da))

    def test_isometry_pipeline(self, python_backend):
        a = geodesic_space(rescale(gasket_cable(2), 2, GASKET_ALPHA, GASKET_BETA, 2))
        b = geodesic_space(rescale(gasket_cable(3), 2, GASKET_ALPHA, GASKET_BETA, 3))
        slow = build_approx_isometry(a, b)
        hkelab.set_backend("compiled")
        fast = build_approx_isometry(a, b)
        np.testing.assert_array_equal(slow.forward, fast.forward)
        np.testing.assert_array_equal(slow.backward, fast.backward)
        assert slow.eps == fast.eps
