import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hkelab.hke import (KernelSamples, bulk_times, eigfun_sup_check, hke_bounds_check,
                        holder_fit, ondiag_fit, phi_numeric, phi_piecewise, phi_power,
                        phi_sequence_gap, phi_transform, scale_constant, weyl_check,
                        witness_constant)
from hkelab.metric import geodesic_space
from hkelab.models import GASKET_ALPHA, GASKET_BETA, gasket_cable, rescale
from hkelab.profiles import (PiecewisePower, ScaleFunction, gasket_volume, two_regime_scale)
from hkelab.spectral import GraphDirichletForm, HeatKernel, assemble_part, full_part, spectrum

from conftest import path_graph


def kernel_of(g, part=None):
    form = GraphDirichletForm.from_graph(g)
    return HeatKernel(spectrum(part or full_part(form)))


class TestPhi:
    def test_square_at_two(self):
        assert phi_transform(ScaleFunction.power(2.0), 2.0) == pytest.approx(1.0, rel=1e-15)

    def test_zero(self):
        for b in (2.0, 2.5, 3.0):
            assert phi_transform(ScaleFunction.power(b), 0.0) == 0.0

    def test_cube_at_one(self):
        assert phi_transform(ScaleFunction.power(3.0), 1.0) == pytest.approx(2 * 3 ** -1.5, rel=1e-14)
        assert phi_numeric(lambda r: r ** 3, 1.0)[0] == pytest.approx(0.384900179, rel=1e-8)

    @given(st.floats(1.2, 4.0), st.floats(0.01, 20.0))
    def test_numeric_matches_closed_form(self, beta, s):
        exact = phi_power(beta, s)
        assert phi_numeric(lambda r: r ** beta, s)[0] == pytest.approx(exact, rel=1e-9)

    @given(st.floats(1.5, 3.5), st.floats(1.5, 3.5), st.floats(0.2, 5.0), st.floats(0.0, 30.0))
    def test_piecewise_matches_numeric(self, b1, b2, rc, s):
        psi = PiecewisePower(b1, b2, crossover=rc, amplitude=rc ** 2)
        exact = phi_piecewise(psi, s)[0]
        assert exact == pytest.approx(phi_numeric(psi, s)[0], rel=1e-9, abs=1e-12)

    @given(st.floats(1.5, 3.5), st.floats(1.5, 3.5))
    def test_convex_and_nondecreasing(self, b1, b2):
        psi = PiecewisePower(b1, b2)
        s = np.linspace(0, 10, 201)
        v = phi_transform(psi, s)
        assert np.all(np.diff(v) >= -1e-12)
        assert np.all(v[:-2] + v[2:] - 2 * v[1:-1] >= -1e-9 * np.abs(v).max())

    def test_sequence_gap_identical(self):
        psi = two_regime_scale(2.3)
        np.testing.assert_array_equal(phi_sequence_gap([psi, psi, psi], 2.0), 0.0)

    def test_sequence_gap_carpet_rescaling(self):
        beta = 2.1
        psis = [two_regime_scale(beta).rescaled(3, beta, n) for n in range(1, 5)]
        # below s ~ 7 every maximiser sits in the shared large-r regime
        assert phi_sequence_gap(psis, 2.0).max() <= 1e-14
        gaps = phi_sequence_gap(psis, 200.0)
        assert np.all(np.diff(gaps) < 0) and gaps[-1] == 0.0

    def test_sequence_gap_exponent_limit(self):
        psis = [ScaleFunction.power(2 + 1 / n) for n in (2, 10)] + [ScaleFunction.power(2.0)]
        gaps = phi_sequence_gap(psis, 1.0)
        assert gaps[1] <= gaps[0]

    def test_scale_constant_pure_power(self):
        assert scale_constant(ScaleFunction.power(2.5), np.geomspace(0.1, 10, 9)) == pytest.approx(1.0)


class TestHkeBounds:
    def test_two_vertex_long_time(self):
        hk = kernel_of(path_graph(2))
        p = hk.matrix(50.0)
        np.testing.assert_allclose(p, 0.5, rtol=1e-12)
        total = 2.0
        assert p[0, 0] * total == pytest.approx(1.0)

    def gasket_fit(self, level, psi, c2=None):
        g = rescale(gasket_cable(level), 2, GASKET_ALPHA, GASKET_BETA, level)
        sp = geodesic_space(g)
        hk = kernel_of(g)
        mesh = 2.0 ** -level
        V = gasket_volume().rescaled(2, GASKET_ALPHA, level)
        samples = KernelSamples(bulk_times(psi, mesh, 1.0, 8), np.arange(0, sp.size, 7), mesh=mesh)
        return hke_bounds_check(hk, sp, V, psi, samples, c2=c2)

    def test_gasket_correct_scaling_within_budget(self):
        psi = two_regime_scale(GASKET_BETA).rescaled(2, GASKET_BETA, 4)
        rep = self.gasket_fit(4, psi)
        assert rep.passed and rep["C_1"] <= 50

    def test_witnesses_reproduce_constants(self):
        psi = two_regime_scale(GASKET_BETA).rescaled(2, GASKET_BETA, 4)
        rep = self.gasket_fit(4, psi)
        by_bound = {w["bound"]: witness_constant(w, rep["c_2"]) for w in rep.witnesses}
        assert by_bound["upper"] == pytest.approx(rep.residuals["C_upper"], rel=1e-12)
        assert by_bound["lower"] == pytest.approx(rep.residuals["C_lower"], rel=1e-12)
        assert rep["C_1"] == max(by_bound.values())

    def test_wrong_scaling_grows(self):
        C = []
        for n in (4, 5):
            psi = ScaleFunction.power(2.0)
            C.append(self.gasket_fit(n, psi)["C_1"])
        assert C[1] > C[0]

    def test_empty_bulk_regime(self):
        with pytest.raises(ValueError):
            bulk_times(ScaleFunction.power(2.0), 0.5, 1.0)


class TestWeyl:
    def test_single_vertex(self):
        g = path_graph(3)
        part = assemble_part(GraphDirichletForm.from_graph(g), geodesic_space(g), 1, 1.0)
        rep = weyl_check(spectrum(part), ScaleFunction.power(2.0), 1.0)
        assert rep["C_weyl"] == pytest.approx(2.0)

    def test_path_three_interior(self):
        g = path_graph(5)
        part = assemble_part(GraphDirichletForm.from_graph(g), geodesic_space(g), 2, 2.0)
        rep = weyl_check(spectrum(part), ScaleFunction.power(2.0), 4.0)
        expected = max((2 - math.sqrt(2)) * 16, 2 * 4, (2 + math.sqrt(2)) * 16 / 9)
        assert rep["C_weyl"] == pytest.approx(expected, rel=1e-12)
        assert rep["C_weyl"] == pytest.approx(9.37, abs=0.01)

    def test_gasket_levels_within_factor_two(self):
        psi0 = two_regime_scale(GASKET_BETA)
        C = []
        for n in (3, 4):
            g = rescale(gasket_cable(n), 2, GASKET_ALPHA, GASKET_BETA, n)
            part = assemble_part(GraphDirichletForm.from_graph(g), geodesic_space(g), 0, 1.0)
            C.append(weyl_check(spectrum(part), psi0.rescaled(2, GASKET_BETA, n), 1.0)["C_weyl"])
        assert 0.5 <= C[1] / C[0] <= 2


class TestEigfunSup:
    def test_single_vertex(self):
        g = path_graph(3)
        part = assemble_part(GraphDirichletForm.from_graph(g), geodesic_space(g), 1, 1.0)
        rep = eigfun_sup_check(spectrum(part), PiecewisePower.power(1.0), ScaleFunction.power(2.0))
        assert np.isfinite(rep["C"]) and rep["C"] > 0

    def test_path_closed_form(self):
        N = 9
        g = path_graph(N + 2)
        part = assemble_part(GraphDirichletForm.from_graph(g), geodesic_space(g), 5, 5.0)
        spec = spectrum(part)
        k = np.arange(1, N + 1)
        for j in range(N):
            phi = np.sin((j + 1) * np.pi * k / (N + 1)) * math.sqrt(2 / (N + 1))
            assert np.abs(spec.vectors[:, j]).max() == pytest.approx(np.abs(phi).max(), rel=1e-10)
        rep = eigfun_sup_check(spec, PiecewisePower.power(1.0), ScaleFunction.power(2.0))
        assert len(rep.residuals["ratios"]) == N


class TestHolder:
    def test_single_vertex(self):
        g = path_graph(3)
        part = assemble_part(GraphDirichletForm.from_graph(g), geodesic_space(g), 1, 1.0)
        rep = holder_fit(HeatKernel(spectrum(part)), geodesic_space(g), PiecewisePower.power(1.0),
                         ScaleFunction.power(2.0), [0.5], [0])
        assert rep["C_H"] == 0.0

    def test_two_vertex_explicit(self):
        g = path_graph(2)
        hk = kernel_of(g)
        t = 0.4
        rep = holder_fit(hk, geodesic_space(g), PiecewisePower.power(1.0),
                         ScaleFunction.power(2.0), [t], [0, 1], thetas=[0.5])
        r = math.sqrt(t)
        # |p(x,x) - p(x,y)| = exp(-2t) at distance 1
        assert rep["C_H"] == pytest.approx(math.exp(-2 * t) * r ** 0.5 * r, rel=1e-12)


class TestOnDiagonal:
    def test_single_vertex_flattens(self):
        g = path_graph(2)
        hk = kernel_of(g)
        ts = np.geomspace(20, 200, 8)
        fit = ondiag_fit(ts, hk.diagonal(ts, 0))
        assert abs(fit.slope) < 1e-10

    def test_pure_power(self):
        ts = np.geomspace(0.01, 1, 10)
        fit = ondiag_fit(ts, 3 * ts ** -0.7)
        assert fit.slope == pytest.approx(-0.7) and fit.intercept == pytest.approx(math.log(3))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            ondiag_fit([1, 2, 3], [1, 1, 1])
