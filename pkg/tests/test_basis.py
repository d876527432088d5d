import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from sfpca.basis import (BasisDomainError, KnotPlacementError, bspline_raw, build_basis,
                         full_knot_vector, place_knots)


class TestPlaceKnots:
    def test_median(self):
        t = np.random.default_rng(0).uniform(size=2000)
        k = place_knots(t, 1)
        assert abs(k[0] - np.median(t)) < 1e-12
        assert abs(k[0] - 0.5) < 0.05

    def test_quartiles(self):
        t = np.random.default_rng(1).uniform(size=4000)
        np.testing.assert_allclose(place_knots(t, 3), [0.25, 0.5, 0.75], atol=0.03)

    def test_zero_knots(self):
        assert place_knots([0.1, 0.2], 0).size == 0
        assert build_basis([]).q == 4

    def test_uniform_method(self):
        np.testing.assert_allclose(place_knots([0.0, 0.1], 3, method="uniform"), [0.25, 0.5, 0.75])

    def test_ties_are_perturbed(self):
        t = np.r_[np.zeros(10), np.full(80, 0.5), np.ones(10)]
        k = place_knots(t, 3)
        assert np.all(np.diff(k) > 0)
        assert np.all((k > 0) & (k < 1))

    def test_collision_beyond_perturbation(self):
        with pytest.raises(KnotPlacementError):
            place_knots(np.zeros(100), 2_000_000)

    def test_bad_knots_rejected(self):
        with pytest.raises(KnotPlacementError):
            build_basis([0.6, 0.4])
        with pytest.raises(KnotPlacementError):
            build_basis([0.0, 0.5])


class TestRawBasis:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.01, 0.99), max_size=6, unique=True))
    def test_partition_of_unity(self, knots):
        knots = np.sort(knots)
        if knots.size > 1 and np.diff(knots).min() < 1e-3:
            return
        x = np.linspace(0, 1, 257)
        np.testing.assert_allclose(bspline_raw(x, knots).sum(axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("knots", [[], [0.5], [0.2, 0.35, 0.8]])
    def test_matches_scipy(self, knots):
        x = np.linspace(0, 1, 301)
        ours = bspline_raw(x, knots)
        ref = BSpline.design_matrix(x, full_knot_vector(knots), 3).toarray()
        np.testing.assert_allclose(ours, ref, atol=1e-13)


class TestOrthonormalBasis:
    @pytest.mark.parametrize("m", range(6))
    def test_gram_identity(self, m):
        b = build_basis(np.arange(1, m + 1) / (m + 1))
        assert np.abs(b.gram() - np.eye(b.q)).max() < 1e-8

    def test_evaluate_is_transform_of_raw(self, basis1):
        x = basis1.quad_nodes
        np.testing.assert_array_equal(basis1.evaluate(x), basis1.raw(x) @ basis1.transform.T)

    def test_shape_and_domain(self):
        b = build_basis([])
        assert b.evaluate(0.3).shape == (1, 4)
        with pytest.raises(BasisDomainError):
            b.evaluate([1.2])
        with pytest.raises(BasisDomainError):
            b.evaluate([np.nan])

    def test_call_order_independent(self, basis1):
        t = np.array([0.9, 0.1, 0.4])
        np.testing.assert_array_equal(basis1.evaluate(t)[::-1], basis1.evaluate(t[::-1]))

    def test_constant_function_coefficients(self, basis1):
        # f = 1 lies in the spline space, so it is reproduced exactly
        x = np.linspace(0, 1, 17)
        np.testing.assert_allclose(basis1.evaluate(x) @ basis1.integrals(), 1.0, atol=1e-10)

    def test_quadrature_too_coarse(self):
        with pytest.raises(ValueError):
            build_basis([0.5], quad_points=40)

    def test_quadrature_convergence_rate(self):
        # The trapezoid Gram error against a fine reference shrinks like h^2.
        knots = [0.3, 0.6]
        ref = build_basis(knots, 16001)
        errs = []
        for n in (1001, 2001, 4001):
            b = build_basis(knots, n)
            errs.append(np.abs(b.gram(ref.quad_nodes, ref.quad_weights) - np.eye(b.q)).max())
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(rates > 1.8), rates

    def test_summary(self, basis1):
        s = basis1.summary()
        assert s["q"] == 5 and s["internal_knots"] == [0.5] and s["quad_points"] == 1001
