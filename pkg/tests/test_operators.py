"""Convective and Forchheimer operators, constants and monotonicity probes."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbflab.deterministic import CbfParams
from cbflab.operators import (
    PreconditionError,
    UnsupportedExponentError,
    skew_probes,
    c_identity,
    convective,
    convective_dual_bound,
    convective_interpolation_bound,
    difference_identity,
    dual_norm_battery,
    dual_norm_exact,
    eta1,
    eta2,
    eta3,
    eta4,
    forchheimer,
    forchheimer_gateaux,
    gateaux_orders,
    gradient_identity_residual,
    ladyzhenskaya,
    lr1_power,
    monotonicity_gap,
    probe_battery,
    trilinear_b,
)
from cbflab.spectral import Grid, inner_product, max_divergence_ratio, norm, single_mode

from conftest import field

seeds = st.integers(min_value=0, max_value=2**32)
G16 = Grid(16)


class TestConstants:
    """Hand-evaluated values at mu = beta = 1."""

    def test_r5_values(self):
        assert eta1(1, 1, 5) == pytest.approx(2.0)
        assert eta2(1, 1, 5) == pytest.approx(0.125)
        assert eta3(1, 1, 5) == pytest.approx(0.5)
        assert eta4(1, 1, 5) == pytest.approx(1.0)

    def test_r3_vanish(self):
        assert eta1(1, 1, 3) == eta2(1, 1, 3) == eta3(1, 1, 3) == eta4(1, 1, 3) == 0.0

    def test_scaling_in_beta(self):
        # for r = 5 every constant scales like beta^{-1}
        assert eta2(1, 2, 5) == pytest.approx(eta2(1, 1, 5) / 2)

    @pytest.mark.parametrize("r", [1, 2, 4, 6])
    def test_unsupported_exponent(self, r):
        with pytest.raises(UnsupportedExponentError):
            eta1(1, 1, r)


class TestConvective:
    def test_single_mode_is_steady(self):
        u = single_mode(G16, (1, 2, 0), 0.8)
        assert norm(convective(u), "H") < 1e-15

    @given(seeds, seeds, seeds)
    def test_skew_symmetry(self, s1, s2, s3):
        reps = skew_probes(field(G16, s1), field(G16, s2), field(G16, s3))
        assert all(r.passed for r in reps), reps

    def test_trilinear_matches_pairing(self):
        u, v, w = field(G16, 1), field(G16, 2), field(G16, 3)
        from cbflab.operators import convective_pair

        assert trilinear_b(u, v, w) == pytest.approx(inner_product(convective_pair(u, v), w), rel=1e-12)

    def test_output_solenoidal(self):
        assert max_divergence_ratio(convective(field(G16, 4))) < 1e-13

    @given(seeds, seeds)
    def test_difference_identity(self, s1, s2):
        assert difference_identity(field(G16, s1), field(G16, s2)).passed

    @pytest.mark.parametrize("r", [5, 7])
    def test_interpolation_bound(self, r):
        assert convective_interpolation_bound(field(G16, 8), field(G16, 9), r).passed

    def test_dual_bound(self):
        battery = probe_battery(G16, np.random.default_rng(0), 16)
        assert convective_dual_bound(field(G16, 10), 5, battery).passed

    def test_ladyzhenskaya(self):
        assert ladyzhenskaya(field(G16, 11)).passed


class TestForchheimer:
    def test_cubic_single_mode(self):
        # sin^3 = (3 sin - sin 3x) / 4, and both modes stay transverse
        a, e = 0.6, (0.0, 0.0, 1.0)
        u = single_mode(G16, (1, 0, 0), a, e)
        expect = 0.75 * a**2 * u + single_mode(G16, (3, 0, 0), -(a**3) / 4, e)
        assert np.max(np.abs(forchheimer(u, 3).coeffs - expect.coeffs)) < 1e-15

    def test_quintic_single_mode(self):
        # sin^5 = (10 sin - 5 sin 3x + sin 5x) / 16
        a, e = 0.5, (0.0, 1.0, 0.0)
        u = single_mode(G16, (1, 0, 0), a, e)
        expect = (
            (10 / 16) * a**4 * u
            + single_mode(G16, (3, 0, 0), -5 * a**5 / 16, e)
            + single_mode(G16, (5, 0, 0), a**5 / 16, e)
        )
        assert np.max(np.abs(forchheimer(u, 5, pad=3).coeffs - expect.coeffs)) < 1e-15

    @pytest.mark.parametrize("r", [3, 5])
    @given(seed=seeds)
    def test_pairing_identity(self, r, seed):
        assert c_identity(field(G16, seed), r).passed

    def test_lr1_of_single_mode(self):
        # int sin^4 = 3/8 and int sin^6 = 5/16 of the volume
        u = single_mode(G16, (0, 1, 0), 1.0)
        assert lr1_power(u, 3) == pytest.approx(3 / 8 * G16.volume, rel=1e-12)
        assert lr1_power(u, 5) == pytest.approx(5 / 16 * G16.volume, rel=1e-12)

    @pytest.mark.parametrize("r", [3, 5])
    def test_gateaux_order_two(self, r):
        _, orders = gateaux_orders(field(G16, 1), field(G16, 2), r)
        assert all(abs(o - 2.0) <= 0.1 for o in orders), orders

    def test_gateaux_linear_in_direction(self):
        u, v = field(G16, 3), field(G16, 4)
        d1 = forchheimer_gateaux(u, v, 5)
        d2 = forchheimer_gateaux(u, 2.0 * v, 5)
        assert np.max(np.abs(d2.coeffs - 2 * d1.coeffs)) < 1e-14

    def test_homogeneity(self):
        u = field(G16, 5)
        assert np.allclose(forchheimer(2.0 * u, 3).coeffs, 8.0 * forchheimer(u, 3).coeffs, atol=1e-15)


class TestGradientIdentity:
    def test_r3_exact(self):
        rep = gradient_identity_residual(field(G16, 2), 3)
        assert rep.gap < 1e-12

    def test_r5_shrinks_under_refinement(self):
        u16 = field(G16, 2, kmax=3)
        from cbflab.spectral import SpectralField, pad_coeffs

        u32 = SpectralField(Grid(32), pad_coeffs(u16.coeffs, 32))
        g16, g32 = gradient_identity_residual(u16, 5).gap, gradient_identity_residual(u32, 5).gap
        assert g32 < g16


class TestMonotonicity:
    @given(seeds, seeds)
    def test_damping_monotone_and_lr1_difference(self, s1, s2):
        p = CbfParams.unforced(G16, r=5)
        u1, u2 = field(G16, s1, 2.0), field(G16, s2, 1.0)
        assert monotonicity_gap(u1, u2, p, "forchheimer_monotone").passed
        assert monotonicity_gap(u1, u2, p, "lr1_difference").passed

    @given(seeds, seeds)
    def test_quasi_monotone_r5(self, s1, s2):
        p = CbfParams.unforced(G16, r=5)
        assert monotonicity_gap(field(G16, s1, 3.0), field(G16, s2), p, "quasi_monotone").passed
        assert monotonicity_gap(field(G16, s1, 3.0), field(G16, s2), p, "convective_difference").passed

    @given(seeds, seeds)
    def test_monotone_r3(self, s1, s2):
        p = CbfParams.unforced(G16, mu=1.0, beta=1.0, r=3)
        assert monotonicity_gap(field(G16, s1, 3.0), field(G16, s2), p, "monotone").passed

    def test_preconditions(self):
        u1, u2 = field(G16, 1), field(G16, 2)
        with pytest.raises(PreconditionError):
            monotonicity_gap(u1, u2, CbfParams.unforced(G16, beta=0.4, r=3), "monotone")
        with pytest.raises(PreconditionError):
            monotonicity_gap(u1, u2, CbfParams.unforced(G16, r=3), "quasi_monotone")
        with pytest.raises(ValueError):
            monotonicity_gap(u1, u2, CbfParams.unforced(G16, r=3), "nope")


class TestDualNorm:
    def test_battery_is_lower_bound(self):
        g = field(G16, 7)
        battery = probe_battery(G16, np.random.default_rng(1), 32)
        assert dual_norm_battery(g, battery) <= dual_norm_exact(g) * (1 + 1e-12)

    def test_exact_on_single_mode(self):
        u = single_mode(G16, (2, 0, 0), 1.0)
        assert dual_norm_exact(u) == pytest.approx(norm(u, "H") / 2, rel=1e-13)
