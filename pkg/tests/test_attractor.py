"""Point clouds, pullback snapshots and the attractor experiments."""

import math

import numpy as np
import pytest
from hypothesis import example, given, strategies as st
from scipy.integrate import quad

from cbflab import attractor as lab
from cbflab.deterministic import CbfParams, integrate
from cbflab.spectral import Grid, GridMismatchError, SpectralField, norm, single_mode
from cbflab.stochastic import OuPath, build_noise_model, generate_two_sided_path

from conftest import field

G16 = Grid(16)
MODEL = build_noise_model(G16, 1.0, 3)
seeds = st.integers(min_value=0, max_value=2**32)


def forced(r=3):
    return CbfParams(1.0, 1.0, r, single_mode(G16, (1, 0, 0), 1 / math.sqrt(G16.volume / 2)))


class TestSemidistance:
    def test_zero_on_itself(self):
        A = lab.PointCloud([field(G16, 1), field(G16, 2)])
        assert lab.semidistance(A, A) == 0.0

    def test_asymmetric(self):
        x = field(G16, 3, 2.0)
        zero = SpectralField.zeros(G16)
        small, big = lab.PointCloud([zero]), lab.PointCloud([zero, x])
        assert lab.semidistance(small, big) == 0.0
        assert lab.semidistance(big, small) == pytest.approx(2.0, rel=1e-13)

    @given(seeds, seeds, seeds)
    def test_triangle_inequality(self, s1, s2, s3):
        A = lab.PointCloud([field(G16, s1, tag="a"), field(G16, s1, tag="b")])
        B = lab.PointCloud([field(G16, s2, tag="a")])
        C = lab.PointCloud([field(G16, s3, tag="a"), field(G16, s3, tag="c")])
        assert lab.semidistance(A, C) <= lab.semidistance(A, B) + lab.semidistance(B, C) + 1e-12

    def test_errors(self):
        with pytest.raises(ValueError):
            lab.semidistance(lab.PointCloud([]), lab.PointCloud([field(G16, 1)]))
        with pytest.raises(GridMismatchError):
            lab.semidistance(lab.PointCloud([field(G16, 1)]), lab.PointCloud([SpectralField.zeros(Grid(8))]))
        with pytest.raises(GridMismatchError):
            lab.PointCloud([field(G16, 1), SpectralField.zeros(Grid(8))])


class TestClouds:
    def test_ball_cloud_norms(self):
        c = lab.ball_cloud(G16, 6, 3.0, seed=4)
        hs = [norm(x, "H") for x in c.states]
        assert all(0.6 - 1e-12 <= h <= 3.0 + 1e-12 for h in hs)
        assert np.array_equal(c.stacked(), lab.ball_cloud(G16, 6, 3.0, seed=4).stacked())

    def test_radius(self):
        assert lab.cloud_radius(CbfParams.unforced(G16)) == 1.0
        assert lab.cloud_radius(forced()) == pytest.approx(1.1)

    def test_attractor_sample_needs_burn_in(self):
        with pytest.raises(ValueError):
            lab.deterministic_attractor_sample(forced(), 1, 1.0, 1.0)


class TestVerdicts:
    def test_trend(self):
        assert lab.trend_verdict([1.0, 0.6, 0.62, 0.2])
        assert not lab.trend_verdict([1.0, 0.5, 0.6, 0.2])  # 20% rise
        assert not lab.trend_verdict([1.0, 0.9, 0.8, 0.3])  # final too large
        assert not lab.trend_verdict([])

    def test_linear_scaling(self):
        assert lab.linear_scaling_ratio([0.4, 0.2], [0.8, 0.4]) == pytest.approx(1.0)
        assert lab.linear_scaling_ratio([0.4, 0.2], [0.8, 0.2]) == pytest.approx(2.0)

    def test_report_invariants(self):
        with pytest.raises(ValueError):
            lab.UscReport((0.1, 0.2), (1.0, 0.5), 1, 5.0, True)
        with pytest.raises(ValueError):
            lab.UscReport((0.2, 0.1), (1.0, -0.5), 1, 5.0, True)

    def test_observed_orders(self):
        d = [1e-1, 1e-2, 1e-3]
        assert lab.observed_orders(d, [3 * x**2 for x in d]) == pytest.approx([2.0, 2.0])


class TestPullback:
    def test_zero_horizon_is_identity(self):
        c = lab.ball_cloud(G16, 2, 1.0, 0)
        path = OuPath.zeros(MODEL, 0.05, -1.0, 0.0)
        assert lab.pullback_snapshot(c, path, 0.3, 0.0, forced(), 0.05).states == c.states

    def test_zero_noise_is_deterministic_flow(self):
        c = lab.ball_cloud(G16, 2, 1.0, 0)
        path = generate_two_sided_path(MODEL, 0.0, 0.05, -1.0, 0.0, 1)
        snap = lab.pullback_snapshot(c, path, 0.0, 1.0, forced(), 0.05)
        for x, y in zip(c.states, snap.states):
            assert np.array_equal(integrate(x, 1.0, 0.05, forced()).final.coeffs, y.coeffs)

    def test_unforced_linear_response(self):
        # with f = 0 and small eps the pullback state is eps times a fixed field
        p = CbfParams.unforced(G16)
        path = generate_two_sided_path(MODEL, 0.0, 0.05, -3.0, 0.0, 2)
        c = lab.PointCloud([SpectralField.zeros(G16)])
        d = [norm(lab.pullback_snapshot(c, path, e, 3.0, p, 0.05).states[0], "H") for e in (0.02, 0.01)]
        assert d[0] / d[1] == pytest.approx(2.0, rel=1e-2)

    def test_path_window_checked(self):
        path = generate_two_sided_path(MODEL, 0.0, 0.05, -1.0, 0.0, 1)
        with pytest.raises(Exception):
            lab.pullback_snapshot(lab.ball_cloud(G16, 1, 1.0, 0), path, 0.5, 2.0, forced(), 0.05)


class TestCocycle:
    @pytest.mark.parametrize("t, s", [(0.2, 0.2), (0.4, 0.2)])
    def test_residual_at_roundoff(self, t, s):
        res = lab.cocycle_residual(field(G16, 5), t, s, 3, 0.5, forced(), MODEL, dt=0.05)
        assert res <= 1e-10

    def test_trivial_times(self):
        assert lab.cocycle_residual(field(G16, 5), 0.0, 0.2, 3, 0.5, forced(), MODEL, dt=0.05) == 0.0


class TestContinuity:
    @pytest.mark.parametrize("r", [3, 5])
    def test_linear_in_perturbation_and_enveloped(self, r):
        rows = lab.rds_continuity_experiment(field(G16, 6), [1e-1, 1e-2, 1e-3], 1, 0.2, forced(r), MODEL, dt=0.05)
        assert all(row.within_envelope for row in rows)
        orders = lab.observed_orders([row.delta for row in rows], [row.sup_H for row in rows])
        assert min(orders) >= 1 - 1e-9

    def test_zero_perturbation(self):
        rows = lab.rds_continuity_experiment(field(G16, 6), [0.0], 1, 0.1, forced(), MODEL, dt=0.05)
        assert rows[0].sup_H == 0.0

    def test_rates(self):
        assert lab.continuity_rate(forced(3)) == 2.0
        assert lab.continuity_rate(forced(5)) == pytest.approx(2 * (2 * 2.0 + 1))
        assert lab.gronwall_rate(forced(3)) == 2.0


class TestWeightedIntegral:
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.floats(-20, 20))
    @example(0.0, 1.0, 0.0, 5.960464477539063e-08)
    def test_exact_for_linear_data(self, g0, g1, a, c):
        dt = 0.5
        val = lab._weighted_integral(np.array([g0, g1]), np.array([a, a + c * dt]), dt)
        ref, _ = quad(lambda s: (g0 + (g1 - g0) * s / dt) * math.exp(a + c * s), 0, dt, epsabs=1e-14, epsrel=1e-12)
        assert val == pytest.approx(ref, rel=1e-9, abs=1e-12)


class TestKappa:
    def test_zero_path_closed_forms(self):
        # z = 0: only kappa6 = int_{-T}^0 e^{mu lambda1 s} ds survives
        z = OuPath.zeros(MODEL, 0.05, -10.0, 0.0)
        rep = lab.kappa_report(z, forced(), [5.0, 10.0])
        assert rep.kappa_sq["kappa6"] == pytest.approx((1 - math.exp(-5.0), 1 - math.exp(-10.0)), rel=1e-12)
        for k in ("kappa1", "kappa2", "kappa3", "kappa4", "kappa5"):
            assert rep.kappa_sq[k] == (0.0, 0.0)
        assert rep.tail == (0.0, 0.0)

    def test_large_alpha_is_tempered(self):
        path = generate_two_sided_path(MODEL, 1024.0, 0.05, -20.0, 0.0, 1)
        rep = lab.kappa_report(path, forced(), [10.0, 20.0])
        assert rep.tail[-1] < 1e-6
        assert rep.relative_change["kappa6"] < 1e-3

    def test_untempered_path_rejected(self):
        path = generate_two_sided_path(MODEL, 0.0, 0.05, -20.0, 0.0, 1)
        with pytest.raises(ValueError, match="tempered"):
            lab.kappa_report(path, forced(), [20.0])


class TestEpsilonContinuity:
    def test_linear_in_delta(self):
        rows = lab.epsilon_continuity_experiment(0.2, [0.02, 0.01], 1, 1.0, forced(), field(G16, 1), MODEL)
        assert rows[0].distance / rows[1].distance == pytest.approx(2.0, rel=0.05)

    def test_range_checked(self):
        with pytest.raises(ValueError):
            lab.epsilon_continuity_experiment(0.9, [0.2], 1, 1.0, forced(), field(G16, 1), MODEL)

    def test_horizon_doubling_consistent(self):
        rep = lab.horizon_doubling_report(0.2, 0.01, 1, 0.5, forced(), field(G16, 1), MODEL)
        assert rep.envelope_ratio == pytest.approx(math.exp(1.0))
        assert rep.consistent
