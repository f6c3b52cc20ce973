"""Deterministic solver, energy bookkeeping and absorbing-set diagnostics."""

import math

import numpy as np
import pytest

from cbflab.deterministic import (
    CbfParams,
    StepSizeError,
    Stepper,
    absorbing_radii,
    energy_equality_residual,
    envelope,
    envelope_entry_time,
    gronwall_envelope_check,
    grashof,
    integrate,
    step,
    step_count,
    time_average_report,
)
from cbflab.config import reference_config
from cbflab.spectral import Grid, SpectralField, norm, single_mode

from conftest import field

G16 = Grid(16)


def forced(G=1.0, r=3, beta=1.0):
    f = single_mode(G16, (1, 0, 0), G / math.sqrt(G16.volume / 2))
    return CbfParams(1.0, beta, r, f)


class TestParams:
    def test_validation(self):
        f = SpectralField.zeros(G16)
        with pytest.raises(ValueError):
            CbfParams(0.0, 1.0, 3, f)
        with pytest.raises(ValueError):
            CbfParams(1.0, -1.0, 3, f)
        with pytest.raises(ValueError):
            CbfParams(1.0, 1.0, 4, f)

    def test_flags(self):
        assert CbfParams.unforced(G16, beta=0.0).flags[0].startswith("beta = 0")
        assert any("< 1" in s for s in CbfParams.unforced(G16, beta=0.4).flags)
        assert CbfParams.unforced(G16).flags == []

    def test_grashof(self):
        assert grashof(forced(2.5)) == pytest.approx(2.5, rel=1e-13)
        assert grashof(reference_config().params()) == pytest.approx(1.0, rel=1e-13)


class TestSingleModeDynamics:
    """With beta = 0 a transverse single mode solves the heat equation exactly."""

    @pytest.mark.parametrize("k", [(1, 0, 0), (1, 1, 0), (2, 1, 1)])
    def test_free_decay(self, k):
        p = CbfParams.unforced(G16, beta=0.0)
        u0 = single_mode(G16, k, 0.5)
        lam = float(np.sum(np.square(k)))
        T, dt = 1.0, 0.01
        traj = integrate(u0, T, dt, p, save_every=1)
        for t, u in zip(traj.state_times, traj.states):
            exact = u0 * math.exp(-lam * t)
            assert norm(u - exact, "H") <= 1e-12 * (round(t / dt) + 1)

    def test_forced_steady_state_defect(self):
        # u* = f / (mu lambda_k) solves mu A u = f; one integrating-factor Heun
        # step moves it by f [(E - 1) / lambda + dt (1 + E) / 2], E = e^{-lambda dt}
        f = single_mode(G16, (1, 1, 0), 0.3)
        p = CbfParams(1.0, 0.0, 3, f)
        lam, dt = 2.0, 0.05
        u_star = f * (1 / lam)
        E = math.exp(-lam * dt)
        defect = f * ((E - 1) / lam + dt * (1 + E) / 2)
        u1 = step(u_star, dt, p)
        assert np.max(np.abs((u1 - u_star - defect).coeffs)) < 1e-16
        assert norm(defect, "H") < dt**3 * norm(f, "H")

    def test_zero_stays_zero(self):
        p = CbfParams.unforced(G16, r=5)
        assert norm(integrate(SpectralField.zeros(G16), 0.5, 0.05, p).final, "H") == 0.0


class TestEnergyBalance:
    def test_residual_converges_at_second_order(self):
        p = forced()
        x0 = field(G16, 1, 2.0)
        res = [energy_equality_residual(integrate(x0, 1.0, dt, p), p) for dt in (0.02, 0.01, 0.005)]
        orders = [math.log2(a / b) for a, b in zip(res, res[1:])]
        assert min(orders) >= 2.0, (res, orders)

    def test_trapezoid_option(self):
        p = forced()
        traj = integrate(field(G16, 1), 0.2, 0.01, p)
        assert energy_equality_residual(traj, p, "trapezoid") > 0
        with pytest.raises(ValueError):
            energy_equality_residual(traj, p, "boole")

    def test_ledger_columns_consistent(self):
        p = forced(r=5)
        x0 = field(G16, 2, 1.5)
        traj = integrate(x0, 0.1, 0.01, p)
        led = traj.ledger
        assert len(led) == 11
        assert led.H2[0] == pytest.approx(norm(x0, "H") ** 2, rel=1e-13)
        assert led.V2[-1] == pytest.approx(norm(traj.final, "V") ** 2, rel=1e-13)
        assert led.Lr1[-1] == pytest.approx(norm(traj.final, "Lp", p=6) ** 6, rel=1e-10)


class TestSemigroup:
    @pytest.mark.parametrize("r", [3, 5])
    def test_aligned_restart_bit_exact(self, r):
        p = forced(r=r)
        x0 = field(G16, 3, 2.0)
        whole = integrate(x0, 0.6, 0.02, p).final
        half = integrate(integrate(x0, 0.3, 0.02, p).final, 0.3, 0.02, p).final
        assert np.array_equal(whole.coeffs, half.coeffs)


class TestStepControl:
    def test_step_count(self):
        assert step_count(1.0, 0.1) == 10
        with pytest.raises(ValueError):
            step_count(1.0, 0.3)
        with pytest.raises(ValueError):
            step_count(-1.0, 0.1)

    def test_rejects_unstable_step(self):
        p = CbfParams.unforced(G16, r=5)
        with pytest.raises(StepSizeError) as info:
            integrate(field(G16, 1, 200.0), 1.0, 0.5, p)
        assert info.value.admissible_dt < 0.5

    def test_rejects_grid_mismatch(self):
        with pytest.raises(ValueError):
            integrate(SpectralField.zeros(Grid(8)), 0.1, 0.01, forced())

    def test_dt_must_be_positive(self):
        with pytest.raises(ValueError):
            Stepper(forced(), 0.0)


class TestAbsorbingSets:
    def test_radii_at_unit_grashof(self):
        rad = absorbing_radii(forced(1.0))
        assert rad.rho0 == pytest.approx(1.0, rel=1e-13)
        assert rad.M0 == pytest.approx(1.1, rel=1e-13)
        # M2^2 = M0^2 / mu + |f|^2 / (mu^2 lambda1)
        assert rad.M2 == pytest.approx(math.sqrt(1.21 + 1.0), rel=1e-13)
        assert rad.v_radius == rad.M2

    def test_r5_uses_m1(self):
        rad = absorbing_radii(forced(1.0, r=5))
        # eta3 = 1/2 at mu = beta = 1
        assert rad.M1 == pytest.approx(math.sqrt(2 * 1.21 + 1.0), rel=1e-13)
        assert rad.v_radius == rad.M1

    def test_margin_validated(self):
        with pytest.raises(ValueError):
            absorbing_radii(forced(), 1.0)

    def test_envelope_entry_time_inverts_envelope(self):
        p = forced(1.0)
        x2 = 100.0
        t = envelope_entry_time(x2, p)
        assert envelope(t, x2, p) == pytest.approx(1.21, rel=1e-12)
        assert envelope_entry_time(1.0, p) == 0.0

    def test_trajectory_obeys_envelope(self):
        p = forced(1.0)
        x0 = field(G16, 4, 10.0)
        traj = integrate(x0, 10.0, 0.02, p)
        chk = gronwall_envelope_check(traj, p, c_dt=1.0)
        assert chk.report.passed
        assert chk.entry_time is not None and chk.entry_time <= 1.2 * chk.envelope_entry_time

    def test_time_averages(self):
        p = forced(1.0)
        traj = integrate(field(G16, 5, 1.0), 20.0, 0.05, p)
        rep = time_average_report(traj, p, (10.0, 20.0))
        assert rep.passed
        with pytest.raises(ValueError):
            time_average_report(traj, p, (15.0, 30.0))
