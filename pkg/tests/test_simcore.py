import math

import numpy as np
import pytest

from lurelab import apsignals
from lurelab.apsignals import SignalSpec, constant_signal, zero_signal
from lurelab.certcore import LinearTriple, certify_p
from lurelab.experiments import preset_one_mass, preset_two_mass
from lurelab.sectorcore import custom_nonlinearity, power_law_nonlinearity
from lurelab.simcore import (BlowUpError, GapSeries, InsufficientDataError,
                             LureSystem, fit_exponential, fit_iiss_surrogates,
                             iiss_bound_check, incremental_gap,
                             lyapunov_monotonicity, simulate)

ZERO_F = custom_nonlinearity(lambda t, y: np.zeros_like(y), 1, name="zero")


def scalar_system(a=-1.0):
    triple = LinearTriple(np.array([[a]]), np.array([[1.0]]), np.array([[1.0]]))
    return LureSystem(triple, ZERO_F)


class TestSimulate:
    def test_equilibrium_stays_at_zero(self):
        p = preset_one_mass(verify=False)
        traj = simulate(p.system, np.zeros(2), p.forcings["zero"], 2.0, 1e-3)
        assert np.all(traj.states == 0.0)

    def test_linear_decoupled_closed_form(self):
        traj = simulate(scalar_system(), np.array([1.0]), zero_signal(1),
                        2.0, 1e-3)
        exact = np.exp(-traj.times)
        assert np.max(np.abs(traj.states[:, 0] - exact)) <= 1e-8

    def test_rk4_order_against_closed_form(self):
        errs = []
        for dt in (0.2, 0.1):
            traj = simulate(scalar_system(), np.array([1.0]), zero_signal(1),
                            2.0, dt)
            errs.append(abs(traj.states[-1, 0] - math.exp(-2.0)))
        ratio = errs[0] / errs[1]
        assert 12.0 <= ratio <= 20.0

    def test_energy_quadratic_form_identity(self):
        # <x, Px>/2 with P = diag(k, m) is the stored mechanical energy
        k, m = 1.7, 0.8
        p = preset_one_mass(m=m, k=k, verify=False)
        traj = simulate(p.system, np.array([0.7, -0.4]), p.forcings["zero"],
                        3.0, 1e-3)
        z, zdot = traj.states[:, 0], traj.states[:, 1]
        energy = 0.5 * k * z**2 + 0.5 * m * zdot**2
        quad = 0.5 * np.einsum("ij,jk,ik->i", traj.states, p.p_cert.P,
                               traj.states)
        np.testing.assert_allclose(quad, energy, rtol=0, atol=1e-14)

    def test_unforced_energy_monotone(self):
        p = preset_one_mass(verify=False)
        traj = simulate(p.system, np.array([1.0, 0.0]), p.forcings["zero"],
                        20.0, 1e-3)
        res = lyapunov_monotonicity(traj, p.p_cert)
        assert res.passed, res

    def test_determinism_bit_identical(self):
        p = preset_two_mass(verify=False)
        v = p.forcings["v_p"]
        x0 = np.array([0.25, 0.25, -0.05, -0.025])
        a = simulate(p.system, x0, v, 5.0, 1e-3)
        b = simulate(p.system, x0, v, 5.0, 1e-3)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.times, b.times)

    def test_shift_invariance_reproduces_tail(self):
        p = preset_two_mass(verify=False)
        v = p.forcings["v_p"]
        full = simulate(p.system, np.array([0.25, 0.25, -0.05, -0.025]), v,
                        2.0 + v.period, 1e-3)
        tau = 2.0
        k = int(round(tau / 1e-3))
        tail = simulate(p.system, full.states[k], v.shifted(tau),
                        v.period, 1e-3)
        err = np.max(np.linalg.norm(tail.states - full.states[k:], axis=1))
        assert err <= 1e-6

    def test_blow_up_reported_with_escape_time(self):
        sys_unstable = scalar_system(a=3.0)
        with pytest.raises(BlowUpError) as err:
            simulate(sys_unstable, np.array([1.0]), zero_signal(1), 10.0, 1e-3)
        assert 0.0 < err.value.time <= 10.0
        assert np.isfinite(err.value.last_state).all()

    def test_rejects_bad_dt_and_dimensions(self):
        p = preset_one_mass(verify=False)
        with pytest.raises(ValueError):
            simulate(p.system, np.zeros(2), p.forcings["zero"], 1.0, 0.0)
        with pytest.raises(ValueError):
            simulate(p.system, np.zeros(2), zero_signal(2), 1.0, 1e-3)

    def test_substeps_recorded_at_jumps(self):
        p = preset_two_mass(verify=False)
        v = p.forcings["v_p"]
        traj = simulate(p.system, np.zeros(4), v, 10.0, 1e-3)
        n_steps = int(round(10.0 / 1e-3))
        n_jumps = len(v.breakpoints(0.0, 10.0))
        assert traj.n_substeps == n_steps + n_jumps


class TestDifferenceSystem:
    def test_difference_state_matches_augmented_integration(self):
        # integrating the subtracted vector field jointly reproduces x1 - x2
        p = preset_two_mass(verify=False)
        v1 = p.forcings["v_p"]
        v2 = p.forcings["zero"]
        x1 = np.array([0.25, 0.25, -0.05, -0.025])
        x2 = np.zeros(4)
        t1 = simulate(p.system, x1, v1, 10.0, 1e-3)
        t2 = simulate(p.system, x2, v2, 10.0, 1e-3)

        A, B, C = p.triple.A, p.triple.B, p.triple.C
        f = p.system.f
        A_aug = np.block([[A, np.zeros((4, 4))], [np.zeros((4, 4)), A]])
        B_aug = np.block([[B, np.zeros((4, 2))], [np.zeros((4, 2)), B]])
        C_aug = np.block([[C, C], [np.zeros((2, 4)), C]])

        def f_aug(t, y):
            y = np.asarray(y)
            y1, y2 = y[..., :2], y[..., 2:]
            return np.concatenate([f(t, y1 + y2) - f(t, y2), f(t, y2)],
                                  axis=-1)

        aug = LureSystem(LinearTriple(A_aug, B_aug, C_aug),
                         custom_nonlinearity(f_aug, 4))
        dv = SignalSpec("dv", lambda ts: v1.fn(ts) - v2.fn(ts), 2,
                        jump_lattices=v1.jump_lattices)
        v_aug = SignalSpec("aug", lambda ts: np.hstack([dv.fn(ts), v2.fn(ts)]),
                           4, jump_lattices=v1.jump_lattices + v2.jump_lattices)
        aug_traj = simulate(aug, np.concatenate([x1 - x2, x2]), v_aug,
                            10.0, 1e-3)
        xi = aug_traj.states[:, :4]
        direct = t1.states - t2.states
        assert np.max(np.linalg.norm(xi - direct, axis=1)) <= 1e-6


class TestIncrementalGap:
    def test_identical_trajectories_zero_gap(self):
        p = preset_one_mass(verify=False)
        v = p.forcings["zero"]
        t1 = simulate(p.system, np.array([1.0, 0.0]), v, 2.0, 1e-3)
        gap = incremental_gap(t1, t1, v, v)
        assert np.all(gap.values == 0.0)
        assert np.all(gap.forcing_l1 == 0.0)

    def test_two_mass_gap_decays(self):
        p = preset_two_mass(verify=False)
        v = p.forcings["v_p"]
        a = simulate(p.system, np.array([0.25, 0.25, -0.05, -0.025]), v,
                     100.0, 1e-3)
        b = simulate(p.system, np.zeros(4), v, 100.0, 1e-3)
        gap = incremental_gap(a, b, v, v)
        assert gap.values[-1] < 1e-2

    def test_constant_offset_static_gain(self):
        # f = 0, stable scalar loop: steady-state gap = |static gain| * offset
        sys1 = scalar_system(a=-2.0)
        c = 0.8
        v1 = constant_signal([c])
        v2 = zero_signal(1)
        t1 = simulate(sys1, np.zeros(1), v1, 10.0, 1e-3)
        t2 = simulate(sys1, np.zeros(1), v2, 10.0, 1e-3)
        gap = incremental_gap(t1, t2, v1, v2)
        static_gain = abs(-1.0 / -2.0)  # -A^{-1} B
        assert gap.values[-1] == pytest.approx(static_gain * c, rel=1e-6)

    def test_grid_mismatch_rejected(self):
        p = preset_one_mass(verify=False)
        v = p.forcings["zero"]
        t1 = simulate(p.system, np.zeros(2), v, 2.0, 1e-3)
        t2 = simulate(p.system, np.zeros(2), v, 2.0, 2e-3)
        with pytest.raises(ValueError):
            incremental_gap(t1, t2, v, v)


class TestFitExponential:
    def _series(self, fn, T=20.0, dt=1e-2):
        ts = dt * np.arange(int(T / dt) + 1)
        vals = fn(ts)
        zero = np.zeros_like(ts)
        return GapSeries(ts, vals, zero, zero)

    def test_exact_exponential_recovered(self):
        gap = self._series(lambda t: 3.0 * np.exp(-0.5 * t))
        fit = fit_exponential(gap, window=(0.0, 20.0))
        assert fit.M * gap.initial() == pytest.approx(3.0, rel=1e-10)
        assert fit.gamma == pytest.approx(0.5, abs=1e-12)
        assert fit.residual < 1e-12

    def test_modulated_envelope(self):
        gap = self._series(lambda t: np.exp(-t) * (2.0 + np.sin(t)))
        fit = fit_exponential(gap, window=(0.0, 20.0))
        assert 0.9 <= fit.gamma <= 1.1
        assert fit.residual > 0

    def test_two_mass_contraction_verdict(self):
        p = preset_two_mass(verify=False)
        v = p.forcings["v_p"]
        a = simulate(p.system, np.array([0.25, 0.25, -0.05, -0.025]), v,
                     60.0, 1e-3)
        b = simulate(p.system, np.zeros(4), v, 60.0, 1e-3)
        fit = fit_exponential(incremental_gap(a, b, v, v))
        assert fit.gamma > 0

    def test_insufficient_nodes_raises(self):
        gap = self._series(lambda t: np.zeros_like(t), T=1.0, dt=0.1)
        with pytest.raises(InsufficientDataError):
            fit_exponential(gap)


class TestMonotonicity:
    def test_two_mass_published_ic(self):
        p = preset_two_mass(verify=False)
        traj = simulate(p.system, np.array([0.25, 0.25, -0.05, -0.025]),
                        p.forcings["zero"], 20.0, 1e-3)
        assert lyapunov_monotonicity(traj, p.p_cert).passed

    def test_zero_trajectory_trivially_passes(self):
        p = preset_one_mass(verify=False)
        traj = simulate(p.system, np.zeros(2), p.forcings["zero"], 1.0, 1e-3)
        res = lyapunov_monotonicity(traj, p.p_cert)
        assert res.passed and res.max_increase == 0.0

    def test_energy_pumping_detected(self):
        # unstable loop increases the quadratic form
        sys_bad = LureSystem(
            LinearTriple(np.array([[0.0, 1.0], [-1.0, 0.3]]),
                         np.array([[0.0], [1.0]]), np.array([[0.0, 1.0]])),
            ZERO_F)
        traj = simulate(sys_bad, np.array([1.0, 0.0]), zero_signal(1),
                        10.0, 1e-3)
        res = lyapunov_monotonicity(traj, certify_p(sys_bad.triple, np.eye(2)))
        assert not res.passed


@pytest.fixture(scope="module")
def ensemble():
    p = preset_two_mass(verify=False)
    vp = p.forcings["v_p"]
    bump = SignalSpec(
        "bump", lambda ts: 0.2 * np.exp(-0.5 * np.asarray(ts))[:, None]
        * np.array([[0.0, 1.0]]), 2)
    v_pert = vp + bump
    T = 40.0
    x0 = np.array([0.25, 0.25, -0.05, -0.025])
    base = simulate(p.system, np.zeros(4), vp, T, 1e-3)
    same_forcing = incremental_gap(
        simulate(p.system, x0, vp, T, 1e-3), base, vp, vp)
    perturbed = incremental_gap(
        simulate(p.system, x0, v_pert, T, 1e-3), base, v_pert, vp)
    held_out = incremental_gap(
        simulate(p.system, np.array([0.1, -0.2, 0.15, 0.05]), v_pert,
                 T, 1e-3), base, v_pert, vp)
    return same_forcing, perturbed, held_out


class TestIissBound:
    def test_zero_forcing_difference_reduces_to_envelope(self, ensemble):
        same_forcing, *_ = ensemble
        sur = fit_iiss_surrogates([same_forcing])
        verdict = iiss_bound_check([same_forcing], sur)[0]
        assert verdict.passed

    def test_train_and_held_out_split(self, ensemble):
        same_forcing, perturbed, held_out = ensemble
        sur = fit_iiss_surrogates([same_forcing, perturbed])
        assert sur.gamma > 0
        verdicts = iiss_bound_check([same_forcing, perturbed, held_out], sur)
        assert all(v.passed for v in verdicts), verdicts

    def test_adversarial_nonlinearity_fails(self):
        # sign-violating feedback destroys the contraction: the envelope
        # fitted on a stable pair cannot cover the growing gap
        from lurelab.sectorcore import neg_identity_nonlinearity
        triple = LinearTriple(np.array([[0.0, 1.0], [-1.0, 0.0]]),
                              np.array([[0.0], [1.0]]),
                              np.array([[0.0, 1.0]]))
        bad = LureSystem(triple, neg_identity_nonlinearity(1))
        v = zero_signal(1)
        a = simulate(bad, np.array([0.4, 0.0]), v, 12.0, 1e-3)
        b = simulate(bad, np.zeros(2), v, 12.0, 1e-3)
        growing = incremental_gap(a, b, v, v)
        sur = fit_iiss_surrogates([self._stable_gap()])
        verdict = iiss_bound_check([growing], sur)[0]
        assert not verdict.passed

    @staticmethod
    def _stable_gap():
        p = preset_one_mass(verify=False)
        v = p.forcings["zero"]
        a = simulate(p.system, np.array([0.4, 0.0]), v, 12.0, 1e-3)
        b = simulate(p.system, np.zeros(2), v, 12.0, 1e-3)
        return incremental_gap(a, b, v, v)
