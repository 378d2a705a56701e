import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvqkd_cpe.channel import add_shot_noise, apply_phase, wiener_phase
from cvqkd_cpe.core import ComplexFrame, DomainError, EstimatorError, PhaseTrajectory, UkfParams
from cvqkd_cpe.cpe import (
    UkfState,
    argument_cpe,
    bandpass_pilot,
    pilot_measurement,
    sigma_points,
    ukf_cpe,
    ukf_predict,
    ukf_update,
    unwrap,
    wrap,
)
from cvqkd_cpe.tx import PilotSpec, pilot_amplitude_for_snr, pilot_tone

FS = 1e9
FP = 300e6


def tone(n, amp=1.0, f=FP, theta=None, fs=FS):
    x = pilot_tone(n, PilotSpec(f, amp), fs)
    if theta is not None:
        x = x * np.exp(1j * np.asarray(theta))
    return ComplexFrame(x, fs)


def params(**kw):
    base = dict(process_noise_q=1e-5, measurement_noise_r=1e-2)
    base.update(kw)
    return UkfParams(**base)


def bin_tone(n, b):
    """Exact integer-bin tone (phase reduced with integer arithmetic)."""
    k = np.arange(n, dtype=np.int64)
    return ComplexFrame(np.exp(2j * np.pi * ((k * b) % n) / n), FS)


class TestBandpass:
    def test_in_band_passthrough(self):
        n = 10_000
        x = bin_tone(n, 3000)
        out = bandpass_pilot(x, FS * 3000 / n, 10e6)
        assert np.max(np.abs(out.samples - x.samples)) < 1e-12

    def test_out_of_band_rejected(self):
        n = 10_000
        x = bin_tone(n, 3100)  # centre + 10 MHz
        out = bandpass_pilot(x, FS * 3000 / n, 10e6)
        assert np.max(np.abs(out.samples)) < 1e-12

    def test_white_noise_fraction(self):
        n = 10**6
        noise = add_shot_noise(3, ComplexFrame(np.zeros(n), FS), 1.0)
        out = bandpass_pilot(noise, FP, 10e6).samples
        ratio = np.var(out) / np.var(noise.samples)
        assert abs(ratio / (10e6 / FS) - 1) < 0.05

    def test_outside_nyquist(self):
        with pytest.raises(DomainError):
            bandpass_pilot(tone(100), 498e6, 10e6)


class TestUnwrap:
    def test_smooth_unchanged(self):
        np.testing.assert_array_equal(unwrap([0, 0.1, 0.2]), [0, 0.1, 0.2])

    def test_single_wrap(self):
        out = unwrap([3.1, -3.1])
        assert out[0] == 3.1
        assert out[1] == pytest.approx(3.1 + (2 * np.pi - 6.2), abs=1e-12)

    def test_half_turn_convention(self):
        # a step of exactly -pi is mapped to +pi
        out = unwrap([0.0, -np.pi])
        assert out[1] == pytest.approx(np.pi)

    @given(st.lists(st.floats(-3.0, 3.0), min_size=1, max_size=200), st.floats(-50, 50))
    @settings(max_examples=100)
    def test_inverts_wrap(self, steps, start):
        x = start + np.cumsum(steps)
        wrapped = wrap(x)
        # reconstruction is exact up to the 2*pi multiple lost at the first sample
        np.testing.assert_allclose(unwrap(wrapped), x - (x[0] - wrapped[0]), atol=1e-9)

    def test_inverts_wrap_anchor(self):
        x = np.cumsum(np.full(100, 0.5))
        np.testing.assert_allclose(unwrap(wrap(x)), x, atol=1e-9)


class TestArgumentCpe:
    def test_constant_offset(self):
        est = argument_cpe(tone(5000, 2.0, theta=np.full(5000, 0.3)), FP)
        assert np.max(np.abs(est.theta_hat - 0.3)) < 1e-12
        assert est.method == "argument"

    def test_ramp_across_pi(self):
        n = 60_000
        ramp = 1e-4 * np.arange(n)
        est = argument_cpe(tone(n, theta=ramp), FP)
        assert ramp[-1] > np.pi
        assert np.max(np.abs(est.theta_hat - ramp)) < 1e-9

    def test_awgn_variance(self):
        n = 10**6
        snr = 10 ** (30 / 10)
        sigma2 = 1.0
        amp = pilot_amplitude_for_snr(30, sigma2)
        x = add_shot_noise(11, tone(n, amp), sigma2)
        resid = argument_cpe(x, FP).theta_hat
        assert abs(np.var(resid) / (1 / (2 * snr)) - 1) < 0.2

    def test_zero_samples_flagged(self):
        x = tone(10, theta=np.full(10, 0.3)).samples.copy()
        x[4] = 0
        est = argument_cpe(ComplexFrame(x, FS), FP)
        assert est.flagged == 1
        assert est.theta_hat[4] == pytest.approx(0.3)


class TestSigmaPoints:
    def test_closed_form(self):
        pts, wm, wc = sigma_points([0.0], [[1.0]], UkfParams(alpha=1.0, kappa=2.0, beta=2.0))
        np.testing.assert_allclose(pts[:, 0], [0, np.sqrt(3), -np.sqrt(3)], atol=1e-15)
        np.testing.assert_allclose(wm, [2 / 3, 1 / 6, 1 / 6], atol=1e-15)
        assert wc[0] == pytest.approx(8 / 3)

    @given(st.floats(1e-3, 2.0), st.floats(0, 4), st.floats(0, 3), st.integers(1, 4))
    @settings(max_examples=100)
    def test_weights_normalized(self, alpha, beta, kappa, n):
        pts, wm, wc = sigma_points(np.zeros(n), np.eye(n), UkfParams(alpha=alpha, beta=beta, kappa=kappa))
        assert abs(wm.sum() - 1) < 1e-9 * max(1.0, np.abs(wm).max())
        assert pts.shape == (2 * n + 1, n)

    @pytest.mark.parametrize("n", [1, 2])
    def test_reconstruction_exact(self, n, rng):
        for _ in range(200):
            mean = rng.normal(size=n)
            a = rng.normal(size=(n, n))
            cov = a @ a.T + 1e-2 * np.eye(n)
            pts, wm, wc = sigma_points(mean, cov, UkfParams(alpha=1.0, kappa=0.5))
            m = wm @ pts
            d = pts - m
            np.testing.assert_allclose(m, mean, atol=1e-12, rtol=0)
            np.testing.assert_allclose((wc[:, None] * d).T @ d, cov, atol=1e-12, rtol=0)

    def test_reconstruction_default_params(self, rng):
        # alpha = 0.1 puts large opposite-signed weights on the points
        for _ in range(200):
            mean = rng.normal(size=2)
            a = rng.normal(size=(2, 2))
            cov = a @ a.T + 1e-2 * np.eye(2)
            pts, wm, wc = sigma_points(mean, cov, UkfParams())
            d = pts - wm @ pts
            np.testing.assert_allclose(wm @ pts, mean, atol=1e-12, rtol=0)
            np.testing.assert_allclose((wc[:, None] * d).T @ d, cov, atol=1e-12, rtol=0)

    def test_not_positive_definite(self):
        with pytest.raises(EstimatorError):
            sigma_points([0.0], [[-1.0]], UkfParams())


class TestPredict:
    def test_additive(self):
        s = ukf_predict(UkfState.scalar(0.5, 0.01), 1e-5)
        assert s.mean[0] == 0.5
        assert s.covariance[0, 0] == pytest.approx(0.01001, abs=1e-15)

    def test_zero_q(self):
        s0 = UkfState.scalar(0.5, 0.01)
        s = ukf_predict(s0, 0.0)
        assert s.mean[0] == s0.mean[0] and s.covariance[0, 0] == s0.covariance[0, 0]

    def test_accumulates(self):
        s = UkfState.scalar(0.0, 0.01)
        for _ in range(1000):
            s = ukf_predict(s, 1e-6)
        assert s.covariance[0, 0] == pytest.approx(0.01 + 1000 * 1e-6, rel=1e-12)


def ekf_update(mean, var, y, psi, amp, r):
    """First-order Kalman update with Jacobian A [-sin, cos]."""
    ang = psi + mean
    h = amp * np.array([math.cos(ang), math.sin(ang)])
    jac = amp * np.array([-math.sin(ang), math.cos(ang)])
    s = var * np.outer(jac, jac) + r * np.eye(2)
    gain = var * jac @ np.linalg.inv(s)
    return mean + gain @ (y - h), (1 - gain @ jac) * var


class TestUpdate:
    def test_zero_noise_limit(self):
        p = params(measurement_noise_r=1e-12)
        theta_true = 0.07
        k, amp = 17, 3.0
        psi = 2 * np.pi * math.fmod(k * FP / FS, 1.0)
        y = pilot_measurement(theta_true, psi, amp)
        s = ukf_update(UkfState.scalar(0.0, 0.01), y, k, FP, amp, 1e-12, p, FS)
        assert abs(s.mean[0] - theta_true) < 1e-4

    def test_zero_innovation(self):
        p = params()
        k, amp = 5, 2.0
        state = UkfState.scalar(0.2, 1e-3)
        points, wm, _ = sigma_points(state.mean, state.covariance, p)
        psi = 2 * np.pi * math.fmod(k * FP / FS, 1.0)
        y_hat = wm @ pilot_measurement(points[:, 0], psi, amp)
        s = ukf_update(state, y_hat, k, FP, amp, 1e-2, p, FS)
        assert abs(s.mean[0] - 0.2) < 1e-12
        assert 0 < s.covariance[0, 0] < 1e-3

    def test_matches_linearized_kf_small_angle(self, rng):
        p = params()
        worst_m = worst_p = 0.0
        for _ in range(1000):
            mean = rng.uniform(-0.1, 0.1)
            var = 10 ** rng.uniform(-7, -4)
            amp = rng.uniform(0.5, 5.0)
            r = 10 ** rng.uniform(-2, 0)
            k = int(rng.integers(0, 10**6))
            psi = 2 * np.pi * math.fmod(k * FP / FS, 1.0)
            y = pilot_measurement(mean + rng.normal(0, 0.05), psi, amp) + rng.normal(0, math.sqrt(r), 2)
            ukf = ukf_update(UkfState.scalar(mean, var), y, k, FP, amp, r, p, FS)
            m_ekf, p_ekf = ekf_update(mean, var, y, psi, amp, r)
            worst_m = max(worst_m, abs(ukf.mean[0] - m_ekf))
            worst_p = max(worst_p, abs(ukf.covariance[0, 0] - p_ekf))
        assert worst_m < 1e-6
        assert worst_p < 1e-6

    def test_posterior_positive(self, rng):
        p = params()
        s = UkfState.scalar(0.0, 0.01)
        for k in range(2000):
            s = ukf_predict(s, 1e-5)
            y = rng.normal(size=2) * 3
            s = ukf_update(s, y, k, FP, 1.0, 1e-2, p, FS)
            assert s.covariance[0, 0] > 0


class TestUkfCpe:
    def test_stationary_fixed_point(self):
        x = tone(20_000, 2.0, theta=np.full(20_000, 0.3))
        est = ukf_cpe(x, FP, params(initial_phase=0.3), amplitude=2.0)
        assert np.max(np.abs(est.theta_hat[1:] - 0.3)) < 1e-6

    def test_convergence(self):
        n = 20_000
        x = tone(n, 1.0, theta=np.zeros(n))
        est = ukf_cpe(x, FP, params(initial_phase=0.2), amplitude=1.0)
        resid = np.abs(est.theta_hat)
        settled = np.argmax(resid < 1e-3)
        assert resid[settled] < 1e-3 and settled < 10_000
        assert np.all(resid[settled:] < 1e-3)

    def test_compiled_matches_reference(self, rng):
        n = 3000
        theta = np.cumsum(rng.normal(0, 3e-3, n))
        x = add_shot_noise(5, tone(n, 3.0, theta=theta), 0.5)
        fast = ukf_cpe(x, FP, params(), amplitude=3.0)
        slow = ukf_cpe(x, FP, params(), amplitude=3.0, fast=False)
        np.testing.assert_allclose(fast.theta_hat, slow.theta_hat, atol=1e-10, rtol=0)

    def test_beats_argument_at_10db(self):
        n = 2**15 * 20
        sigma2 = 1.0
        amp = pilot_amplitude_for_snr(10, sigma2)
        truth = wiener_phase(21, n, 2e3, FS)
        rx = add_shot_noise(22, apply_phase(tone(n, amp), truth), sigma2)
        pilot = bandpass_pilot(rx, FP, 10e6)
        p = UkfParams(process_noise_q=2 * np.pi * 2e3 / FS, measurement_noise_r=sigma2 * 10e6 / FS)
        guard = 256 * 20
        err_u = wrap(truth.theta - ukf_cpe(pilot, FP, p, amplitude=amp).theta_hat)[guard:-guard]
        err_a = wrap(truth.theta - argument_cpe(pilot, FP).theta_hat)[guard:-guard]
        assert np.mean(err_u**2) < np.mean(err_a**2)

    def test_equivariance(self, rng):
        n = 5000
        theta = np.cumsum(rng.normal(0, 3e-3, n))
        x = add_shot_noise(9, tone(n, 2.0, theta=theta), 0.3)
        phi0 = 0.7
        rotated = ComplexFrame(x.samples * np.exp(1j * phi0), FS)
        a = ukf_cpe(x, FP, params(initial_phase=0.1), amplitude=2.0)
        b = ukf_cpe(rotated, FP, params(initial_phase=0.1 + phi0), amplitude=2.0)
        np.testing.assert_allclose(b.theta_hat - a.theta_hat, phi0, atol=1e-9)

    def test_deterministic(self, rng):
        x = add_shot_noise(9, tone(4000, 2.0), 0.3)
        a = ukf_cpe(x, FP, params(), amplitude=2.0)
        b = ukf_cpe(x, FP, params(), amplitude=2.0)
        assert a.theta_hat.tobytes() == b.theta_hat.tobytes()
        assert argument_cpe(x, FP).theta_hat.tobytes() == argument_cpe(x, FP).theta_hat.tobytes()

    def test_rms_amplitude_fallback(self):
        x = tone(4000, 2.5, theta=np.full(4000, -0.4))
        est = ukf_cpe(x, FP, params(amplitude_from_rms=True))
        assert np.max(np.abs(est.theta_hat - (-0.4))) < 1e-6

    def test_spd_over_a_million_cycles(self, rng):
        n = 10**6
        x = ComplexFrame(rng.normal(size=n) * 2 + 1j * rng.normal(size=n) * 2, FS)
        # an EstimatorError here would mean the covariance left the SPD cone
        est = ukf_cpe(x, FP, params(process_noise_q=rng.uniform(0, 1e-3)), amplitude=1.0)
        assert np.all(np.isfinite(est.theta_hat))

    def test_unresolved_params_rejected(self):
        with pytest.raises(ValueError):
            ukf_cpe(tone(10), FP, UkfParams())
