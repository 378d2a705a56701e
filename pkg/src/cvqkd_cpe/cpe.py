"""Carrier-phase estimation on the pilot band.

Two estimators share the same band-passed pilot:

* :func:`argument_cpe` takes the unwrapped argument of the filtered pilot.
* :func:`ukf_cpe` tracks a random-walk phase with an unscented Kalman filter
  whose measurement is the pilot's I/Q pair, h(theta) = A [cos psi, sin psi]
  with psi = 2 pi f_p k / f_s + theta.

The per-sample recursion of :func:`ukf_cpe` runs in a numba kernel
specialised to the scalar state; :func:`ukf_predict` / :func:`ukf_update` are
the general reference implementation and the tests hold the two together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from .core import (
    ComplexFrame,
    ContractError,
    DomainError,
    EstimatorError,
    UkfParams,
)

JITTER = 1e-12


@dataclass(frozen=True)
class PhaseEstimate:
    theta_hat: np.ndarray
    method: str
    flagged: int = 0

    def __len__(self):
        return len(self.theta_hat)


@dataclass(frozen=True)
class UkfState:
    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def scalar(cls, mean: float, variance: float) -> "UkfState":
        return cls(np.array([float(mean)]), np.array([[float(variance)]]))


def bandpass_pilot(frame: ComplexFrame, center_hz: float, bandwidth_hz: float) -> ComplexFrame:
    """Brick-wall band-pass keeping [center - B/2, center + B/2]."""
    fs = frame.sample_rate_hz
    if bandwidth_hz <= 0 or abs(center_hz) + bandwidth_hz / 2 > fs / 2:
        raise DomainError("pass band is not inside the Nyquist band")
    n = len(frame)
    f = np.fft.fftfreq(n, d=1.0 / fs)
    mask = np.abs(f - center_hz) <= bandwidth_hz / 2
    return ComplexFrame(np.fft.ifft(np.fft.fft(frame.samples) * mask), fs)


def unwrap(wrapped) -> np.ndarray:
    """Remove 2*pi jumps so consecutive differences fall in (-pi, pi]."""
    x = np.asarray(wrapped, dtype=np.float64)
    if len(x) < 2:
        return x.copy()
    d = np.diff(x)
    d_mod = np.pi - np.mod(np.pi - d, 2 * np.pi)
    turns = np.cumsum(np.rint((d_mod - d) / (2 * np.pi)))
    out = x.copy()
    out[1:] += 2 * np.pi * turns
    return out


def wrap(x):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=np.float64), 2 * np.pi)


@lru_cache(maxsize=16)
def _carrier_phase(n: int, f_hz: float, sample_rate_hz: float):
    """Carrier phase 2 pi f k / fs (mod 2 pi) with its cosine and sine."""
    psi = 2 * np.pi * np.mod(np.arange(n) * (f_hz / sample_rate_hz), 1.0)
    out = (psi, np.cos(psi), np.sin(psi))
    for a in out:
        a.setflags(write=False)
    return out


def argument_cpe(pilot_frame: ComplexFrame, pilot_freq_hz: float) -> PhaseEstimate:
    """Phase from the argument of the filtered pilot, carrier ramp removed.

    The carrier is removed before unwrapping so that a pilot close to
    Nyquist does not produce ambiguous jumps. Zero-magnitude samples reuse
    the previous angle and are counted in ``flagged``.
    """
    _, cos_psi, sin_psi = _carrier_phase(len(pilot_frame), pilot_freq_hz, pilot_frame.sample_rate_hz)
    base = pilot_frame.samples * (cos_psi - 1j * sin_psi)
    angle = np.angle(base)
    dead = np.abs(pilot_frame.samples) == 0
    flagged = int(dead.sum())
    if flagged:
        idx = np.where(~dead, np.arange(len(angle)), 0)
        np.maximum.accumulate(idx, out=idx)
        angle = angle[idx]
        if dead[0]:
            angle[: np.argmax(~dead) if (~dead).any() else len(angle)] = 0.0
    return PhaseEstimate(unwrap(angle), "argument", flagged)


def ut_weights(n: int, params: UkfParams):
    lam = params.alpha**2 * (n + params.kappa) - n
    c = n + lam
    wm = np.full(2 * n + 1, 1.0 / (2 * c))
    wc = wm.copy()
    wm[0] = lam / c
    wc[0] = wm[0] + (1 - params.alpha**2 + params.beta)
    return c, wm, wc


def _cholesky(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(a + JITTER * np.eye(len(a)))
    except np.linalg.LinAlgError as exc:
        raise EstimatorError(f"covariance not positive definite: {a.tolist()}") from exc


def sigma_points(mean, covariance, params: UkfParams):
    """Scaled unscented-transform sigma points and weights.

    Returns ``(points, wm, wc)`` with ``points`` of shape (2n+1, n), ordered
    as the mean, then mean + columns of the scaled square root, then mean
    minus the same columns.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
    n = len(mean)
    c, wm, wc = ut_weights(n, params)
    root = _cholesky(c * cov)
    points = np.empty((2 * n + 1, n))
    points[0] = mean
    points[1:n + 1] = mean + root.T
    points[n + 1:] = mean - root.T
    return points, wm, wc


def ukf_predict(state: UkfState, q: float) -> UkfState:
    """Identity dynamics; the random-walk step only inflates the covariance."""
    n = len(state.mean)
    return UkfState(state.mean.copy(), state.covariance + q * np.eye(n))


def pilot_measurement(theta, psi: float, amplitude: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    return amplitude * np.stack([np.cos(psi + theta), np.sin(psi + theta)], axis=-1)


def ukf_update(state: UkfState, measurement, k: int, pilot_freq_hz: float, amplitude: float,
               r: float, params: UkfParams, sample_rate_hz: float = 1e9) -> UkfState:
    """Unscented measurement update against one I/Q pilot sample."""
    psi = 2 * np.pi * math.fmod(k * (pilot_freq_hz / sample_rate_hz), 1.0)
    points, wm, wc = sigma_points(state.mean, state.covariance, params)
    hx = pilot_measurement(points[:, 0], psi, amplitude)
    y_hat = wm @ hx
    dy = hx - y_hat
    dx = points - state.mean
    s = (wc[:, None] * dy).T @ dy + r * np.eye(2)
    cross = (wc[:, None] * dx).T @ dy
    if abs(np.linalg.det(s)) < 1e-300:
        raise EstimatorError(f"innovation covariance singular at sample {k}")
    gain = cross @ np.linalg.inv(s)
    innov = np.asarray(measurement, dtype=np.float64) - y_hat
    mean = state.mean + gain @ innov
    cov = state.covariance - gain @ s @ gain.T
    cov = 0.5 * (cov + cov.T)
    if np.min(np.linalg.eigvalsh(cov)) <= 0:
        cov = cov + JITTER * np.eye(len(mean))
        if np.min(np.linalg.eigvalsh(cov)) <= 0:
            raise EstimatorError(f"posterior covariance lost definiteness at sample {k}")
    return UkfState(mean, cov)


@numba.njit(cache=True, nogil=True)
def _ukf_track(re, im, cos_psi, sin_psi, amplitude, q, r, m0, p0, wm0, wm1, wc0, c):
    n = re.shape[0]
    out = np.empty(n)
    m = m0
    p = p0
    for k in range(n):
        if k > 0:
            p += q
        cp = c * p
        if not cp > 0:
            cp += c * 1e-12
            if not cp > 0:
                return out, k
        s = math.sqrt(cp)
        cs = cos_psi[k]
        sn = sin_psi[k]
        # h(chi) for chi = m, m + s, m - s
        c0 = math.cos(m)
        s0 = math.sin(m)
        cds = math.cos(s)
        sds = math.sin(s)
        ca = c0 * cds - s0 * sds
        sa = s0 * cds + c0 * sds
        cb = c0 * cds + s0 * sds
        sb = s0 * cds - c0 * sds
        h0x = amplitude * (cs * c0 - sn * s0)
        h0y = amplitude * (sn * c0 + cs * s0)
        hax = amplitude * (cs * ca - sn * sa)
        hay = amplitude * (sn * ca + cs * sa)
        hbx = amplitude * (cs * cb - sn * sb)
        hby = amplitude * (sn * cb + cs * sb)
        yx = wm0 * h0x + wm1 * (hax + hbx)
        yy = wm0 * h0y + wm1 * (hay + hby)
        d0x = h0x - yx
        d0y = h0y - yy
        dax = hax - yx
        day = hay - yy
        dbx = hbx - yx
        dby = hby - yy
        sxx = wc0 * d0x * d0x + wm1 * (dax * dax + dbx * dbx) + r
        syy = wc0 * d0y * d0y + wm1 * (day * day + dby * dby) + r
        sxy = wc0 * d0x * d0y + wm1 * (dax * day + dbx * dby)
        cx = wm1 * s * (dax - dbx)
        cy = wm1 * s * (day - dby)
        det = sxx * syy - sxy * sxy
        if not abs(det) > 1e-300:
            return out, k
        kx = (cx * syy - cy * sxy) / det
        ky = (cy * sxx - cx * sxy) / det
        m = m + kx * (re[k] - yx) + ky * (im[k] - yy)
        p = p - (kx * (sxx * kx + sxy * ky) + ky * (sxy * kx + syy * ky))
        if not p > 0:
            p += 1e-12
            if not p > 0:
                return out, k
        out[k] = m
    return out, -1


def estimate_amplitude(pilot_frame: ComplexFrame) -> float:
    """Tone amplitude from the RMS of the band-passed pilot (sqrt(2) x per-quadrature RMS)."""
    return float(np.sqrt(np.mean(np.abs(pilot_frame.samples) ** 2)))


def ukf_cpe(pilot_frame: ComplexFrame, pilot_freq_hz: float, params: UkfParams,
            amplitude: float | None = None, fast: bool = True) -> PhaseEstimate:
    """Track the pilot phase sample by sample; theta_hat[k] is the posterior mean.

    ``params`` must carry resolved ``process_noise_q`` and
    ``measurement_noise_r`` (see :meth:`ExperimentConfig.resolved_ukf`).
    With ``fast=False`` the general :func:`ukf_predict`/:func:`ukf_update`
    pair is stepped instead of the compiled kernel; slow, for checking.
    """
    params.validate()
    q, r = params.process_noise_q, params.measurement_noise_r
    if q is None or r is None:
        raise ContractError("process_noise_q and measurement_noise_r must be resolved")
    if amplitude is None or params.amplitude_from_rms:
        amplitude = estimate_amplitude(pilot_frame)
    fs = pilot_frame.sample_rate_hz
    x = pilot_frame.samples
    psi, cos_psi, sin_psi = _carrier_phase(len(x), pilot_freq_hz, fs)
    if params.initial_phase is not None:
        m0 = float(params.initial_phase)
    else:
        m0 = float(np.angle(x[0] * np.exp(-1j * psi[0])))
    p0 = params.initial_variance_p0

    if not fast:
        state = UkfState.scalar(m0, p0)
        out = np.empty(len(x))
        for k in range(len(x)):
            if k > 0:
                state = ukf_predict(state, q)
            state = ukf_update(state, [x[k].real, x[k].imag], k, pilot_freq_hz,
                               amplitude, r, params, fs)
            out[k] = state.mean[0]
        return PhaseEstimate(out, "ukf")

    c, wm, wc = ut_weights(1, params)
    out, failed_at = _ukf_track(
        np.ascontiguousarray(x.real), np.ascontiguousarray(x.imag),
        cos_psi, sin_psi, float(amplitude), float(q), float(r),
        m0, float(p0), float(wm[0]), float(wm[1]), float(wc[0]), float(c),
    )
    if failed_at >= 0:
        raise EstimatorError(f"UKF covariance or innovation degenerate at sample {failed_at}")
    return PhaseEstimate(out, "ukf")
