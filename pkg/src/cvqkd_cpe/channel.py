"""Laser phase noise, channel loss and shot noise."""

from __future__ import annotations

import math

import numpy as np

from .core import ComplexFrame, ContractError, DomainError, PhaseTrajectory, derive_seed, gaussian_stream


def wiener_phase(seed: int, n_samples: int, linewidth_hz: float,
                 sample_rate_hz: float) -> PhaseTrajectory:
    """Random-walk laser phase with step variance 2*pi*linewidth/sample_rate.

    theta[0] is 0; the trajectory is left unwrapped.
    """
    if linewidth_hz < 0:
        raise DomainError("linewidth must be >= 0")
    step_var = 2 * math.pi * linewidth_hz / sample_rate_hz
    theta = np.zeros(n_samples)
    if n_samples > 1:
        steps = gaussian_stream(seed, n_samples - 1, step_var)
        np.cumsum(steps, out=theta[1:])
    return PhaseTrajectory(theta, sample_rate_hz)


def apply_phase(frame: ComplexFrame, phase: PhaseTrajectory) -> ComplexFrame:
    if len(frame) != len(phase):
        raise ContractError(f"frame has {len(frame)} samples, phase has {len(phase)}")
    if frame.sample_rate_hz != phase.sample_rate_hz:
        raise ContractError("sample rates differ")
    return ComplexFrame(frame.samples * np.exp(1j * phase.theta), frame.sample_rate_hz)


def apply_loss(frame: ComplexFrame, transmittance: float) -> ComplexFrame:
    if not 0 <= transmittance <= 1:
        raise DomainError("transmittance must lie in [0, 1]")
    if transmittance == 1:
        return frame
    return ComplexFrame(math.sqrt(transmittance) * frame.samples, frame.sample_rate_hz)


def add_shot_noise(seed: int, frame: ComplexFrame, sigma2_per_quadrature: float) -> ComplexFrame:
    if sigma2_per_quadrature < 0:
        raise DomainError("sigma2 must be >= 0")
    if sigma2_per_quadrature == 0:
        return frame
    n = len(frame)
    re = gaussian_stream(derive_seed(seed, 0, "shot-i"), n, sigma2_per_quadrature)
    im = gaussian_stream(derive_seed(seed, 0, "shot-q"), n, sigma2_per_quadrature)
    return ComplexFrame(frame.samples + (re + 1j * im), frame.sample_rate_hz)


def propagate(frame: ComplexFrame, phase: PhaseTrajectory, transmittance: float,
              shot_seed: int, sigma2_per_quadrature: float) -> ComplexFrame:
    """Loss and phase rotation first, then the shot-noise floor."""
    out = apply_phase(apply_loss(frame, transmittance), phase)
    return add_shot_noise(shot_seed, out, sigma2_per_quadrature)
