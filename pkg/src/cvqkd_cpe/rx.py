"""Receiver chain for the quantum signal."""

from __future__ import annotations

import math

import numpy as np

from .core import ComplexFrame, ContractError, DomainError, ExperimentConfig, SymbolFrame
from .cpe import PhaseEstimate
from .tx import _rotation, rrc_filter


def downconvert(frame: ComplexFrame, carrier_hz: float) -> ComplexFrame:
    if abs(carrier_hz) >= frame.sample_rate_hz / 2:
        raise DomainError("frequency shift outside the Nyquist band")
    if carrier_hz == 0:
        return frame
    rot = _rotation(len(frame), carrier_hz, frame.sample_rate_hz, sign=-1)
    return ComplexFrame(frame.samples * rot, frame.sample_rate_hz)


def matched_filter(frame: ComplexFrame, rolloff: float, sps: int) -> ComplexFrame:
    # the RRC is real and even, so it is its own matched filter
    return rrc_filter(frame, rolloff, sps)


def compensate_phase(frame: ComplexFrame, estimate: PhaseEstimate) -> ComplexFrame:
    if len(frame) != len(estimate):
        raise ContractError(f"frame has {len(frame)} samples, estimate has {len(estimate)}")
    return ComplexFrame(frame.samples * np.exp(-1j * estimate.theta_hat), frame.sample_rate_hz)


def decimate(frame: ComplexFrame, sps: int, offset: int = 0) -> SymbolFrame:
    if not 0 <= offset < sps:
        raise DomainError(f"offset {offset} outside [0, {sps})")
    picked = frame.samples[offset::sps]
    return SymbolFrame(picked.real.copy(), picked.imag.copy(), frame.sample_rate_hz / sps)


def best_offset(frame: ComplexFrame, reference: SymbolFrame, sps: int) -> int:
    """Brute-force the decimation phase maximising |correlation| with ``reference``."""
    ref = reference.complex
    scores = []
    for off in range(sps):
        got = decimate(frame, sps, off).complex[: len(ref)]
        scores.append(abs(np.vdot(ref[: len(got)], got)))
    return int(np.argmax(scores))


def front_end(raw: ComplexFrame, config: ExperimentConfig) -> ComplexFrame:
    """Baseband, matched-filtered frame (the part of :func:`receive` shared across estimates)."""
    return matched_filter(downconvert(raw, config.carrier_hz), config.rrc_rolloff, config.sps)


def back_end(filtered: ComplexFrame, config: ExperimentConfig, estimate: PhaseEstimate,
             snu_scale: float = 1.0, guard: int | None = None) -> SymbolFrame:
    symbols = decimate(compensate_phase(filtered, estimate), config.sps, 0)
    if snu_scale != 1.0:
        a = math.sqrt(snu_scale)
        symbols = SymbolFrame(a * symbols.i, a * symbols.q, symbols.symbol_rate_hz)
    return symbols.trim(config.guard_symbols if guard is None else guard)


def receive(raw: ComplexFrame, config: ExperimentConfig, estimate: PhaseEstimate,
            snu_scale: float = 1.0, guard: int | None = None) -> SymbolFrame:
    """Downconvert, matched-filter, compensate, decimate, scale to SNU, drop guard.

    ``snu_scale`` is the power scale from :func:`metrics.snu_calibrate`. With
    ``config.compensate_before_filter`` the compensation moves ahead of the
    matched filter (ablation only).
    """
    if len(estimate) != len(raw):
        raise ContractError("estimate must be at the full sample rate of the raw frame")
    if config.compensate_before_filter:
        base = compensate_phase(downconvert(raw, config.carrier_hz), estimate)
        filtered = matched_filter(base, config.rrc_rolloff, config.sps)
        zero = PhaseEstimate(np.zeros(len(raw)), estimate.method)
        return back_end(filtered, config, zero, snu_scale, guard)
    return back_end(front_end(raw, config), config, estimate, snu_scale, guard)
