"""Alice's transmitter: Gaussian symbols, pulse shaping, upconversion, pilot."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ComplexFrame, DomainError, SymbolFrame, derive_seed, gaussian_stream


@dataclass(frozen=True)
class PilotSpec:
    frequency_hz: float
    amplitude: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise DomainError("pilot amplitude must be >= 0")


def generate_symbols(seed: int, n_symbols: int, modulation_variance_snu: float,
                     symbol_rate_hz: float = 50e6) -> SymbolFrame:
    """Gaussian alphabet with per-quadrature variance ``modulation_variance_snu``."""
    if n_symbols < 1:
        raise DomainError("n_symbols must be >= 1")
    i = gaussian_stream(derive_seed(seed, 0, "symbols-i"), n_symbols, modulation_variance_snu)
    q = gaussian_stream(derive_seed(seed, 0, "symbols-q"), n_symbols, modulation_variance_snu)
    return SymbolFrame(i, q, symbol_rate_hz)


def upsample(symbols: SymbolFrame, sps: int) -> ComplexFrame:
    if sps < 1:
        raise DomainError("sps must be >= 1")
    out = np.zeros(len(symbols) * sps, dtype=np.complex128)
    out[::sps] = symbols.complex
    return ComplexFrame(out, symbols.symbol_rate_hz * sps)


def raised_cosine_response(f: np.ndarray, rolloff: float, symbol_rate: float) -> np.ndarray:
    """Raised-cosine amplitude response (peak 1) at frequencies ``f``."""
    af = np.abs(f)
    lo = (1 - rolloff) * symbol_rate / 2
    hi = (1 + rolloff) * symbol_rate / 2
    out = np.zeros_like(af)
    out[af < lo] = 1.0
    if rolloff > 0:
        band = (af >= lo) & (af <= hi)
        out[band] = 0.5 * (1 + np.cos(np.pi / (rolloff * symbol_rate) * (af[band] - lo)))
    else:
        out[np.isclose(af, lo, rtol=0, atol=1e-12 * symbol_rate)] = 0.5
    return out


@lru_cache(maxsize=16)
def _rrc_spectrum(n: int, rolloff: float, sps: int) -> np.ndarray:
    # frequencies in units of the sample rate; symbol rate is 1/sps
    f = np.fft.fftfreq(n)
    rc = raised_cosine_response(f, rolloff, 1.0 / sps)
    # scaled so that the impulse response has unit energy when n is a multiple of sps
    spectrum = np.sqrt(sps * rc)
    spectrum.setflags(write=False)
    return spectrum


def rrc_filter(frame: ComplexFrame, rolloff: float, sps: int) -> ComplexFrame:
    """Root-raised-cosine filtering by spectral masking (circular convolution)."""
    if not 0 <= rolloff <= 1:
        raise DomainError("rolloff must lie in [0, 1]")
    if sps < 1:
        raise DomainError("sps must be >= 1")
    x = frame.samples
    if len(x) < 1:
        raise DomainError("frame is empty")
    y = np.fft.ifft(np.fft.fft(x) * _rrc_spectrum(len(x), float(rolloff), int(sps)))
    return ComplexFrame(y, frame.sample_rate_hz)


@lru_cache(maxsize=32)
def _rotation(n: int, f_hz: float, sample_rate_hz: float, sign: int = 1) -> np.ndarray:
    cycles = np.mod(np.arange(n) * (f_hz / sample_rate_hz), 1.0)
    rot = np.exp(sign * 2j * np.pi * cycles)
    rot.setflags(write=False)
    return rot


def upconvert(frame: ComplexFrame, f_shift_hz: float) -> ComplexFrame:
    if abs(f_shift_hz) >= frame.sample_rate_hz / 2:
        raise DomainError("frequency shift outside the Nyquist band")
    if f_shift_hz == 0:
        return frame
    rot = _rotation(len(frame), f_shift_hz, frame.sample_rate_hz)
    return ComplexFrame(frame.samples * rot, frame.sample_rate_hz)


def pilot_tone(n: int, pilot: PilotSpec, sample_rate_hz: float) -> np.ndarray:
    return pilot.amplitude * _rotation(n, pilot.frequency_hz, sample_rate_hz)


def add_pilot(frame: ComplexFrame, pilot: PilotSpec) -> ComplexFrame:
    if abs(pilot.frequency_hz) >= frame.sample_rate_hz / 2:
        raise DomainError("pilot frequency outside the Nyquist band")
    if pilot.amplitude == 0:
        return frame
    tone = pilot_tone(len(frame), pilot, frame.sample_rate_hz)
    return ComplexFrame(frame.samples + tone, frame.sample_rate_hz)


def pilot_amplitude_for_snr(pilot_snr_db: float, noise_variance_per_quadrature: float) -> float:
    """Tone amplitude A with A**2 / (2 sigma**2) equal to the requested SNR.

    The SNR reference is the total shot-noise power of one full-rate complex
    sample. This is the only place the convention is encoded.
    """
    if not noise_variance_per_quadrature > 0:
        raise DomainError("noise variance must be > 0")
    return math.sqrt(2 * noise_variance_per_quadrature * 10 ** (pilot_snr_db / 10))


def transmit(symbols: SymbolFrame, sps: int, rolloff: float, carrier_hz: float,
             pilot: PilotSpec | None = None) -> ComplexFrame:
    """Full transmit chain: upsample, shape, upconvert, then add the pilot."""
    frame = upconvert(rrc_filter(upsample(symbols, sps), rolloff, sps), carrier_hz)
    if pilot is not None:
        frame = add_pilot(frame, pilot)
    return frame
