"""Shot-noise calibration, excess noise and residual phase error."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import add_shot_noise
from .core import (
    ComplexFrame,
    ContractError,
    DomainError,
    ExperimentConfig,
    PhaseTrajectory,
    SymbolFrame,
    derive_seed,
)
from .cpe import PhaseEstimate, wrap
from .rx import receive


@dataclass(frozen=True)
class ExcessNoiseRecord:
    x: float
    y: float
    z: float
    transmittance_t: float
    excess_noise_xi: float
    pilot_snr_db: float
    method: str
    seed: int
    repetition: int = 0
    failed: bool = False


def reference_sigma2(config: ExperimentConfig) -> float:
    """Shot-noise variance that defines 1 SNU (the configured one unless disabled)."""
    return config.shot_noise_sigma2 if config.shot_noise_sigma2 > 0 else 1.0


def vacuum_level(config: ExperimentConfig) -> float:
    """Receiver shot noise in SNU: 1 normally, 0 when shot noise is switched off."""
    return config.shot_noise_sigma2 / reference_sigma2(config)


def snu_calibrate(config: ExperimentConfig, seed: int | None = None) -> float:
    """Power scale that brings shot noise at the receiver output to 1 SNU.

    Pushes ``config.calibration_frames`` noise-only frames (no signal, pilot or
    phase noise) through :func:`rx.receive` and inverts the pooled
    per-quadrature variance. Cached per receiver-relevant configuration.
    With shot noise switched off there is nothing to normalise and the scale
    is 1.
    """
    if config.shot_noise_sigma2 == 0:
        return 1.0
    seed = config.rng_seed if seed is None else seed
    key = (config.n_symbols, config.symbol_rate_hz, config.sample_rate_hz, config.rrc_rolloff,
           config.carrier_hz, reference_sigma2(config), config.calibration_frames,
           config.guard_symbols, int(seed))
    return _calibrate_cached(key)


@lru_cache(maxsize=64)
def _calibrate_cached(key) -> float:
    n_symbols, symbol_rate, sample_rate, rolloff, carrier, sigma2, frames, guard, seed = key
    cfg = ExperimentConfig(n_symbols=n_symbols, symbol_rate_hz=symbol_rate,
                           sample_rate_hz=sample_rate, rrc_rolloff=rolloff,
                           carrier_hz=carrier, guard_symbols=guard)
    n = cfg.n_samples
    zero = PhaseEstimate(np.zeros(n), "none")
    total = 0.0
    count = 0
    for f in range(frames):
        noise = add_shot_noise(derive_seed(seed, f, "calibration"),
                               ComplexFrame(np.zeros(n), sample_rate), sigma2)
        sym = receive(noise, cfg, zero)
        total += float(np.sum(sym.i**2) + np.sum(sym.q**2))
        count += 2 * len(sym)
    return count / total


def second_moments(alice: SymbolFrame, bob: SymbolFrame):
    """Block means of (I^2+Q^2)/2 for each party and of (I_A I_B + Q_A Q_B)/2."""
    if len(alice) != len(bob):
        raise ContractError(f"alice has {len(alice)} symbols, bob has {len(bob)}")
    if len(alice) < 2:
        raise ContractError("need at least two symbols")
    x = float(np.mean(alice.i**2 + alice.q**2) / 2)
    y = float(np.mean(bob.i**2 + bob.q**2) / 2)
    z = float(np.mean(alice.i * bob.i + alice.q * bob.q) / 2)
    return x, y, z


def excess_noise(x: float, y: float, z: float, vacuum: float = 1.0):
    """Return ``(T, xi)`` with T = (z/x)**2 and xi = y - vacuum - T x.

    ``vacuum`` is the shot-noise floor in SNU; it is 1 except in noiseless
    loopback checks.
    """
    if not x > 0:
        raise DomainError("x must be > 0")
    t = (z / x) ** 2
    return t, y - vacuum - t * x


def phase_mse(truth: PhaseTrajectory, estimate: PhaseEstimate, guard: int = 0) -> float:
    """Mean squared wrapped residual over samples ``guard .. n - guard``."""
    if len(truth) != len(estimate):
        raise ContractError(f"truth has {len(truth)} samples, estimate has {len(estimate)}")
    resid = wrap(truth.theta - estimate.theta_hat)
    if guard:
        resid = resid[guard:-guard]
    return float(np.mean(resid**2))
