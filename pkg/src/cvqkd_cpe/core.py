"""Shared containers, configuration and the random-number contract.

All randomness in the package goes through :func:`derive_seed` and
:func:`gaussian_stream`. Normals are drawn with a Box-Muller transform of
uniform doubles from ``numpy.random.PCG64`` so that streams stay bit-exact
independently of NumPy's choice of normal sampler.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

GENERATOR_NAME = "PCG64+BoxMuller"
GUARD_SYMBOLS = 256
CPE_METHODS = ("argument", "ukf")


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class ContractError(ValueError):
    """Inputs are individually valid but mutually inconsistent (e.g. lengths)."""


class ConfigError(ValueError):
    """An experiment configuration violates one of its invariants."""


class EstimatorError(RuntimeError):
    """The Kalman filter lost positive definiteness and had to abort."""


@dataclass(frozen=True)
class ComplexFrame:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.complex128))
        if self.sample_rate_hz <= 0:
            raise DomainError("sample_rate_hz must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class SymbolFrame:
    i: np.ndarray
    q: np.ndarray
    symbol_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "i", np.asarray(self.i, dtype=np.float64))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64))
        if self.i.shape != self.q.shape:
            raise ContractError("i and q must have equal length")
        if self.symbol_rate_hz <= 0:
            raise DomainError("symbol_rate_hz must be positive")

    def __len__(self):
        return len(self.i)

    @property
    def complex(self) -> np.ndarray:
        return self.i + 1j * self.q

    def trim(self, guard: int) -> "SymbolFrame":
        """Drop ``guard`` symbols from each end."""
        if guard == 0:
            return self
        return SymbolFrame(self.i[guard:-guard], self.q[guard:-guard], self.symbol_rate_hz)


@dataclass(frozen=True)
class PhaseTrajectory:
    theta: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64))

    def __len__(self):
        return len(self.theta)


@dataclass(frozen=True)
class UkfParams:
    """Unscented Kalman filter tuning.

    ``process_noise_q`` and ``measurement_noise_r`` left as ``None`` are
    resolved from the experiment: q from the configured laser linewidth and
    r from the shot-noise variance falling inside the pilot filter band.
    ``initial_phase`` of ``None`` warm-starts from the argument estimate.
    """

    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0
    process_noise_q: Optional[float] = None
    measurement_noise_r: Optional[float] = None
    initial_phase: Optional[float] = None
    initial_variance_p0: float = 0.01
    amplitude_from_rms: bool = False

    def validate(self, n: int = 1) -> None:
        lam = self.alpha**2 * (n + self.kappa) - n
        if not n + lam > 0:
            raise ConfigError(f"unscented scaling gives n + lambda = {n + lam} <= 0")
        if self.process_noise_q is not None and self.process_noise_q < 0:
            raise ConfigError("process_noise_q must be >= 0")
        if self.measurement_noise_r is not None and not self.measurement_noise_r > 0:
            raise ConfigError("measurement_noise_r must be > 0")
        if not self.initial_variance_p0 > 0:
            raise ConfigError("initial_variance_p0 must be > 0")


@dataclass(frozen=True)
class ExperimentConfig:
    n_symbols: int = 2**15
    symbol_rate_hz: float = 50e6
    sample_rate_hz: float = 1e9
    rrc_rolloff: float = 0.001
    carrier_hz: float = 250e6
    pilot_offset_hz: float = 50e6
    modulation_variance_snu: float = 2.0
    linewidth_hz: float = 2e3
    pilot_snr_db: float = 10.0
    channel_transmittance: float = 1.0
    repetitions: int = 310
    rng_seed: int = 1
    cpe_method: str = "both"
    pilot_filter_bandwidth_hz: float = 10e6
    shot_noise_sigma2: float = 1.0
    pilot_enabled: bool = True
    compensate_before_filter: bool = False
    calibration_frames: int = 64
    guard_symbols: int = GUARD_SYMBOLS
    ukf: UkfParams = field(default_factory=UkfParams)

    @property
    def sps(self) -> int:
        return int(round(self.sample_rate_hz / self.symbol_rate_hz))

    @property
    def n_samples(self) -> int:
        return self.n_symbols * self.sps

    @property
    def pilot_frequency_hz(self) -> float:
        return self.carrier_hz + self.pilot_offset_hz

    @property
    def methods(self) -> tuple:
        return CPE_METHODS if self.cpe_method == "both" else (self.cpe_method,)

    @property
    def wiener_step_variance(self) -> float:
        return 2 * math.pi * self.linewidth_hz / self.sample_rate_hz

    def resolved_ukf(self) -> UkfParams:
        """UKF parameters with the experiment-dependent defaults filled in."""
        ukf = self.ukf
        q = ukf.process_noise_q
        if q is None:
            q = self.wiener_step_variance
        r = ukf.measurement_noise_r
        if r is None:
            r = self.shot_noise_sigma2 * self.pilot_filter_bandwidth_hz / self.sample_rate_hz
            if r <= 0:
                r = 1e-12
        return replace(ukf, process_noise_q=q, measurement_noise_r=r)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)

    def validate(self) -> "ExperimentConfig":
        if self.n_symbols < 1:
            raise ConfigError("n_symbols must be >= 1")
        if self.symbol_rate_hz <= 0 or self.sample_rate_hz <= 0:
            raise ConfigError("rates must be positive")
        ratio = self.sample_rate_hz / self.symbol_rate_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("sample_rate_hz must be an integer multiple of symbol_rate_hz")
        if not 0 <= self.rrc_rolloff <= 1:
            raise ConfigError("rrc_rolloff must lie in [0, 1]")
        nyquist = self.sample_rate_hz / 2
        half_bw = self.pilot_filter_bandwidth_hz / 2
        if self.pilot_filter_bandwidth_hz <= 0:
            raise ConfigError("pilot_filter_bandwidth_hz must be positive")
        if abs(self.pilot_frequency_hz) + half_bw >= nyquist:
            raise ConfigError("pilot filter band is not inside the Nyquist band")
        sig_half = (1 + self.rrc_rolloff) * self.symbol_rate_hz / 2
        sig_lo, sig_hi = self.carrier_hz - sig_half, self.carrier_hz + sig_half
        pil_lo, pil_hi = self.pilot_frequency_hz - half_bw, self.pilot_frequency_hz + half_bw
        if sig_lo < pil_hi and pil_lo < sig_hi:
            raise ConfigError("signal band and pilot filter band overlap")
        if self.modulation_variance_snu < 0 or self.linewidth_hz < 0 or self.shot_noise_sigma2 < 0:
            raise ConfigError("variances and linewidth must be >= 0")
        if not 0 <= self.channel_transmittance <= 1:
            raise ConfigError("channel_transmittance must lie in [0, 1]")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.cpe_method not in CPE_METHODS + ("both",):
            raise ConfigError(f"unknown cpe_method {self.cpe_method!r}")
        if self.calibration_frames < 1:
            raise ConfigError("calibration_frames must be >= 1")
        if self.guard_symbols < 0 or 2 * self.guard_symbols >= self.n_symbols:
            raise ConfigError("guard_symbols leaves no symbols to score")
        self.ukf.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        ukf = data.pop("ukf", None)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if ukf is not None:
            cfg = replace(cfg, ukf=ukf if isinstance(ukf, UkfParams) else UkfParams(**ukf))
        return cfg


def derive_seed(master_seed: int, repetition_index: int, stream_label: str) -> int:
    """Map (master seed, repetition, noise source) to an independent 64-bit seed."""
    key = f"{int(master_seed)}/{int(repetition_index)}/{stream_label}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def gaussian_stream(seed: int, n: int, variance: float) -> np.ndarray:
    """Return ``n`` i.i.d. zero-mean normal draws of the given variance.

    Box-Muller on PCG64 uniforms; the output for a given (seed, n, variance)
    is bit-identical across runs and platforms.
    """
    if n < 0:
        raise DomainError("n must be >= 0")
    if variance < 0:
        raise DomainError("variance must be >= 0")
    if n == 0:
        return np.zeros(0)
    rng = np.random.Generator(np.random.PCG64(seed))
    m = (n + 1) // 2
    u = rng.random(2 * m)
    radius = np.sqrt(-2.0 * np.log1p(-u[:m]))
    angle = 2 * np.pi * u[m:]
    out = np.empty(2 * m)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:n] * math.sqrt(variance)
