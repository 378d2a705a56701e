"""Pilot-aided carrier-phase estimation for Gaussian-modulated CV-QKD.

Simulates the pilot-assisted transmitter, a Wiener phase-noise and
shot-noise channel, and compares an argument-based phase estimator with an
unscented Kalman filter through excess noise and residual phase error.
"""

from .core import (
    ComplexFrame,
    ConfigError,
    ContractError,
    DomainError,
    EstimatorError,
    ExperimentConfig,
    PhaseTrajectory,
    SymbolFrame,
    UkfParams,
    derive_seed,
    gaussian_stream,
)
from .cpe import PhaseEstimate, UkfState, argument_cpe, bandpass_pilot, ukf_cpe
from .harness import ResultTable, SweepSpec, emit_results, read_results, run_single, run_sweep
from .metrics import ExcessNoiseRecord, excess_noise, phase_mse, second_moments, snu_calibrate

__version__ = "0.1.0"
